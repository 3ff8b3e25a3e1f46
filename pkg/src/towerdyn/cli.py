"""Command-line entry point: plain key-value configs in, JSON/CSV out.

Commands: analyze-map, build-tower, alpha, horizontality, density, response,
validate, oracle, susceptibility.  Exit codes: 0 success, 1 validation
failure (bad config/arguments), 2 numerical-convergence failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import bench
from .unimodal import make_quadratic, make_family, profile_from_spec, validate_s_unimodal
from .recurrence import critical_orbit, analyze_map, estimate_ce
from .tower import build_tower, bound_free_times, fall_intervals
from .transfer import build_operator, fixed_point
from .tce import (alpha_resummed, horizontality_defect, horizontalize,
                  divergence_probe)
from .response import (linear_response, response_fd, response_oracle_conjugation,
                       ruelle_identity_check, susceptibility_partial, integrate_density)
from .oracle import ulam_matrix, birkhoff_average


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _float_list(tok):
    return [float(t) for t in tok.split(",") if t.strip()]


#: key -> (parser, default, description)
SCHEMA = {
    "family.a": (float, 2.0, "quadratic family parameter in (1, 2]"),
    "deformation.kind": (str, "conjugation", "conjugation | additive"),
    "deformation.g": (str, "cubic_odd", "conjugation profile"),
    "deformation.X": (str, "xsq_minus_one", "additive profile"),
    "deformation.bump_center": (str, "c3", "horizontalizer bump center (number or c<k>)"),
    "deformation.bump_width": (float, 0.05, "horizontalizer bump width"),
    "deformation.t_range": (float, 0.05, "admitted |t|"),
    "orbit.N": (int, 9000, "critical orbit horizon"),
    "tower.delta": (float, 0.2, "central interval half-width"),
    "tower.beta1": (float, None, "outer window exponent (default from gamma)"),
    "tower.beta2": (float, None, "inner window exponent (default from gamma)"),
    "tower.gamma": (float, None, "recurrence exponent (default from the map)"),
    "tower.M_max": (int, 46, "deepest constructed level"),
    "tower.b_choice": (str, "beta1", "beta1 | beta2 window choice"),
    "operator.lambda": (float, None, "level weight (default from the admissible window)"),
    "operator.M": (int, 20, "truncation level"),
    "operator.grid0": (int, 4096, "ground grid size"),
    "operator.tol": (float, 1e-10, "fixed point tolerance"),
    "alpha.x": (float, 0.3, "evaluation point"),
    "alpha.horizon": (int, 4000, "itinerary horizon"),
    "alpha.scan_n": (int, 200, "scan grid size"),
    "response.observable": (str, "poly:0,0,1", "observable profile (A)"),
    "response.t_step": (float, 1e-2, "finite-difference step"),
    "response.n_orbits": (int, 64, "finite-difference orbits"),
    "response.n_iter": (int, 200000, "finite-difference iterations per orbit"),
    "response.burn_in": (int, 1000, "finite-difference burn-in"),
    "oracle.n_bins": (int, 2048, "transition-matrix bins"),
    "oracle.samples_per_bin": (int, 64, "stratified samples per bin"),
    "probe.interval": (_float_list, [0.1, 0.2], "divergence probe interval"),
    "probe.depth": (int, 5, "certified indices requested"),
    "susceptibility.z": (_float_list, [0.5, 0.9, 0.99], "evaluation points"),
    "susceptibility.N": (int, 60, "partial-sum order"),
    "seed": (int, 1234, "base seed"),
    "output.dir": (str, ".", "artifact directory"),
}


class ConfigError(Exception):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class RunConfig:
    values: dict
    defaulted: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.values[key]


def parse_config(text):
    """Parse `key = value` lines; returns RunConfig or raises ConfigError
    carrying every problem found (unknown keys, bad types, bad ranges)."""
    errors = []
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        parser = SCHEMA[key][0]
        try:
            raw[key] = parser(val)
        except ValueError:
            errors.append(f"line {lineno}: cannot parse value for {key!r}: {val!r}")

    values = {}
    defaulted = []
    for key, (_parser, default, _desc) in SCHEMA.items():
        if key in raw:
            values[key] = raw[key]
        else:
            values[key] = default
            defaulted.append(key)

    # range constraints (all violations reported together)
    a = values["family.a"]
    if not (isinstance(a, float) and 1.0 < a <= 2.0):
        errors.append("family.a: must satisfy 1 < a <= 2")
    if not 0.0 < values["tower.delta"] < 1.0:
        errors.append("tower.delta: must lie in (0, 1)")
    if values["deformation.kind"] not in ("conjugation", "additive"):
        errors.append("deformation.kind: must be 'conjugation' or 'additive'")
    if values["tower.b_choice"] not in ("beta1", "beta2"):
        errors.append("tower.b_choice: must be 'beta1' or 'beta2'")
    if values["operator.grid0"] < 256:
        errors.append("operator.grid0: must be at least 256")
    if values["oracle.n_bins"] < 16:
        errors.append("oracle.n_bins: must be at least 16")
    lam = values["operator.lambda"]
    if lam is not None and isinstance(a, float) and 1.0 < a <= 2.0:
        orb = critical_orbit(make_quadratic(a), 500)
        lam_c, _ = estimate_ce(orb, 1)
        if not 1.0 < lam < math.sqrt(lam_c):
            errors.append(
                f"operator.lambda: must satisfy 1 < lambda < sqrt(lambda_c) = {math.sqrt(lam_c):.4f}")
    if errors:
        raise ConfigError(errors)
    return RunConfig(values=values, defaulted=defaulted)


# ---------------------------------------------------------------------------
# shared construction helpers
# ---------------------------------------------------------------------------

def _setup_map(cfg):
    return make_quadratic(cfg["family.a"])


def _setup_tower(cfg, m=None, b_choice=None, deep=False):
    m = m or _setup_map(cfg)
    orbit = critical_orbit(m, cfg["orbit.N"])
    M_max = cfg["tower.M_max"] if not deep else max(cfg["tower.M_max"], 120)
    par = bench.tower_params_for_operator(
        m, orbit, delta=cfg["tower.delta"], M_max=min(M_max, orbit.N - 2),
        gamma=cfg["tower.gamma"])
    if cfg["tower.beta1"] is not None:
        par.beta1 = cfg["tower.beta1"]
    if cfg["tower.beta2"] is not None:
        par.beta2 = cfg["tower.beta2"]
    par.b_choice = b_choice or cfg["tower.b_choice"]
    par.__post_init__()  # re-validate after the overrides
    return m, orbit, build_tower(m, orbit, par)


def _setup_operator(cfg):
    m, orbit, tower = _setup_tower(cfg, b_choice="beta1")
    ctx = build_operator(m, orbit, tower, lam=cfg["operator.lambda"],
                         M=cfg["operator.M"], n0=cfg["operator.grid0"])
    return m, orbit, tower, ctx


def _field_profiles(cfg, m, orbit):
    g = profile_from_spec(cfg["deformation.g"])
    X = profile_from_spec(cfg["deformation.X"])
    bc = cfg["deformation.bump_center"]
    if isinstance(bc, str) and bc.startswith("c"):
        center = float(orbit.c[int(bc[1:])])
    else:
        center = float(bc)
    from .unimodal import BumpProfile
    bump = BumpProfile(center=center, width=cfg["deformation.bump_width"])
    return g, X, bump


def _velocity(m, X):
    return lambda x: float(X(m.f(x)))


def _observable(cfg):
    A = profile_from_spec(cfg["response.observable"])
    return (lambda x: np.asarray(A(x))), (lambda x: np.asarray(A.d1(x)))


def _out_path(cfg, name):
    root = os.environ.get("TOWERDYN_OUTDIR", cfg["output.dir"])
    os.makedirs(root, exist_ok=True)
    return os.path.join(root, name)


def _write_csv(path, header, columns):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                              for v in row) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return float(o)


def _emit(obj, args):
    text = json.dumps(obj, indent=2, default=_json_default)
    if getattr(args, "output", None):
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_analyze_map(cfg, args):
    m = _setup_map(cfg)
    rep, orbit = analyze_map(m, N=min(cfg["orbit.N"], 4000))
    artifacts = []
    if args.csv:
        ks = np.arange(1, orbit.N + 1)
        path = _write_csv(_out_path(cfg, "orbit.csv"),
                          ["k", "c_k", "logD_k", "dist_k"],
                          [ks.tolist(), orbit.c[1:].tolist(),
                           orbit.logD.tolist(), orbit.dist.tolist()])
        artifacts.append(path)
    out = rep.as_dict()
    out["validation"] = validate_s_unimodal(m, 4001).as_dict()
    out["artifacts"] = artifacts
    _emit(out, args)
    return 0


def cmd_build_tower(cfg, args):
    m, orbit, tw = _setup_tower(cfg)
    out = {
        "params": {"delta": tw.params.delta, "beta1": tw.params.beta1,
                   "beta2": tw.params.beta2, "gamma": tw.params.gamma,
                   "M_max": tw.params.M_max, "b_choice": tw.params.b_choice},
        "H_delta": tw.H_delta,
        "levels": [{"k": k, "interval": list(tw.level_interval(k))}
                   for k in range(1, min(tw.params.M_max, 25) + 1)],
    }
    falls = {}
    top = min(tw.params.M_max, tw.H_delta + args.fall_levels)
    for j in range(tw.H_delta, top + 1):
        ip, im = fall_intervals(tw, j, n_scan=1500)
        falls[str(j)] = {"plus": [list(p) for p in ip], "minus": [list(p) for p in im]}
    out["fall_intervals"] = falls
    if args.itinerary is not None:
        sched = bound_free_times(tw, args.itinerary, cfg["alpha.horizon"])
        out["itinerary"] = {"x": args.itinerary,
                            "pairs": [[t, s] for t, s in sched.pairs()],
                            "hit_critical": sched.hit_critical,
                            "unresolved": sched.unresolved}
    _emit(out, args)
    return 0


def cmd_alpha(cfg, args):
    m, orbit, tw = _setup_tower(cfg, b_choice="beta2", deep=True)
    g, X, bump = _field_profiles(cfg, m, orbit)
    if cfg["deformation.kind"] == "conjugation":
        v = lambda x: float(g(m.f(x))) - float(m.df(x)) * float(g(x))
    else:
        v = _velocity(m, X)
    artifacts = []
    if args.scan:
        xs = np.linspace(-0.999, 0.999, cfg["alpha.scan_n"])
        vals = [alpha_resummed(tw, v, float(x), horizon=cfg["alpha.horizon"]).value
                for x in xs]
        path = _write_csv(_out_path(cfg, "alpha_scan.csv"), ["x", "alpha"],
                          [xs.tolist(), vals])
        artifacts.append(path)
        _emit({"scan": path, "n": len(xs), "artifacts": artifacts}, args)
        return 0
    ev = alpha_resummed(tw, v, cfg["alpha.x"], horizon=cfg["alpha.horizon"])
    _emit({"x": cfg["alpha.x"], "alpha": ev.value, "mode": ev.mode,
           "tail_bound": ev.tail_bound, "n_groups": ev.n_groups,
           "group_ratio": ev.group_ratio}, args)
    return 0 if ev.decayed or ev.mode != "resummed" else 2


def cmd_horizontality(cfg, args):
    m = _setup_map(cfg)
    orbit = critical_orbit(m, 2000)
    g, X, bump = _field_profiles(cfg, m, orbit)
    v = _velocity(m, X)
    defect, tail = horizontality_defect(m, v, N=400)
    Xh, kappa, resid = horizontalize(m, X, bump, N=400)
    out = {"defect": defect, "tail_bound": tail, "kappa": kappa,
           "residual_defect": resid,
           "corrected_X": f"{cfg['deformation.X']} - {kappa:.17g} * bump",
           "bump": {"center": bump.center, "width": bump.width}}
    if hasattr(X, "coeffs"):
        out["X_coeffs"] = list(map(float, X.coeffs))
    _emit(out, args)
    return 0


def cmd_density(cfg, args):
    m, orbit, tower, ctx = _setup_operator(cfg)
    fp = fixed_point(ctx, tol=cfg["operator.tol"], max_iter=8000)
    if not fp.converged:
        _emit({"error": "fixed point did not converge", "iterations": fp.iterations}, args)
        return 2
    xs = np.linspace(-0.999, 0.999, args.n_grid)
    dens = ctx.project_density(fp.phi, xs)
    path = _write_csv(_out_path(cfg, "density.csv"), ["x", "phi"],
                      [xs.tolist(), dens.tolist()])
    artifacts = [path]
    if args.dump_tower_function:
        for k in range(ctx.M + 1):
            artifacts.append(_write_csv(
                _out_path(cfg, f"tower_level_{k:02d}.csv"), ["x", "psi"],
                [ctx.grids[k].tolist(), fp.phi.values[k].tolist()]))
    _emit({"kappa": fp.kappa, "gap": fp.gap_estimate, "lambda": ctx.lam,
           "M": ctx.M, "grid_sizes": [len(g) for g in ctx.grids],
           "iterations": fp.iterations, "clipped": fp.clipped,
           "mass": integrate_density(ctx, fp.phi),
           "artifacts": artifacts}, args)
    return 0


def cmd_response(cfg, args):
    m, orbit, tower, ctx = _setup_operator(cfg)
    g, X, bump = _field_profiles(cfg, m, orbit)
    A, Ap = _observable(cfg)
    if cfg["deformation.kind"] == "conjugation":
        fam = make_family(m, "conjugation", g, t_range=cfg["deformation.t_range"])
        fp = fixed_point(ctx, tol=cfg["operator.tol"], max_iter=8000)
        dens = lambda x: ctx.project_density(fp.phi, x)
        oracle = response_oracle_conjugation(fam, dens, Ap)
        fd, se = response_fd(fam, A, t_step=cfg["response.t_step"],
                             n_orbits=cfg["response.n_orbits"],
                             n_iter=cfg["response.n_iter"],
                             burn_in=cfg["response.burn_in"], seed=cfg["seed"])
        _emit({"kind": "conjugation", "pushforward_oracle": oracle,
               "fd_estimate": fd, "fd_stderr": se}, args)
        return 0
    Xh, kappa, resid = horizontalize(m, X, bump, N=400)
    fp = fixed_point(ctx, tol=cfg["operator.tol"], max_iter=8000)
    try:
        rep = linear_response(ctx, fp.phi, Xh, A, Ap)
    except RuntimeError as exc:
        _emit({"error": str(exc)}, args)
        return 2
    fam = make_family(m, "additive", Xh, t_range=cfg["deformation.t_range"])
    fd, se = response_fd(fam, A, t_step=cfg["response.t_step"],
                         n_orbits=cfg["response.n_orbits"],
                         n_iter=cfg["response.n_iter"],
                         burn_in=cfg["response.burn_in"], seed=cfg["seed"])
    lhs, rhs = ruelle_identity_check(ctx, fp.phi, Xh, A, Ap)
    rep.fd_estimate, rep.fd_stderr = fd, se
    rep.ruelle_lhs, rep.ruelle_rhs = lhs, rhs
    rep.diagnostics["horizontalizer_kappa"] = kappa
    rep.diagnostics["residual_defect"] = resid
    _emit(rep.as_dict(), args)
    return 0


def cmd_probe(cfg, args):
    m = _setup_map(cfg)
    orbit = critical_orbit(m, 200)
    g, X, bump = _field_profiles(cfg, m, orbit)
    v = _velocity(m, X)
    lo, hi = cfg["probe.interval"]
    try:
        w = divergence_probe(m, v, (lo, hi), depth=cfg["probe.depth"])
    except RuntimeError as exc:
        _emit({"error": str(exc)}, args)
        return 2
    _emit({"witness": w.x, "witness_full": w.x_str, "indices": w.indices,
           "magnitudes": w.magnitudes, "dps": w.dps}, args)
    return 0


def cmd_oracle(cfg, args):
    m = _setup_map(cfg)
    if args.what == "density":
        um = ulam_matrix(m, n_bins=cfg["oracle.n_bins"],
                         samples_per_bin=cfg["oracle.samples_per_bin"])
        xs = 0.5 * (um.edges[1:] + um.edges[:-1])
        path = _write_csv(_out_path(cfg, "oracle_density.csv"), ["x", "phi"],
                          [xs.tolist(), um.density_values.tolist()])
        _emit({"n_bins": um.n_bins, "mass": float(um.stationary.sum()),
               "artifacts": [path]}, args)
        return 0
    A, _ = _observable(cfg)
    mean, se = birkhoff_average(m, A, n_orbits=cfg["response.n_orbits"],
                                n_iter=cfg["response.n_iter"],
                                burn_in=cfg["response.burn_in"], seed=cfg["seed"])
    _emit({"mean": mean, "stderr": se}, args)
    return 0


def cmd_susceptibility(cfg, args):
    m, orbit, tower, ctx = _setup_operator(cfg)
    g, X, bump = _field_profiles(cfg, m, orbit)
    Xh, _, _ = horizontalize(m, X, bump, N=400)
    A, Ap = _observable(cfg)
    fp = fixed_point(ctx, tol=cfg["operator.tol"], max_iter=8000)
    dens = lambda x: ctx.project_density(fp.phi, x)
    zs = args.z if args.z else cfg["susceptibility.z"]
    N = cfg["susceptibility.N"]
    cols_z, cols_n, cols_s = [], [], []
    for z in zs:
        S = susceptibility_partial(m, dens, Xh, Ap, z=z, N=N)
        cols_z.extend([z] * len(S))
        cols_n.extend(range(len(S)))
        cols_s.extend(S.tolist())
    path = _write_csv(_out_path(cfg, "susceptibility.csv"), ["z", "N", "S_N"],
                      [cols_z, cols_n, cols_s])
    _emit({"z": list(zs), "N": N, "artifacts": [path]}, args)
    return 0


def cmd_validate(cfg, args):
    from .acceptance import run_all
    select = set(args.only) if args.only else None
    recs = run_all(select=select, verbose=True)
    ok = all(r.passed for r in recs)
    print(f"{'ALL PASS' if ok else 'FAILURES PRESENT'} "
          f"({sum(r.passed for r in recs)}/{len(recs)})")
    return 0 if ok else 2


# ---------------------------------------------------------------------------

def main(argv=None):
    ap = argparse.ArgumentParser(prog="towerdyn",
                                 description=__doc__.splitlines()[0])
    ap.add_argument("-c", "--config", help="key = value config file")
    ap.add_argument("-o", "--output", help="write the JSON report here instead of stdout")
    sub = ap.add_subparsers(dest="command")

    sub.add_parser("analyze-map").add_argument("--csv", action="store_true")
    p = sub.add_parser("build-tower")
    p.add_argument("--itinerary", type=float, default=None)
    p.add_argument("--fall-levels", type=int, default=8)
    p = sub.add_parser("alpha")
    p.add_argument("--scan", action="store_true")
    sub.add_parser("horizontality")
    p = sub.add_parser("density")
    p.add_argument("--n-grid", type=int, default=2001)
    p.add_argument("--dump-tower-function", action="store_true")
    sub.add_parser("response")
    sub.add_parser("probe")
    p = sub.add_parser("oracle")
    p.add_argument("what", choices=["density", "average"])
    p = sub.add_parser("susceptibility")
    p.add_argument("--z", type=float, nargs="*", default=None)
    p = sub.add_parser("validate")
    p.add_argument("--only", type=int, nargs="*", default=None)

    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on unknown commands; bad usage is a
        # validation failure in this tool's convention
        return 1 if exc.code not in (0, None) else 0
    if args.command is None:
        ap.print_usage()
        return 1
    try:
        text = ""
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        cfg = parse_config(text)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    handlers = {
        "analyze-map": cmd_analyze_map, "build-tower": cmd_build_tower,
        "alpha": cmd_alpha, "horizontality": cmd_horizontality,
        "density": cmd_density, "response": cmd_response, "probe": cmd_probe,
        "oracle": cmd_oracle, "susceptibility": cmd_susceptibility,
        "validate": cmd_validate,
    }
    try:
        return handlers[args.command](cfg, args)
    except (ValueError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
