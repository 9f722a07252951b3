"""Command line entry point: ``gauge-xray <command> --config scenario.json``.

Commands ``transform``, ``scatter``, ``verify``, ``holo``, ``kernel`` and
``rigidity`` each write ``<command>_report.json`` plus CSV data and a
gnuplot script into the output directory; ``emit_plots`` regenerates the
scripts for an existing directory.  Exit status is 0 on success, 2 for
configuration errors and 3 for numerical failures or violated tolerances;
the reason is written to ``<command>_failure.json`` and stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import plots
from .config import ConfigError, ScenarioConfig

COMMANDS = ("transform", "scatter", "verify", "holo", "kernel", "rigidity")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ToleranceFailure(RuntimeError):
    def __init__(self, failures: dict):
        super().__init__("tolerances violated: " + ", ".join(sorted(failures)))
        self.failures = failures


# ---------------------------------------------------------------------------
# serialisation helpers
# ---------------------------------------------------------------------------

def jsonable(v):
    """Plain JSON types; non-finite floats become strings."""
    if dataclasses.is_dataclass(v) and not isinstance(v, type):
        if hasattr(v, "to_dict"):
            return jsonable(v.to_dict())
        return jsonable(dataclasses.asdict(v))
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, (complex, np.complexfloating)):
        return {"re": jsonable(float(v.real)), "im": jsonable(float(v.imag))}
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    return v


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def csv_text(header, rows) -> str:
    body = "\n".join(",".join(f"{x:.17g}" if isinstance(x, float) else str(x) for x in r) for r in rows)
    return ",".join(header) + "\n" + body + ("\n" if rows else "")


def _check(values: dict, tols: dict, below=True) -> dict:
    """Entries of ``values`` that do not satisfy ``value < tol`` (or ``>=`` when ``below`` is False)."""
    bad = {}
    for k, v in values.items():
        t = tols[k]
        ok = (v < t) if below else (v >= t)
        if not ok or (isinstance(v, float) and math.isnan(v)):
            bad[k] = {"value": v, "tolerance": t}
    return bad


def _rng(seed):
    """Counter-based generator used for every randomized input."""
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _constant_attenuation(pair):
    """``Phi`` when ``A = 0`` and ``Phi`` is constant at sample points, else None."""
    from .gauge import _test_points
    x1, x2 = _test_points()
    A1, A2, P = pair.fields(x1, x2)
    if np.max(np.abs(A1)) > 0 or np.max(np.abs(A2)) > 0:
        return None
    P = np.asarray(P) * np.ones((x1.size, pair.n, pair.n))
    if np.max(np.abs(P - P[0])) > 0:
        return None
    return P[0]


def cmd_transform(cfg: ScenarioConfig):
    from .transport import ExactSource, FunctionSource, ray_transform
    metric, pair, bg = cfg.build_metric(), cfg.build_pair(), cfg.boundary.build()
    n = pair.n
    c = complex(*cfg.transform.F)
    pw = cfg.transform.bump_power

    def f(x1, x2, th):
        env = np.maximum(1.0 - x1**2 - x2**2, 0.0) ** pw if pw else np.ones_like(x1)
        return (c * env)[:, None] * np.ones((1, n))

    data = ray_transform(pair, metric, FunctionSource(f), bg, dt=cfg.dt, check=True)
    vals = data.values.reshape(bg.size, n)
    res = {"max_abs": float(np.max(np.abs(vals))), "cross_check": data.meta["cross_check"],
           "n": n, "n_samples": bg.size}
    checks = {"cross_check": res["cross_check"]}
    P = _constant_attenuation(pair)
    if P is not None and pw == 0 and n == 1:
        k = P[0, 0]
        tau = data.meta["tau"]
        exact = c * (np.expm1(k * tau) / k if k != 0 else tau)
        res["closed_form_error"] = float(np.max(np.abs(vals[:, 0] - exact)))
        checks["closed_form"] = res["closed_form_error"]
    if cfg.transform.kernel_check:
        v = _rng(cfg.seed).standard_normal((n, 2)) @ np.array([1.0, 1j])

        def p(x1, x2):
            return ((1 - x1**2 - x2**2) ** 2)[:, None] * v

        def dp(x1, x2):
            g = -4 * (1 - x1**2 - x2**2)
            return (g * x1)[:, None] * v, (g * x2)[:, None] * v

        kd = ray_transform(pair, metric, ExactSource(pair, metric, p, dp), bg, dt=cfg.dt)
        res["kernel_property"] = float(np.max(np.abs(kd.values)))
        checks["kernel_property"] = res["kernel_property"]
    fails = _check(checks, {k: cfg.tol(k) for k in checks})
    b, mu = bg.points()
    heat = [(float(x), float(y), float(z)) for x, y, z in zip(b, mu, np.linalg.norm(vals, axis=1))]
    files = {"transform_data.csv": csv_text(["beta", "mu", "abs_I"], heat)}
    return res, files, fails


def cmd_scatter(cfg: ScenarioConfig):
    from scipy.linalg import expm
    from .transport import FunctionSource, gauge_invariance_check, scattering_data, unitarity_along_rays
    metric, pair, bg = cfg.build_metric(), cfg.build_pair(), cfg.boundary.build()
    S = scattering_data(pair, metric, bg, dt=cfg.dt)
    res = {"relation_residual": S.relation_residual, "unitarity_exit_minus": S.unitarity_minus,
           "unitarity_exit_plus": S.unitarity_plus, "unitary_pair": pair.unitary}
    checks = {"relation": S.relation_residual}
    if pair.unitary:
        u = unitarity_along_rays(pair, metric, bg, dt=cfg.dt)
        res["unitarity_along_rays"] = float(u.max())
        checks["unitarity"] = res["unitarity_along_rays"]
    P = _constant_attenuation(pair)
    if P is not None:
        exact = expm(-S.tau[:, None, None] * P[None])
        res["closed_form_error"] = float(np.max(np.abs(S.C_minus - exact)))
        checks["closed_form"] = res["closed_form_error"]
    if cfg.gauge is not None:
        Q = cfg.build_gauge()
        env = lambda x1, x2: np.maximum(1 - x1**2 - x2**2, 0.0) ** 2
        v = _rng(cfg.seed).standard_normal((pair.n, 2)) @ np.array([1.0, 1j])
        src = FunctionSource(lambda x1, x2, th: (env(x1, x2) * (1 + 0.5 * np.cos(th)))[:, None] * v)
        gi = gauge_invariance_check(pair, Q, metric, src, bg, dt=cfg.dt)
        res["gauge_invariance"] = gi
        checks["gauge_invariance"] = max(gi["transform"], gi["scattering"])
    fails = _check(checks, {k: cfg.tol(k) for k in checks})
    n = pair.n
    dev = np.linalg.norm(S.C_minus - np.eye(n), axis=(1, 2))
    rows = [(float(x), float(y), float(z)) for x, y, z in zip(S.beta, S.mu, dev)]
    return res, {"scatter_C.csv": csv_text(["beta", "mu", "abs_C_minus_minus_Id"], rows)}, fails


def cmd_verify(cfg: ScenarioConfig):
    from . import identities as I
    from .bundle import SMGrid
    metric, pair = cfg.build_metric(), cfg.build_pair()
    vc = cfg.verify
    n = pair.n
    nt = int(vc.ntheta)
    kmax = max(1, nt // 2 - 1)
    per = {}
    hs = []
    for nx in vc.resolutions:
        g = SMGrid(int(nx), nt, kmax)
        hs.append(g.h)
        u = I.test_field(g, n=n, m=vc.envelope_power, modes=(-1, 0, 1, 2), seed=cfg.seed)
        w = I.test_field(g, n=n, m=vc.envelope_power, modes=(-2, 1), seed=cfg.seed + 1)
        reps = dict(I.commutator_residuals(pair, metric, g, u))
        reps.update({"antisym_" + k: v for k, v in I.antisymmetry_residuals(pair, metric, g, u, w).items()})
        reps["pestov"] = I.pestov_residual(pair, metric, g, u)
        u0 = np.broadcast_to(u.mean(axis=2, keepdims=True), u.shape)
        reps["low_mode_energy"] = I.lemma63_check(pair, metric, g, u0)
        reps["holo_pairing"] = I.holomorphicity_pairing(pair, metric, g, u)
        if vc.riccati:
            reps["riccati"] = I.riccati_nonneg_check(pair, metric, g, u, dt=vc.riccati_dt)
        for k, r in reps.items():
            per.setdefault(k, []).append(r)
    names = list(per)
    # antisymmetry of P, Q and the energy identity need a unitary pair
    needs_unitary = {"antisym_P", "antisym_Q", "pestov", "riccati"}
    slopes, rows, fails, summary = {}, [], {}, {}
    for k in names:
        rel = [r.relative for r in per[k]]
        s = I.refinement_slope(hs, rel) if len(hs) >= 3 else None
        slopes[k] = s
        at = {int(nx): float(x) for nx, x in zip(vc.resolutions, rel)}
        summary[k] = {"relative": at, "slope": s, "reports": [r.to_dict() for r in per[k]]}
        if k in needs_unitary and not pair.unitary:
            summary[k]["checked"] = False
            continue
        ref = at.get(64, rel[-1])
        if not ref < cfg.tol("identity_relative"):
            fails[k] = {"value": ref, "tolerance": cfg.tol("identity_relative")}
        exact = max(rel) < cfg.tol("exact_floor")
        if s is not None and not exact and not s >= cfg.tol("refinement_order"):
            fails[k + "_order"] = {"value": s, "tolerance": cfg.tol("refinement_order")}
        if k == "riccati" and not all(r.extra.get("nonneg", False) for r in per[k]):
            fails["riccati_nonneg"] = {"value": False, "tolerance": True}
    for i, h in enumerate(hs):
        rows.append([float(h)] + [float(per[k][i].relative) for k in names])
    res = {"identities": summary, "slopes": slopes, "columns": names, "h": hs}
    return res, {"verify_residuals.csv": csv_text(["h"] + names, rows)}, fails


_HOLO_TESTS = {
    "gaussian_F": dict(F=lambda x1, x2: np.exp(-2 * (x1**2 + x2**2)) * (1 + x1)),
    "mixed_F_alpha": dict(F=lambda x1, x2: np.exp(-3 * (x1**2 + x2**2)) * (1 + x1 * x2),
                          alpha=(lambda x1, x2: -1j * np.cos(x2) * np.exp(-(x1**2 + x2**2)),
                                 lambda x1, x2: -1j * (x1 * x2 + 0.3))),
}


def cmd_holo(cfg: ScenarioConfig):
    from . import holo
    from .bundle import SMGrid
    from .gauge import area_primitive, spectral_radius_iF, spectral_shift_check, zero_pair
    from .identities import holomorphicity_probe
    metric, pair, bg = cfg.build_metric(), cfg.build_pair(), cfg.boundary.build()
    gc = cfg.grid
    g = SMGrid(gc.nx, gc.ntheta, gc.kmax, cfg.holo.margin)
    res, checks = {}, {}
    prim = area_primitive(metric)
    factors = {}
    for name, kw in _HOLO_TESTS.items():
        factors[name] = holo.build_integrating_factor(metric, g, bg, ridge_rel=cfg.holo.ridge_rel,
                                                      istar_bound=None, **kw)
    factors["area_form"] = holo.integrating_factor_for_form(metric, g, bg, (None, lambda a, b: prim.p(a, b)),
                                                           ridge_rel=cfg.holo.ridge_rel, istar_bound=None)
    for name, fac in factors.items():
        res[name] = {"residual": fac.residual, "wrong_mode_mass": fac.wrong_mode_mass,
                     "diagnostics": fac.diagnostics}
        checks[f"{name}.residual"] = (fac.residual, "holo_residual")
        checks[f"{name}.wrong_mode_mass"] = (fac.wrong_mode_mass, "holo_wrong_mass")
    # eigenvalues of i*F move by exactly s; definite once |s| exceeds the spectral radius
    s0 = spectral_radius_iF(pair, metric)
    res["curvature_shift"] = {"s0": s0, "s": {}}
    for s in cfg.s_values:
        e0, es = spectral_shift_check(pair, metric, float(s))
        dev = float(np.max(np.abs(es - (e0 + s))))
        definite = bool(np.all(es > 0) if s > 0 else np.all(es < 0))
        res["curvature_shift"]["s"][str(s)] = {"max_shift_error": dev, "definite": definite}
        checks[f"curvature_shift_{s}"] = (dev, "curvature_shift")
        if abs(s) > s0:
            checks[f"definite_{s}"] = (0.0 if definite else 1.0, "curvature_shift")
    spair = pair if pair.n == 1 else zero_pair(1)
    src = lambda a, b, th: np.exp(-4 * (a**2 + b**2)) * (1 + 0.5 * np.cos(th)) * (a**2 + b**2 < 1)
    res["shift"] = {}
    for s in cfg.holo.shift_s:
        sc = holo.exp_shift_check(metric, factors["area_form"], float(s), src, pair=spair, seed=cfg.seed)
        res["shift"][str(s)] = sc.relative_error
        checks[f"shift_{s}"] = (sc.relative_error, "shift")
    if cfg.holo.probe:
        def f(x1, x2, th):
            env = np.maximum(1 - x1**2 - x2**2, 0) ** 3
            return (env * (1 + x1 + 0.5 * np.cos(th) * x2))[:, None].astype(complex)
        pr = holomorphicity_probe(spair, metric, g, f, [float(s) for s in cfg.s_values])
        res["probe"] = pr.to_dict()
        for s, m in zip(pr.s, pr.wrong_mass):
            checks[f"probe_s{s}"] = (float(m), "probe_wrong_mass")
    fails = {k: {"value": v, "tolerance": cfg.tol(t)} for k, (v, t) in checks.items() if not v < cfg.tol(t)}
    rows = [(k, float(v), cfg.tol(t)) for k, (v, t) in checks.items()]
    return res, {"holo_summary.csv": csv_text(["name", "value", "tolerance"], rows)}, fails


def cmd_kernel(cfg: ScenarioConfig):
    from .inversion import assemble_forward, kernel_orthogonal_error, kernel_probe, recover_f, synthetic_data
    metric, pair, bg = cfg.build_metric(), cfg.build_pair(), cfg.boundary.build()
    kc = cfg.kernel
    op = assemble_forward(pair, metric, kc.m, bg, forms=tuple(kc.forms), dt=cfg.dt,
                          reconstruction=kc.reconstruction, max_entries=kc.max_entries)
    rep = kernel_probe(op, pair, eps=kc.eps, gap_min=kc.gap_min)
    res = {"operator": op.meta, "probe": rep.to_dict()}
    fails = {}
    if not rep.matches:
        fails["kernel_dim"] = {"value": rep.kernel_dim, "tolerance": rep.predicted_dim}
    if rep.inconclusive:
        fails["kernel_gap"] = {"value": rep.gap_ratio, "tolerance": kc.gap_min}
    if rep.predicted_dim and not rep.max_fit_residual < cfg.tol("kernel_fit"):
        fails["kernel_fit"] = {"value": rep.max_fit_residual, "tolerance": cfg.tol("kernel_fit")}
    if kc.recover:
        n = pair.n
        C = _rng(cfg.seed).standard_normal((3, 6, n, 2)) @ np.array([1.0, 1j])

        def field(c):
            def fn(x1, x2):
                env = np.maximum(0.0, 1 - (x1**2 + x2**2) / 0.81) ** 2
                basis = np.stack([np.ones_like(x1), x1, x2, x1 * x2, x1**2, x2**2], -1)
                return (env[..., None] * (basis @ c))
            return fn

        F, a1, a2 = (field(c) for c in C)
        if "alpha" not in kc.forms:
            a1 = a2 = None
        d = synthetic_data(pair, metric, bg, F, a1, a2, dt=cfg.dt)
        rec = recover_f(op, d, ridge=cfg.ridge)
        xt = op.layout.sample(F, a1, a2)
        err = kernel_orthogonal_error(op, xt, rec.x)
        res["recovery"] = {"kernel_orthogonal_error": err, "data_residual": rec.data_residual,
                           "resolution_flag": rec.resolution_flag}
        if not err < cfg.tol("recover"):
            fails["recover"] = {"value": err, "tolerance": cfg.tol("recover")}
    s = rep.singular_values
    rows = [(i, float(x), float(x / s[0])) for i, x in enumerate(s)]
    return res, {"kernel_spectrum.csv": csv_text(["index", "sigma", "sigma_rel"], rows)}, fails


def cmd_rigidity(cfg: ScenarioConfig):
    from .inversion import RIGIDITY_TOLERANCES, rigidity_experiment
    if cfg.gauge is None:
        raise ConfigError("rigidity needs a 'gauge' section")
    metric, pair, bg = cfg.build_metric(), cfg.build_pair(), cfg.boundary.build()
    rc = cfg.rigidity
    tol = {k: cfg.tol(k) for k in RIGIDITY_TOLERANCES}
    rep = rigidity_experiment(pair, cfg.build_gauge(), metric, bg, h=rc.h, r_max=rc.r_max,
                              n_dirs=rc.n_dirs, kmax=rc.kmax, dt=cfg.dt, tolerances=tol,
                              fd_step=rc.fd_step, conn_stride=rc.conn_stride)
    fails = {k: {"value": v, "tolerance": tol[k]} for k, v in rep.failures().items()}
    rows = [(k, float(getattr(rep, k)), tol[k]) for k in tol]
    return rep.to_dict(), {"rigidity_summary.csv": csv_text(["name", "value", "tolerance"], rows)}, fails


RUNNERS = {"transform": cmd_transform, "scatter": cmd_scatter, "verify": cmd_verify,
           "holo": cmd_holo, "kernel": cmd_kernel, "rigidity": cmd_rigidity}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _limit_threads(n):
    if not n:
        return None
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(int(n))


def run(command: str, cfg: ScenarioConfig, out_dir) -> int:
    """Run one command and write its files; returns the exit status."""
    from .geometry import GeometryError
    from .holo import HoloError
    from .inversion import InversionError
    from .transport import TransportError
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = {"command": command, "config": cfg.to_dict(), "config_hash": cfg.content_hash(),
            "seed": cfg.seed}
    numeric = (GeometryError, TransportError, HoloError, InversionError, np.linalg.LinAlgError,
               FloatingPointError, MemoryError)
    try:
        results, files, fails = RUNNERS[command](cfg)
    except ConfigError as e:
        plots.atomic_write(out / f"{command}_failure.json",
                           dumps(dict(head, ok=False, reason="config", message=str(e))))
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except numeric as e:
        plots.atomic_write(out / f"{command}_failure.json",
                           dumps(dict(head, ok=False, reason=type(e).__name__, message=str(e))))
        print(f"numerical failure ({type(e).__name__}): {e}", file=sys.stderr)
        return EXIT_NUMERIC
    for name, text in files.items():
        plots.atomic_write(out / name, text)
    report = dict(head, ok=not fails, failures=fails, results=results, files=sorted(files))
    plots.atomic_write(out / f"{command}_report.json", dumps(report))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        plots.emit_plots(out)
    if fails:
        plots.atomic_write(out / f"{command}_failure.json",
                           dumps(dict(head, ok=False, reason="tolerance", failures=fails)))
        print(f"{command}: tolerances violated: {', '.join(sorted(fails))}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"{command}: ok ({out / (command + '_report.json')})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gauge-xray", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=f"run the {name} scenario")
        s.add_argument("--config", required=True, help="scenario JSON file")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--seed", type=int, help="seed for randomized inputs (overrides the config)")
        s.add_argument("--threads", type=int, help="BLAS thread limit")
    e = sub.add_parser("emit_plots", help="write plot scripts for a report directory")
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--config", help="ignored; accepted for symmetry")
    e.add_argument("--seed", type=int, help="ignored")
    e.add_argument("--threads", type=int, help="ignored")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    if args.command == "emit_plots":
        try:
            paths = plots.emit_plots(args.out)
        except FileNotFoundError as e:
            print(str(e), file=sys.stderr)
            return EXIT_CONFIG
        for q in paths:
            print(q)
        return EXIT_OK
    try:
        cfg = ScenarioConfig.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.seed = int(args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    limiter = _limit_threads(args.threads)
    try:
        return run(args.command, cfg, args.out or cfg.output)
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
