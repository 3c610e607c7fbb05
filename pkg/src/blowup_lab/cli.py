"""Batch driver: ``blowup-lab <experiment> [options]``.

Writes ``report.json`` (sorted keys, the resolved configuration echoed),
``series.csv`` (tau, norm, p_component, weighted_eh_norm) and, for the
spectrum experiment, ``spectrum.csv`` (re_lambda, im_lambda, abs_c0).

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EXPERIMENTS = (
    "spectrum",
    "linear-decay",
    "projection",
    "nonlinear-run",
    "modulate",
    "main-theorem",
    "full-suite",
)
SERIES_COLUMNS = ("tau", "norm", "p_component", "weighted_eh_norm")


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    p: float = 5.0
    eps: float = 0.1
    grid_n: int = 64
    dt: float = 1e-4
    tau_end: float = 8.0
    seed: int = 7
    output_path: str = "results"
    samples: int = 50
    data: str = "bump"
    amplitude: float = 1e-3
    t_prime: float = 1.02
    T: float = 1.0
    lp_h: float = 0.02

    def validate(self):
        from .core import T_INTERVAL

        if self.experiment not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {self.experiment!r}")
        if not self.p > 3:
            raise UsageError("p must exceed 3")
        if not 0 < self.eps < 2.0 / (self.p - 1.0):
            raise UsageError("eps must lie in (0, 2/(p-1))")
        if self.grid_n < 8:
            raise UsageError("grid_n must be at least 8")
        if not 0 < self.dt <= 1.5e-3 * (64.0 / self.grid_n) ** 2:
            raise UsageError("dt violates the collocation step-size limit")
        if not self.tau_end > 0:
            raise UsageError("tau_end must be positive")
        if self.samples < 1:
            raise UsageError("samples must be positive")
        if self.data not in ("zero", "family", "bump"):
            raise UsageError("data must be one of zero, family, bump")
        for name in ("t_prime", "T"):
            val = getattr(self, name)
            if not T_INTERVAL[0] < val < T_INTERVAL[1]:
                raise UsageError(f"{name} must lie in {T_INTERVAL}")
        if not 0 < self.lp_h <= 0.1:
            raise UsageError("lp_h must lie in (0, 0.1]")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_ALIASES = {"grid-n": "grid_n", "tau-end": "tau_end", "out": "output_path", "t-prime": "t_prime", "lp-h": "lp_h"}


def _coerce(key: str, value: str):
    key = _ALIASES.get(key, key).replace("-", "_")
    if key not in _FIELDS or key == "experiment":
        raise UsageError(f"unknown configuration key {key!r}")
    typ = _FIELDS[key].type
    try:
        if typ in ("int", int):
            return key, int(value)
        if typ in ("float", float):
            return key, float(value)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {value!r}") from exc
    return key, str(value)


def parse_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        key, val = _coerce(k, v)
        out[key] = val
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blowup-lab", description="Self-similar blow-up experiments.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--p", type=float)
    ap.add_argument("--eps", type=float)
    ap.add_argument("--grid-n", type=int, dest="grid_n")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--tau-end", type=float, dest="tau_end")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", dest="output_path")
    ap.add_argument("--config", help="flat key = value file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="extra overrides")
    return ap


def resolve_config(argv) -> RunConfig:
    ap = build_parser()
    ns = ap.parse_args(argv)
    values: dict = {}
    if ns.config:
        values.update(parse_config_file(ns.config))
    for item in ns.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = _coerce(*(s.strip() for s in item.split("=", 1)))
        values[key] = val
    for key in ("p", "eps", "grid_n", "dt", "tau_end", "seed", "output_path"):
        val = getattr(ns, key)
        if val is not None:
            values[key] = val
    return RunConfig(experiment=ns.experiment, **values).validate()


# ------------------------------------------------------------------ helpers


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(x):
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": _num(x.real), "im": _num(x.imag)}
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return str(x)
        return x
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_num(v) for v in x]
    return x


def dump_json(obj) -> str:
    return json.dumps(_num(obj), sort_keys=True, indent=2) + "\n"


def series_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for row in rows:
        w.writerow([f"{float(row[c]):.17g}" if row.get(c) is not None and not _isnan(row[c]) else "" for c in SERIES_COLUMNS])
    return buf.getvalue()


def _isnan(x) -> bool:
    try:
        return math.isnan(float(x))
    except (TypeError, ValueError):
        return False


def read_series(path) -> dict:
    cols: dict[str, list[float]] = {c: [] for c in SERIES_COLUMNS}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for c in SERIES_COLUMNS:
                v = row.get(c, "")
                cols[c].append(float(v) if v not in ("", None) else math.nan)
    return {c: np.array(v) for c, v in cols.items()}


def fit_report(series, tau_lo: float = 1.0, tau_hi: float | None = None, column: str = "norm", weights=None):
    """Least-squares fit of ``log(column)`` against tau.

    ``series`` is a CSV path or a mapping with ``tau`` and ``column`` arrays.
    The window defaults to ``[1, min(5, tau_end)]``.  Returns
    ``(slope, intercept, r_squared)``.
    """
    if isinstance(series, (str, os.PathLike)):
        series = read_series(series)
    tau = np.asarray(series["tau"], dtype=float)
    y = np.asarray(series[column], dtype=float)
    if tau.size < 10:
        raise ValueError("need at least 10 rows")
    if tau_hi is None:
        tau_hi = min(5.0, float(tau[-1]))
    sel = (tau >= tau_lo - 1e-12) & (tau <= tau_hi + 1e-12)
    if sel.sum() < 2:
        raise ValueError("fit window contains fewer than two rows")
    if np.any(~(y[sel] > 0)):
        raise ValueError("values in the fit window must be positive")
    x, ly = tau[sel], np.log(y[sel])
    wts = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)[sel]
    if np.ptp(x) == 0:
        raise ValueError("degenerate fit window")
    slope, intercept = np.polyfit(x, ly, 1, w=np.sqrt(wts))
    resid = ly - (slope * x + intercept)
    mean = np.average(ly, weights=wts)
    ss_tot = float(np.sum(wts * (ly - mean) ** 2))
    ss_res = float(np.sum(wts * resid**2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)


# -------------------------------------------------------------- experiments


def _setup(cfg: RunConfig):
    from .core import derive_params
    from .grid import make_grid
    from .linop import build_operators

    params = derive_params(cfg.p, cfg.eps)
    grid = make_grid(cfg.grid_n)
    return params, grid, build_operators(grid, params)


def _free_data(cfg: RunConfig, params):
    from .core import RadialDataPair, ode_blowup_data

    if cfg.data == "family":
        return ode_blowup_data(cfg.t_prime, params)
    amp = params.amp
    rate = params.free_rate
    if cfg.data == "zero":
        return RadialDataPair.from_functions(lambda r: amp, lambda r: rate * amp)
    d = cfg.amplitude
    return RadialDataPair.from_functions(
        lambda r: amp + d * np.exp(-(((r - 0.3) / 0.3) ** 2)),
        lambda r: rate * amp + 0.5 * d * np.exp(-(((r - 0.5) / 0.3) ** 2)),
    )


def random_state(grid, rng, degree: int = 6):
    """Random smooth state: Chebyshev series with normal coefficients, ``u1(0)`` removed."""
    from numpy.polynomial import chebyshev as cheb

    from .grid import StateVector

    t = 2.0 * grid.nodes - 1.0
    c1 = rng.standard_normal(degree + 1)
    c2 = rng.standard_normal(degree + 1)
    u1 = cheb.chebval(t, c1)
    u1 = u1 - u1[0]
    u1[0] = 0.0
    return StateVector(u1, cheb.chebval(t, c2), grid)


def exp_spectrum(cfg: RunConfig) -> dict:
    from .spectral import connection_c0, find_eigenvalues

    params, grid, ops = _setup(cfg)
    edge = -params.free_rate
    lo = edge + 0.01
    rep = find_eigenvalues(params.p, (lo, 20.0, -20.0, 20.0))
    roots = [z for z in rep.eigenvalues_found if abs(z) <= 20.0]
    ev = np.linalg.eigvals(ops.A)
    ev = ev[np.argsort(-ev.real, kind="stable")]
    inside = [z for z in ev if z.real > lo and abs(z) <= 20.0]
    rows = []
    for z in ev:
        c0 = math.nan
        # the Gamma approximation is only validated for |argument| <= 50
        if abs(z) <= 50.0:
            try:
                with warnings.catch_warnings(), np.errstate(all="ignore"):
                    warnings.simplefilter("ignore")
                    c0 = abs(connection_c0(z, params.p))
            except (ValueError, OverflowError):
                c0 = math.nan
        rows.append((z.real, z.imag, c0))
    ok = (
        len(roots) == 1
        and abs(roots[0] - 1.0) <= 1e-8
        and len(inside) == 1
        and abs(inside[0] - 1.0) <= 1e-6
    )
    return {
        "report": {
            "eigenvalues_closed_form": roots,
            "argument_principle_count": rep.argument_principle_count,
            "eigenvalues_discrete": inside,
            "remainder_closed_form": [z for z in roots if abs(z - 1.0) > 1e-8],
            "remainder_discrete": [z for z in inside if abs(z - 1.0) > 1e-6],
            "predicted": [1.0],
            "region": {"re_min": lo, "abs_max": 20.0},
            "pass": ok,
        },
        "spectrum": rows,
        "series": [],
    }


def exp_linear_decay(cfg: RunConfig) -> dict:
    from .linop import fit_semigroup_bound, linear_trajectory, spectral_projection

    params, grid, ops = _setup(cfg)
    proj = spectral_projection(ops)
    rng = np.random.default_rng(cfg.seed)
    tau_end = cfg.tau_end
    taus = np.linspace(0.0, tau_end, int(round(tau_end / 0.05)) + 1)
    hi = min(5.0, tau_end)
    free_slopes, stable_slopes, Ms = [], [], []
    first = None
    for _ in range(cfg.samples):
        u = random_state(grid, rng)
        tr0 = linear_trajectory(ops, u, taus, dt=cfg.dt, which="L0")
        r0 = tr0.norms / tr0.norms[0]
        free_slopes.append(fit_semigroup_bound(taus, r0, (1.0, hi)).omega)
        Ms.append(float(np.max(r0 * np.exp(params.free_rate * taus))))
        w = proj.complement(u)
        tr = linear_trajectory(ops, w, taus, dt=cfg.dt, which="L")
        stable_slopes.append(fit_semigroup_bound(taus, tr.norms / tr.norms[0], (1.0, hi)).omega)
        if first is None:
            first = (tr0, tr)
    tr0, tr = first
    series = [
        {"tau": t, "norm": n, "p_component": float(proj.coefficient(tr.data[i] @ ops.E)), "weighted_eh_norm": None}
        for i, (t, n) in enumerate(zip(tr.taus, tr.norms))
    ]
    return {
        "report": {
            "free_flow": {
                "slopes_max": max(free_slopes),
                "slopes_median": float(np.median(free_slopes)),
                "predicted_slope": -params.free_rate,
                "M": max(1.0, max(Ms)),
                "pass": max(free_slopes) <= -params.free_rate + 0.05,
            },
            "stable_flow": {
                "slopes_max": max(stable_slopes),
                "predicted_slope": -params.mu_p,
                "pass": max(stable_slopes) <= -params.mu_p + 0.05,
            },
            "window": [1.0, hi],
            "samples": cfg.samples,
        },
        "series": series,
    }


def exp_projection(cfg: RunConfig) -> dict:
    import scipy.linalg as sla

    from .linop import resolvent_norm_scan, spectral_projection

    params, grid, ops = _setup(cfg)
    proj = spectral_projection(ops)
    P = proj.P
    sv = np.linalg.svd(P, compute_uv=False)
    g = proj.gauge
    comm = {}
    for tau in (0.5, 1.0, 2.0):
        S = sla.expm(tau * ops.A)
        comm[str(tau)] = ops.op_norm(P @ S - S @ P)
    line = -params.free_rate + 0.1
    lams = [complex(line, y) for y in np.linspace(-50, 50, 41)]
    scan = resolvent_norm_scan(ops, lams)
    norms = [nv for _, nv in scan]
    idem = float(np.linalg.norm(P @ P - P))
    return {
        "report": {
            "idempotency_frobenius": idem,
            "gauge_residual": float(np.linalg.norm(P @ g - g)),
            "singular_values": sv[:3],
            "commutation_norms": comm,
            "resolvent_line": line,
            "resolvent_max": max(norms),
            "pass": idem <= 1e-8 and sv[1] <= 1e-6 and float(np.linalg.norm(P @ g - g)) <= 1e-8,
        },
        "series": [],
    }


def _series_from_traj(traj, ops, proj, T, params, weighted: bool):
    from .evolution import weighted_eh_norm

    shift = math.log(T)
    rows = []
    for i, tau in enumerate(traj.taus):
        y = traj.data[i] @ ops.E
        phi = traj.state(i)
        wn = weighted_eh_norm(phi, tau - shift, T, params) if weighted else None
        rows.append({"tau": tau, "norm": traj.norms[i], "p_component": float(proj.coefficient(y)), "weighted_eh_norm": wn})
    return rows


def exp_nonlinear_run(cfg: RunConfig) -> dict:
    from .core import initial_data_U, relative_data
    from .evolution import evolve_nonlinear
    from .linop import spectral_projection

    params, grid, ops = _setup(cfg)
    proj = spectral_projection(ops)
    v = relative_data(_free_data(cfg, params), params)
    u = initial_data_U(v, cfg.T, params, grid)
    traj = evolve_nonlinear(u, ops, cfg.tau_end, dt=cfg.dt, sample_dt=0.05, projection=proj)
    rows = _series_from_traj(traj, ops, proj, cfg.T, params, weighted=True)
    return {
        "report": {
            "status": traj.status,
            "escape_time": traj.escape_time,
            "escape_sign": traj.escape_sign,
            "final_norm": float(traj.norms[-1]),
            "T": cfg.T,
        },
        "series": rows,
    }


def exp_modulate(cfg: RunConfig) -> dict:
    from .core import relative_data
    from .evolution import LyapunovPerronSolver, find_blowup_time
    from .linop import spectral_projection

    params, grid, ops = _setup(cfg)
    solver = LyapunovPerronSolver(ops, spectral_projection(ops), h=cfg.lp_h)
    v = relative_data(_free_data(cfg, params), params)
    res = find_blowup_time(v, solver)
    expected = 1.0 if cfg.data == "zero" else (cfg.t_prime if cfg.data == "family" else None)
    return {
        "report": {
            "T_star": res.T_star,
            "bracket": res.bracket,
            "f_values": res.f_values,
            "f_star": res.f_star,
            "iterations": res.iterations,
            "expected_T_star": expected,
            "pass": None if expected is None else abs(res.T_star - expected) <= 1e-6,
        },
        "series": [],
    }


def exp_main_theorem(cfg: RunConfig) -> dict:
    from .evolution import LyapunovPerronSolver, verify_main_estimate
    from .linop import spectral_projection

    params, grid, ops = _setup(cfg)
    proj = spectral_projection(ops)
    solver = LyapunovPerronSolver(ops, proj, h=cfg.lp_h)
    hi = min(6.0, cfg.tau_end)
    rep = verify_main_estimate(_free_data(cfg, params), solver, window=(1.0, hi), dt=max(cfg.dt, 5e-4))
    shift = math.log(rep.T_star)
    rows = []
    traj = rep.trajectory
    wmap = {round(float(t), 9): w for t, w in zip(rep.phys_taus, rep.weighted_norm)}
    for i, tau in enumerate(traj.taus):
        rows.append(
            {
                "tau": tau,
                "norm": traj.norms[i],
                "p_component": float(proj.coefficient(traj.data[i] @ ops.E)),
                "weighted_eh_norm": wmap.get(round(float(tau - shift), 9)),
            }
        )
    return {
        "report": {
            "T_star": rep.T_star,
            "slope": rep.slope,
            "predicted_slope_min": params.mu_p,
            "C_eps": rep.C_eps,
            "window_phys_tau": rep.window,
            "identity_max_rel_dev": float(
                np.max(np.abs(rep.weighted_norm - rep.weighted_norm_similarity) / np.maximum(rep.weighted_norm, 1e-300))
            )
            if rep.weighted_norm.size
            else 0.0,
            "pass": rep.passes,
        },
        "series": rows,
    }


RUNNERS = {
    "spectrum": exp_spectrum,
    "linear-decay": exp_linear_decay,
    "projection": exp_projection,
    "nonlinear-run": exp_nonlinear_run,
    "modulate": exp_modulate,
    "main-theorem": exp_main_theorem,
}


def _write_outputs(cfg: RunConfig, result: dict, outdir: Path):
    report = {"config": cfg.to_dict(), "experiment": cfg.experiment, "status": "ok", **result["report"]}
    _atomic_write(outdir / "report.json", dump_json(report))
    _atomic_write(outdir / "series.csv", series_csv(result.get("series", [])))
    if "spectrum" in result:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["re_lambda", "im_lambda", "abs_c0"])
        for re, im, c0 in result["spectrum"]:
            w.writerow([f"{re:.17g}", f"{im:.17g}", "" if math.isnan(c0) else f"{c0:.17g}"])
        _atomic_write(outdir / "spectrum.csv", buf.getvalue())


def _run_single(cfg: RunConfig, outdir: Path) -> int:
    try:
        result = RUNNERS[cfg.experiment](cfg)
    except Exception as exc:  # numerical failure: keep a diagnostic artifact
        diag = {
            "config": cfg.to_dict(),
            "experiment": cfg.experiment,
            "status": "failed",
            "error": f"{type(exc).__name__}: {exc}",
            "diagnostic": getattr(exc, "diagnostic", None),
            "traceback": traceback.format_exc().splitlines()[-3:],
        }
        _atomic_write(outdir / "report.json", dump_json(diag))
        return 1
    _write_outputs(cfg, result, outdir)
    return 0


def _suite_worker(args):
    cfg, outdir = args
    return cfg.experiment, _run_single(cfg, Path(outdir))


def run(cfg: RunConfig) -> int:
    out = Path(cfg.output_path)
    if cfg.experiment != "full-suite":
        return _run_single(cfg, out)
    jobs = [(dataclasses.replace(cfg, experiment=name), str(out / name)) for name in RUNNERS]
    with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
        codes = dict(pool.map(_suite_worker, jobs))
    summary = {"config": cfg.to_dict(), "experiment": "full-suite", "exit_codes": codes}
    summary["status"] = "ok" if all(c == 0 for c in codes.values()) else "failed"
    _atomic_write(out / "report.json", dump_json(summary))
    return 0 if summary["status"] == "ok" else 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = resolve_config(argv)
    except UsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(f"blowup-lab: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse reports usage errors this way
        return int(exc.code) if exc.code is not None else 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
