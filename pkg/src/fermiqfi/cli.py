"""Command-line driver: QFI scans, protocol traces, q scans and bound tables.

Every run writes CSV tables (schema line, header row, 12 significant digits)
and a JSON sidecar echoing the configuration.  Exit codes: 0 success,
2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import brute_force_bound, bound_fixedN, bound_generic, certify_depth
from .fock import build_sector_basis
from .kernel import ConfigError, convergence_fit, kappa_step, qfi_from_quench, qfi_partial
from .model import Boundary, HubbardParams, build_hubbard, staggered_operator, staggered_weights
from .protocol import DEFAULT_DT, DEFAULT_Q, QuenchSimulator, default_t_max, xi_plain, xi_symmetrized
from .spectral import qfi_exact, thermal_state

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
OPS = ("plus", "minus")


class ConfigValidationError(ValueError):
    pass


@dataclass
class ScanConfig:
    L: int = 8
    boundary: str = "open"
    U_grid: list = field(default_factory=lambda: list(np.linspace(-10.0, 10.0, 21)))
    T_grid: list = field(default_factory=lambda: list(np.linspace(0.1, 1.0, 10)))
    op: str = "max"
    q: float = DEFAULT_Q
    dt: float = DEFAULT_DT
    tmax_rule: float = 14.0
    out: str = "out"
    n_up: int | None = None
    n_down: int | None = None
    jobs: int = 1
    seed: int = 0

    def validate(self):
        def bad(name, msg):
            raise ConfigValidationError(f"field '{name}': {msg}")

        if not isinstance(self.L, int) or self.L < 2:
            bad("L", "need an integer >= 2")
        if self.boundary not in ("open", "periodic"):
            bad("boundary", "must be 'open' or 'periodic'")
        if self.op not in ("plus", "minus", "max"):
            bad("op", "must be 'plus', 'minus' or 'max'")
        if len(self.U_grid) == 0:
            bad("U_grid", "grid is empty")
        if len(self.T_grid) == 0:
            bad("T_grid", "grid is empty")
        if any(not np.isfinite(u) for u in self.U_grid):
            bad("U_grid", "values must be finite")
        if any(not (t > 0 and np.isfinite(t)) for t in self.T_grid):
            bad("T_grid", "temperatures must be positive")
        if self.q == 0 or not np.isfinite(self.q):
            bad("q", "quench amplitude must be finite and non-zero")
        if not 0 < self.dt <= 0.1:
            bad("dt", "need 0 < dt <= 0.1")
        if not self.tmax_rule > 0:
            bad("tmax_rule", "must be positive")
        if self.jobs < 1:
            bad("jobs", "need at least one worker")
        if self.n_up is None and self.n_down is None and self.L % 2:
            bad("L", "half filling needs even L; give n_up and n_down")
        for name in ("n_up", "n_down"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= self.L:
                bad(name, f"must lie in [0, {self.L}]")

    @property
    def sector(self) -> tuple[int, int]:
        n_up = self.L // 2 if self.n_up is None else self.n_up
        n_down = self.L // 2 if self.n_down is None else self.n_down
        return n_up, n_down

    def ops(self) -> tuple[str, ...]:
        return OPS if self.op == "max" else (self.op,)


# --- parsing ---------------------------------------------------------------


def parse_grid(text: str) -> list[float]:
    """``"a:b:n"`` (n evenly spaced points) or a comma-separated list."""
    text = str(text).strip()
    if not text:
        return []
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigValidationError(f"grid '{text}': expected start:stop:count")
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise ConfigValidationError(f"grid '{text}': count must be positive")
        return [float(x) for x in np.linspace(a, b, n)]
    return [float(x) for x in text.split(",") if x.strip()]


def load_config_file(path: str) -> dict:
    """Read a JSON object of config keys; errors name the line."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigValidationError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigValidationError(f"{path}, line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigValidationError(f"{path}: top level must be an object")
    known = {f.name for f in fields(ScanConfig)}
    for key in data:
        if key.replace("-", "_") not in known and key not in ("qs", "k_min", "k_max", "weights", "N", "U", "brute_force"):
            raise ConfigValidationError(f"{path}: unknown key '{key}'")
    return {k.replace("-", "_"): v for k, v in data.items()}


def build_config(args: argparse.Namespace) -> tuple[ScanConfig, dict]:
    """Config from file (if any) overridden by explicit flags."""
    base = load_config_file(args.config) if args.config else {}
    extras = {k: base.pop(k) for k in list(base) if k not in {f.name for f in fields(ScanConfig)}}
    for key in ("U_grid", "T_grid"):
        if key in base and isinstance(base[key], str):
            base[key] = parse_grid(base[key])
    cfg = ScanConfig(**base)
    flag_map = {
        "L": "L", "boundary": "boundary", "op": "op", "q": "q", "dt": "dt",
        "tmax_rule": "tmax_rule", "out": "out", "jobs": "jobs", "seed": "seed",
        "n_up": "n_up", "n_down": "n_down",
    }
    for flag, name in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "U_grid", None) is not None:
        cfg.U_grid = parse_grid(args.U_grid)
    if getattr(args, "T_grid", None) is not None:
        cfg.T_grid = parse_grid(args.T_grid)
    cfg.U_grid = [float(u) for u in cfg.U_grid]
    cfg.T_grid = [float(t) for t in cfg.T_grid]
    cfg.validate()
    return cfg, extras


# --- output ----------------------------------------------------------------


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if not np.isfinite(x):
        return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")
    return f"{x:.12g}"


def write_table(path: Path, schema: str, columns: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema}/v{SCHEMA_VERSION} columns={','.join(columns)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_sidecar(path: Path, command: str, cfg: dict, extra: dict, wall: float) -> None:
    meta = {
        "command": command,
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "config": cfg,
        "results": extra,
        "wall_time_s": round(wall, 3),
    }
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=float) + "\n")


# --- computations ------------------------------------------------------------


def _setup(cfg: ScanConfig, U: float):
    params = HubbardParams(cfg.L, U, boundary=Boundary(cfg.boundary))
    basis = build_sector_basis(cfg.L, *cfg.sector)
    H0 = build_hubbard(params, basis)
    return basis, H0


def protocol_qfi(sim: QuenchSimulator, T: float, q: float, dt: float, t_max: float,
                 symmetrize: bool = True) -> float:
    """F_Q from simulated step quenches (optionally +-q symmetrized)."""
    run_p = sim.run(q, T, dt, t_max)
    xi = xi_symmetrized(run_p, sim.run(-q, T, dt, t_max)) if symmetrize else xi_plain(run_p)
    return qfi_from_quench(xi, T).value


def scan_rows_for_u(cfg: ScanConfig, U: float) -> list[list]:
    """All temperatures of one U value; the spectra are shared across T."""
    basis, H0 = _setup(cfg, U)
    sims = {op: None for op in cfg.ops()}
    spec0 = None
    for op in sims:
        O = staggered_operator(op, cfg.L, basis)
        sims[op] = QuenchSimulator(H0, O, spec0)
        spec0 = sims[op].spec0
    n_modes = 2 * cfg.L
    N = sum(cfg.sector)
    w = staggered_weights("plus", cfg.L)
    rows = []
    for T in cfg.T_grid:
        t_max = default_t_max(T, cfg.tmax_rule)
        fq = {op: None for op in OPS}
        exact = {}
        for op, sim in sims.items():
            fq[op] = protocol_qfi(sim, T, cfg.q, cfg.dt, t_max)
            exact[op] = qfi_exact(spec0, thermal_state(spec0, T), sim.O)
        fq_max = max(v for v in fq.values() if v is not None)
        fq_exact = max(exact.values())
        depth = certify_depth(max(fq_max, 0.0), w, N, closed_form=True).depth
        depth_fixed = certify_depth(max(fq_max, 0.0), w, N).depth
        rows.append([U, T, fq["plus"], fq["minus"], fq_max, fq_exact, depth, depth_fixed,
                     fq_max / cfg.L, fq_max / n_modes])
    return rows


SCAN_COLUMNS = ["U_over_J", "T_over_J", "fq_plus", "fq_minus", "fq_max", "fq_exact", "depth",
                "depth_fixed_n", "fq_max_per_site", "fq_max_per_mode"]


def _scan_worker(payload):
    cfg_dict, U = payload
    return scan_rows_for_u(ScanConfig(**cfg_dict), U)


def cmd_scan(cfg: ScanConfig) -> tuple[list[list], dict]:
    payloads = [(asdict(cfg), U) for U in cfg.U_grid]
    if cfg.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            chunks = list(pool.map(_scan_worker, payloads))
    else:
        chunks = [_scan_worker(p) for p in payloads]
    rows = [r for chunk in chunks for r in chunk]
    crossing = [r for r in rows if r[4] > 16.0]
    return rows, {"points": len(rows), "points_above_16": len(crossing)}


def cmd_trace(cfg: ScanConfig, U: float) -> tuple[dict[str, tuple[list[str], list[list]]], dict]:
    """xi, kappa, F_Q(t_cutoff) and log residual series on one shared grid."""
    basis, H0 = _setup(cfg, U)
    op = "plus" if cfg.op == "max" else cfg.op
    sim = QuenchSimulator(H0, staggered_operator(op, cfg.L, basis))
    Ts = cfg.T_grid
    t_max = max(default_t_max(T, cfg.tmax_rule) for T in Ts)
    xis, kappas, partials, resids, fits = [], [], [], [], {}
    for T in Ts:
        xi = xi_symmetrized(sim.run(cfg.q, T, cfg.dt, t_max), sim.run(-cfg.q, T, cfg.dt, t_max))
        t = xi.times
        part = qfi_partial(xi, T)
        f_inf = qfi_exact(sim.spec0, thermal_state(sim.spec0, T), sim.O)
        k = np.full_like(t, np.nan)
        k[1:] = kappa_step(t[1:], T)
        r = np.abs(f_inf - part.values)
        with np.errstate(divide="ignore"):
            logr = np.where(r > 0, np.log(r), np.nan)
        fit = convergence_fit(part, T, f_inf=part.values[-1])
        fits[fmt(T)] = {"rate": fit.rate, "rate_over_piT": None if fit.rate is None else fit.rate / (np.pi * T),
                        "flagged": fit.flagged, "fq_final": float(part.values[-1]), "fq_exact": f_inf}
        xis.append(xi.values)
        kappas.append(k)
        partials.append(part.values)
        resids.append(logr)
    t = xi.times
    cols = ["t"] + [f"T_{fmt(T)}" for T in Ts]

    def table(series):
        return cols, [[t[i]] + [s[i] for s in series] for i in range(len(t))]

    return {
        "xi": table(xis),
        "kappa": table(kappas),
        "fq_partial": table(partials),
        "log_residual": table(resids),
    }, {"U": U, "operator": op, "fits": fits}


def _loglog_slope(qs, errs) -> float | None:
    qs, errs = np.asarray(qs), np.asarray(errs)
    ok = errs > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(qs[ok]), np.log(errs[ok]), 1)[0])


def cmd_qscan(cfg: ScanConfig, U: float, qs: list[float]) -> tuple[list[list], dict]:
    uniq = sorted(set(abs(q) for q in qs))
    if len(uniq) < len(qs):
        warnings.warn("duplicate q values removed", UserWarning, stacklevel=2)
    if any(q == 0 for q in uniq):
        raise ConfigValidationError("field 'qs': q = 0 is not a quench")
    basis, H0 = _setup(cfg, U)
    op = "plus" if cfg.op == "max" else cfg.op
    sim = QuenchSimulator(H0, staggered_operator(op, cfg.L, basis))
    rows = []
    slopes = {}
    for T in cfg.T_grid:
        t_max = default_t_max(T, cfg.tmax_rule)
        f_ex = qfi_exact(sim.spec0, thermal_state(sim.spec0, T), sim.O)
        e_plain, e_sym = [], []
        for q in uniq:
            run_p = sim.run(q, T, cfg.dt, t_max)
            run_m = sim.run(-q, T, cfg.dt, t_max)
            f_plain = qfi_from_quench(xi_plain(run_p), T).value
            f_sym = qfi_from_quench(xi_symmetrized(run_p, run_m), T).value
            e_plain.append(abs(f_plain / f_ex - 1))
            e_sym.append(abs(f_sym / f_ex - 1))
            rows.append([T, q, f_plain, f_sym, f_ex, e_plain[-1], e_sym[-1]])
        slopes[fmt(T)] = {"plain": _loglog_slope(uniq, e_plain), "symmetrized": _loglog_slope(uniq, e_sym)}
    return rows, {"U": U, "operator": op, "q_values": uniq, "slopes": slopes}


QSCAN_COLUMNS = ["T_over_J", "q", "fq_plain", "fq_symmetrized", "fq_exact", "rel_err_plain",
                 "rel_err_symmetrized"]


def _blocks_text(partition) -> str:
    return "|".join(" ".join(str(m) for m in b) for b in partition.blocks)


def cmd_bounds(w: np.ndarray, N: int | None, k_range: range, brute: bool) -> tuple[list[list], dict]:
    n = len(w)
    if brute and n > 8:
        raise ConfigValidationError("field 'brute_force': only available for at most 8 modes")
    rows = []
    for k in k_range:
        g = bound_generic(w, k)
        row = [k, g.value, g.closed_form]
        if N is not None:
            f = bound_fixedN(w, k, N)
            row += [f.value, f.closed_form, _blocks_text(f.partition), " ".join(map(str, f.occupations))]
        else:
            row += [None, None, _blocks_text(g.partition), None]
        if brute:
            row += [brute_force_bound(w, k), None if N is None else brute_force_bound(w, k, N)]
        rows.append(row)
    return rows, {"n_modes": n, "N": N}


def bounds_columns(brute: bool) -> list[str]:
    cols = ["k", "generic", "generic_closed_form", "fixed_n", "fixed_n_closed_form", "partition", "occupations"]
    return cols + (["brute_generic", "brute_fixed_n"] if brute else [])


# --- entry point -----------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with config keys (flags override it)")
    common.add_argument("--L", type=int, help="number of sites")
    common.add_argument("--boundary", choices=["open", "periodic"])
    common.add_argument("--U-grid", dest="U_grid", help="U/J values: 'a:b:n' or comma list")
    common.add_argument("--T-grid", dest="T_grid", help="T/J values: 'a:b:n' or comma list")
    common.add_argument("--op", choices=["plus", "minus", "max"])
    common.add_argument("--q", type=float, help="quench amplitude")
    common.add_argument("--dt", type=float, help="time step (1/J)")
    common.add_argument("--tmax-rule", dest="tmax_rule", type=float, help="simulate until pi T t_max >= rule")
    common.add_argument("--n-up", dest="n_up", type=int)
    common.add_argument("--n-down", dest="n_down", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--seed", type=int, help="RNG seed (recorded in metadata)")

    p = argparse.ArgumentParser(prog="fermiqfi", description="QFI of thermal Hubbard chains from quench dynamics")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("scan", parents=[common], help="F_Q and certified depth on a (U, T) grid")
    tr = sub.add_parser("trace", parents=[common], help="xi, kappa and convergence series at one U")
    tr.add_argument("--U", type=float, help="interaction U/J (default 4)")
    qs = sub.add_parser("qscan", parents=[common], help="estimator error versus quench amplitude")
    qs.add_argument("--U", type=float, help="interaction U/J (default 4)")
    qs.add_argument("--qs", help="q values, 'a,b,...' (default 1e-3..1e-1)")
    bd = sub.add_parser("bounds", parents=[common], help="k-producibility thresholds")
    bd.add_argument("--weights", help="mode weights 'w0,w1,...' (default staggered for --op)")
    bd.add_argument("--N", type=int, help="particle number (default half filling)")
    bd.add_argument("--k-min", dest="k_min", type=int)
    bd.add_argument("--k-max", dest="k_max", type=int)
    bd.add_argument("--brute-force", dest="brute_force", action="store_true",
                    help="add brute-force maxima (at most 8 modes)")
    return p


def _apply_command_defaults(command: str, args, raw: dict) -> None:
    """Per-command defaults that differ from a full scan."""
    if command in ("trace", "qscan"):
        if args.L is None and "L" not in raw:
            args.L = 4
        if args.T_grid is None and "T_grid" not in raw:
            args.T_grid = "0.2,0.4,0.8" if command == "trace" else "0.4"
        if args.U_grid is None and "U_grid" not in raw:
            args.U_grid = "4"


def run(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        raw = load_config_file(args.config) if args.config else {}
        _apply_command_defaults(args.command, args, raw)
        cfg, extras = build_config(args)
        out = Path(cfg.out)
        cfg_echo = asdict(cfg)
        if args.command == "scan":
            rows, info = cmd_scan(cfg)
            write_table(out / "scan.csv", "scan", SCAN_COLUMNS, rows)
            write_sidecar(out / "scan.json", "scan", cfg_echo, info, time.perf_counter() - start)
        elif args.command == "trace":
            U = args.U if args.U is not None else extras.get("U", 4.0)
            tables, info = cmd_trace(cfg, float(U))
            for name, (cols, rows) in tables.items():
                write_table(out / f"trace_{name}.csv", f"trace_{name}", cols, rows)
            write_sidecar(out / "trace.json", "trace", cfg_echo, info, time.perf_counter() - start)
        elif args.command == "qscan":
            U = args.U if args.U is not None else extras.get("U", 4.0)
            q_text = args.qs if args.qs is not None else extras.get("qs", "0.001,0.002,0.005,0.01,0.02,0.05,0.1")
            qs = parse_grid(q_text) if isinstance(q_text, str) else [float(v) for v in q_text]
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                rows, info = cmd_qscan(cfg, float(U), qs)
            for c in caught:
                print(f"warning: {c.message}", file=sys.stderr)
            write_table(out / "qscan.csv", "qscan", QSCAN_COLUMNS, rows)
            write_sidecar(out / "qscan.json", "qscan", cfg_echo, info, time.perf_counter() - start)
        else:
            weights = args.weights if args.weights is not None else extras.get("weights")
            if weights is None:
                w = staggered_weights("plus" if cfg.op == "max" else cfg.op, cfg.L)
            else:
                w = np.array(parse_grid(weights) if isinstance(weights, str) else weights, dtype=float)
            if len(w) == 0:
                raise ConfigValidationError("field 'weights': no weights given")
            N = args.N if args.N is not None else extras.get("N")
            if N is None and weights is None:
                N = sum(cfg.sector)
            if N is not None and not 0 <= N <= len(w):
                raise ConfigValidationError(f"field 'N': must lie in [0, {len(w)}]")
            k_min = args.k_min or extras.get("k_min", 1)
            k_max = args.k_max or extras.get("k_max", len(w))
            if not 1 <= k_min <= k_max <= len(w):
                raise ConfigValidationError(f"field 'k_min'/'k_max': need 1 <= k_min <= k_max <= {len(w)}")
            brute = args.brute_force or bool(extras.get("brute_force", False))
            rows, info = cmd_bounds(w, N, range(k_min, k_max + 1), brute)
            cfg_echo = {"weights": [float(x) for x in w], "N": N, "k_min": k_min, "k_max": k_max,
                        "brute_force": brute, "out": cfg.out}
            write_table(out / "bounds.csv", "bounds", bounds_columns(brute), rows)
            write_sidecar(out / "bounds.json", "bounds", cfg_echo, info, time.perf_counter() - start)
    except (ConfigValidationError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
