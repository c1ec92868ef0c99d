"""Command-line front end and benchmark harness.

Subcommands: svd, complete, bench, synth, metrics.  Configuration comes
from flags, optionally layered over a TOML file (--config); flags win.
Every run writes a self-describing summary.json (full config echo plus
seed) into the output directory, enough to reproduce it exactly.

Exit codes: 0 success (including runs flagged non-converged), 2 config
error, 3 data error, 4 numerical failure.

This module imports nothing heavy at the top level on purpose: the
--threads flag pins BLAS/OpenMP thread counts through environment
variables, which only take effect if they are set before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

from .errors import (
    ConfigError,
    DataError,
    LowRankError,
    NumericalError,
    RankDeficiencyError,
    SizeCapError,
)

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

_ALGOS = ("basic", "pi", "bki", "oracle")
_BACKENDS = ("oracle", "bki", "fast")
_RATING_FORMATS = ("csv", "tsv", "legacy")
_IMAGE_FORMATS = ("ppm", "pgm")
_FORMATS = ("mtx",) + _RATING_FORMATS + _IMAGE_FORMATS


def _pin_threads(n: Optional[int]) -> None:
    if n is None:
        return
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _load_toml(path: str) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


@dataclass
class RunConfig:
    """Validated settings for one CLI invocation."""

    command: str
    input: Optional[str] = None
    fmt: Optional[str] = None
    out: str = ""
    seed: int = 0
    threads: Optional[int] = None
    # sketching
    algo: str = "bki"
    k: int = 10
    p: Optional[int] = None
    s: int = 5
    allow_fallback: bool = False
    write_mm: bool = False
    # completion
    backend: str = "fast"
    strategy: Optional[str] = None
    tau: Optional[float] = None
    delta: Optional[float] = None
    epsilon: Optional[float] = None
    l: int = 5
    i_max: int = 500
    i_reuse: Optional[int] = None
    q_reuse: int = 10
    p0: int = 3
    train_fraction: float = 0.8
    pixel_fraction: float = 0.2
    # bench
    suite: list = field(default_factory=list)
    repetitions: int = 3
    baseline: Optional[str] = None
    # synth
    kind: str = "lowrank"
    m: int = 200
    n: int = 200
    rank: int = 10
    spectrum: str = "flat"
    alpha: float = 2.0
    scale: float = 1.0
    noise: float = 0.0
    density: float = 0.3
    count: int = 100_000
    # metrics
    factors: Optional[str] = None


# keys a config file may set, per command (flags use the same names)
_FILE_KEYS_COMMON = {"input", "fmt", "out", "seed", "threads"}
_FILE_KEYS = {
    "svd": _FILE_KEYS_COMMON | {"algo", "k", "p", "s", "allow_fallback", "write_mm"},
    "complete": _FILE_KEYS_COMMON
    | {
        "backend", "strategy", "tau", "delta", "epsilon", "l", "i_max",
        "i_reuse", "q_reuse", "p0", "k", "s", "train_fraction", "pixel_fraction",
        "write_mm",
    },
    "bench": _FILE_KEYS_COMMON | {"suite", "repetitions", "baseline", "k", "p", "s"},
    "synth": _FILE_KEYS_COMMON
    | {"kind", "m", "n", "rank", "spectrum", "alpha", "scale", "noise", "density", "count"},
    "metrics": _FILE_KEYS_COMMON | {"factors"},
}


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="lowrank",
        description="Randomized truncated SVD and SVT matrix completion.",
    )
    sub = top.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML config file; flags override it")
        sp.add_argument("--input", help="input data file")
        sp.add_argument("--format", dest="fmt", choices=_FORMATS,
                        help="input format (default: by file extension)")
        sp.add_argument("--out", help="output directory (default runs/<command>)")
        sp.add_argument("--seed", type=int, help="random seed (default 0)")
        sp.add_argument("--threads", type=int,
                        help="pin BLAS/OpenMP threads (1 = deterministic timing)")

    sp = sub.add_parser("svd", help="truncated SVD of a sparse matrix")
    common(sp)
    sp.add_argument("--algo", choices=_ALGOS, help="algorithm (default bki)")
    sp.add_argument("--k", type=int, help="target rank")
    sp.add_argument("--p", type=int, help="power/Krylov depth")
    sp.add_argument("--s", type=int, help="oversampling (default 5)")
    sp.add_argument("--allow-fallback", action="store_true", default=None,
                    dest="allow_fallback",
                    help="reroute rank-deficient steps through the dense oracle")
    sp.add_argument("--write-mm", action="store_true", default=None, dest="write_mm",
                    help="also write U/S/V in MatrixMarket array format")

    sp = sub.add_parser("complete", help="matrix completion by SVT")
    common(sp)
    sp.add_argument("--backend", choices=_BACKENDS,
                    help="oracle (dense SVD), bki (randomized, no recycling), "
                         "fast (randomized + recycling); default fast")
    sp.add_argument("--strategy", choices=["none", "reuse-q", "reuse-u"],
                    help="subspace recycling strategy (fast backend)")
    sp.add_argument("--tau", type=float, help="shrinkage threshold (default 5n)")
    sp.add_argument("--delta", type=float, help="step size (default 1.2mn/|observed|)")
    sp.add_argument("--epsilon", type=float, help="relative residual stop")
    sp.add_argument("--l", type=int, help="rank escalation increment (default 5)")
    sp.add_argument("--i-max", type=int, dest="i_max", help="iteration cap (default 500)")
    sp.add_argument("--i-reuse", type=int, dest="i_reuse",
                    help="first iteration allowed to recycle")
    sp.add_argument("--q-reuse", type=int, dest="q_reuse",
                    help="consecutive recycles before a forced fresh sketch")
    sp.add_argument("--p0", type=int, help="initial power parameter (default 3)")
    sp.add_argument("--s", type=int, help="sketch oversampling (default 5)")
    sp.add_argument("--train-fraction", type=float, dest="train_fraction",
                    help="train share for rating data (default 0.8)")
    sp.add_argument("--pixel-fraction", type=float, dest="pixel_fraction",
                    help="observed share for image data (default 0.2)")
    sp.add_argument("--write-mm", action="store_true", default=None, dest="write_mm",
                    help="also write U/S/V in MatrixMarket array format")

    sp = sub.add_parser("bench", help="timing suite over SVD algorithms")
    common(sp)
    sp.add_argument("--repetitions", type=int, help="runs per suite row (default 3)")
    sp.add_argument("--baseline", help="algo label the speedup column divides by "
                                       "(default: first row)")
    sp.add_argument("--k", type=int, help="default rank for suite rows")
    sp.add_argument("--p", type=int, help="default depth for suite rows")
    sp.add_argument("--s", type=int, help="default oversampling for suite rows")

    sp = sub.add_parser("synth", help="generate synthetic fixtures")
    common(sp)
    sp.add_argument("--kind", choices=["lowrank", "ratings", "image"],
                    help="fixture family (default lowrank)")
    sp.add_argument("--m", type=int, help="rows (image: height)")
    sp.add_argument("--n", type=int, help="columns (image: width)")
    sp.add_argument("--rank", type=int, help="ground-truth rank")
    sp.add_argument("--spectrum", choices=["flat", "power"], help="singular value profile")
    sp.add_argument("--alpha", type=float, help="power-decay exponent")
    sp.add_argument("--scale", type=float, help="leading singular value")
    sp.add_argument("--noise", type=float, help="additive noise level")
    sp.add_argument("--density", type=float, help="observed fraction for obs.mtx")
    sp.add_argument("--count", type=int, help="rating count for kind=ratings")

    sp = sub.add_parser("metrics", help="score saved factors against reference data")
    common(sp)
    sp.add_argument("--factors", help="factor container (factors.bin) to score")

    return top


def _merge(args: argparse.Namespace) -> RunConfig:
    command = args.command
    cfg = RunConfig(command=command)
    file_vals = {}
    if getattr(args, "config", None):
        file_vals = _load_toml(args.config)
        allowed = _FILE_KEYS[command]
        for key in file_vals:
            if key not in allowed:
                raise ConfigError(
                    f"unknown config key {key!r} for command {command!r} "
                    f"(allowed: {', '.join(sorted(allowed))})"
                )
    for key, val in file_vals.items():
        setattr(cfg, key, val)
    for key, val in vars(args).items():
        if key in ("command", "config") or val is None:
            continue
        setattr(cfg, key, val)
    return cfg


def _infer_format(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    table = {".mtx": "mtx", ".csv": "csv", ".tsv": "tsv", ".dat": "legacy",
             ".ppm": "ppm", ".pgm": "pgm"}
    if ext not in table:
        raise ConfigError(f"cannot infer format from {path!r}; pass --format")
    return table[ext]


def _validate(cfg: RunConfig) -> None:
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {cfg.threads}")
    if cfg.command in ("svd", "complete", "bench", "metrics"):
        if not cfg.input:
            raise ConfigError("--input is required")
        if not os.path.exists(cfg.input):
            raise DataError(f"input not found: {cfg.input}")
        if cfg.fmt is None:
            cfg.fmt = _infer_format(cfg.input)
        if cfg.fmt not in _FORMATS:
            raise ConfigError(f"unknown format {cfg.fmt!r}")
    if cfg.command == "svd":
        if cfg.algo not in _ALGOS:
            raise ConfigError(f"--algo must be one of {_ALGOS}")
        if cfg.k < 1:
            raise ConfigError(f"--k must be >= 1, got {cfg.k}")
        if cfg.p is None:
            cfg.p = 4
    if cfg.command == "complete":
        if cfg.backend not in _BACKENDS:
            raise ConfigError(f"--backend must be one of {_BACKENDS}")
        if cfg.strategy not in (None, "none") and cfg.backend != "fast":
            raise ConfigError("--strategy requires --backend fast")
        # workload defaults: ratings run loose and recycle early, images
        # run to a tighter stop with the span-freezing strategy
        if cfg.fmt in _RATING_FORMATS:
            cfg.epsilon = 0.17 if cfg.epsilon is None else cfg.epsilon
            cfg.i_reuse = 50 if cfg.i_reuse is None else cfg.i_reuse
            default_strategy = "reuse-q"
        elif cfg.fmt in _IMAGE_FORMATS:
            cfg.epsilon = 0.05 if cfg.epsilon is None else cfg.epsilon
            cfg.i_reuse = 100 if cfg.i_reuse is None else cfg.i_reuse
            default_strategy = "reuse-u"
        else:
            cfg.epsilon = 0.05 if cfg.epsilon is None else cfg.epsilon
            cfg.i_reuse = 100 if cfg.i_reuse is None else cfg.i_reuse
            default_strategy = "none"
        if cfg.strategy is None:
            cfg.strategy = default_strategy if cfg.backend == "fast" else "none"
        if not 0.0 < cfg.train_fraction < 1.0:
            raise ConfigError(f"--train-fraction must be in (0, 1), got {cfg.train_fraction}")
        if not 0.0 < cfg.pixel_fraction <= 1.0:
            raise ConfigError(f"--pixel-fraction must be in (0, 1], got {cfg.pixel_fraction}")
    if cfg.command == "bench":
        if not cfg.suite:
            raise ConfigError("bench needs a non-empty [[suite]] list in --config")
        for i, row in enumerate(cfg.suite):
            if not isinstance(row, dict):
                raise ConfigError(f"suite row {i} must be a table")
            unknown = set(row) - {"algo", "k", "p", "s", "label"}
            if unknown:
                raise ConfigError(f"suite row {i}: unknown keys {sorted(unknown)}")
            if row.get("algo") not in _ALGOS:
                raise ConfigError(f"suite row {i}: algo must be one of {_ALGOS}")
        if cfg.repetitions < 1:
            raise ConfigError(f"--repetitions must be >= 1, got {cfg.repetitions}")
    if cfg.command == "synth":
        if cfg.kind not in ("lowrank", "ratings", "image"):
            raise ConfigError("--kind must be lowrank, ratings, or image")
        if cfg.m < 1 or cfg.n < 1:
            raise ConfigError("--m and --n must be >= 1")
        if not 0.0 < cfg.density <= 1.0:
            raise ConfigError(f"--density must be in (0, 1], got {cfg.density}")
    if cfg.command == "metrics":
        if not cfg.factors:
            raise ConfigError("--factors is required")
        if not os.path.exists(cfg.factors):
            raise DataError(f"factor container not found: {cfg.factors}")
    if not cfg.out:
        cfg.out = os.path.join("runs", cfg.command)


def _json_safe(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _write_summary(cfg: RunConfig, payload: dict) -> str:
    from .ingest import write_run_summary

    path = os.path.join(cfg.out, "summary.json")
    body = {"config": _json_safe(asdict(cfg))}
    body.update(_json_safe(payload))
    write_run_summary(path, body)
    return path


def _load_sparse(cfg: RunConfig):
    """Input file -> SparseMatrix, for the SVD-facing commands."""
    from .ingest import load_image_stacked, load_ratings
    from .sparse import SparseMatrix, read_matrix_market

    if cfg.fmt == "mtx":
        return read_matrix_market(cfg.input)
    if cfg.fmt in _RATING_FORMATS:
        return load_ratings(cfg.input, fmt=cfg.fmt).obs.train_matrix()
    img = load_image_stacked(cfg.input)
    import numpy as np

    X = img.matrix
    m, n = X.shape
    i, j = np.divmod(np.arange(m * n, dtype=np.int64), n)
    return SparseMatrix.from_coo(m, n, i, j, X.ravel())


# ------------------------------------------------------------------ svd

_TABLE_FIELDS = ["algorithm", "k", "p", "s", "wall_time", "cpu_time", "qb_error", "speedup"]


def _write_table(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.DictWriter(fh, fieldnames=_TABLE_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _run_algo(A, algo: str, k: int, p: int, s: int, seed: int, allow_fallback: bool):
    """One SVD by name. Returns (SvdResult, qb_error, wall, cpu)."""
    from .linalg import ORACLE_SVD_CAP, oracle_svd
    from .rsvd import RsvdParams, qb_error, rsvd_basic, rsvd_bki, rsvd_pi

    t0, c0 = time.perf_counter(), time.process_time()
    if algo == "oracle":
        if min(A.shape) > ORACLE_SVD_CAP:
            raise SizeCapError(
                f"oracle SVD refused: min{A.shape} exceeds the {ORACLE_SVD_CAP} cap"
            )
        res = oracle_svd(A.densify()).truncate(k)
    else:
        params = RsvdParams(k=k, p=p, s=s, seed=seed)
        fn = {"basic": rsvd_basic, "pi": rsvd_pi, "bki": rsvd_bki}[algo]
        res, _ = fn(A, params, allow_fallback=allow_fallback)
    wall, cpu = time.perf_counter() - t0, time.process_time() - c0
    err = qb_error(A, res)
    return res, err, wall, cpu


def cmd_svd(cfg: RunConfig) -> int:
    from .completion import write_factor_mm, write_factors

    A = _load_sparse(cfg)
    res, err, wall, cpu = _run_algo(
        A, cfg.algo, cfg.k, cfg.p, cfg.s, cfg.seed, cfg.allow_fallback
    )
    os.makedirs(cfg.out, exist_ok=True)
    write_factors(os.path.join(cfg.out, "factors.bin"), res)
    if cfg.write_mm:
        write_factor_mm(os.path.join(cfg.out, "U.mtx"), res.U)
        write_factor_mm(os.path.join(cfg.out, "S.mtx"), res.S.reshape(-1, 1))
        write_factor_mm(os.path.join(cfg.out, "V.mtx"), res.V)
    row = {"algorithm": cfg.algo, "k": cfg.k, "p": cfg.p, "s": cfg.s,
           "wall_time": f"{wall:.6f}", "cpu_time": f"{cpu:.6f}",
           "qb_error": f"{err:.12g}", "speedup": ""}
    _write_table(os.path.join(cfg.out, "table.csv"), [row])
    _write_summary(cfg, {
        "matrix": {"rows": A.rows, "cols": A.cols, "nnz": A.nnz},
        "qb_error": err, "wall_time": wall, "cpu_time": cpu,
        "rank_returned": int(res.S.shape[0]),
    })
    print(f"{cfg.algo}: k={cfg.k} p={cfg.p} error={err:.6g} "
          f"wall={wall:.3f}s cpu={cpu:.3f}s -> {cfg.out}")
    return 0


# ------------------------------------------------------------- complete

def _completion_params(cfg: RunConfig):
    from .completion import SvtParams

    return SvtParams(
        tau=cfg.tau, delta=cfg.delta, l=cfg.l, epsilon=cfg.epsilon,
        i_max=cfg.i_max, i_reuse=cfg.i_reuse, q_reuse=cfg.q_reuse,
        strategy=cfg.strategy if cfg.backend == "fast" else "none",
        p0=cfg.p0, s=cfg.s, seed=cfg.seed,
    )


def cmd_complete(cfg: RunConfig) -> int:
    import numpy as np

    from .completion import (
        mae,
        svt_fast,
        svt_reference,
        write_factor_mm,
        write_factors,
        write_trace_csv,
    )
    from .ingest import (
        ImageMatrix,
        load_image_stacked,
        load_ratings,
        sample_pixels,
        split_observations,
        write_image_stacked,
    )
    from .rng import RngState
    from .sparse import ObservationSet, read_matrix_market

    img = None
    test_split = None
    extras: dict = {}
    if cfg.fmt in _IMAGE_FORMATS:
        img = load_image_stacked(cfg.input)
        obs = sample_pixels(img, cfg.pixel_fraction, RngState(cfg.seed))
        extras["observed_pixels"] = int(obs.count)
    elif cfg.fmt in _RATING_FORMATS:
        data = load_ratings(cfg.input, fmt=cfg.fmt)
        tagged, cold = split_observations(
            data.obs, cfg.train_fraction, RngState(cfg.seed)
        )
        obs = tagged
        test_split = tagged.subset(ObservationSet.TEST)
        extras["duplicates_dropped"] = data.duplicate_count
        extras["cold_start_ids"] = cold
        extras["test_count"] = tagged.test_count
    else:
        sp = read_matrix_market(cfg.input)
        obs = ObservationSet(sp.rows, sp.cols, sp.coo_rows(), sp.indices, sp.data)

    params = _completion_params(cfg)
    if cfg.backend == "oracle":
        result = svt_reference(obs, params, backend="oracle")
    elif cfg.backend == "bki":
        result = svt_reference(obs, params, backend="rsvd-bki")
    else:
        result = svt_fast(obs, params)

    os.makedirs(cfg.out, exist_ok=True)
    # MAE scope depends on the workload: every pixel against the source
    # image, held-out ratings for rating data, observed entries otherwise
    if img is not None:
        pred = np.clip(result.reconstruct(), 0.0, 255.0)
        run_mae = mae(pred.ravel(), img.matrix.ravel())
        mae_scope = "all-pixels"
        recovered = ImageMatrix(img.width, img.height, img.channels, pred)
        ext = os.path.splitext(cfg.input)[1].lower() or ".ppm"
        write_image_stacked(os.path.join(cfg.out, "recovered" + ext), recovered)
    elif test_split is not None and test_split[0].shape[0] > 0:
        t_rows, t_cols, t_vals = test_split
        pred = result.predict(t_rows, t_cols)
        run_mae = mae(pred, t_vals)
        mae_scope = "held-out"
    else:
        pred = result.predict(obs.rows, obs.cols)
        run_mae = mae(pred, obs.values)
        mae_scope = "observed"

    write_factors(os.path.join(cfg.out, "factors.bin"), result)
    if cfg.write_mm and result.rank > 0:
        write_factor_mm(os.path.join(cfg.out, "U.mtx"), result.U)
        write_factor_mm(os.path.join(cfg.out, "S.mtx"), result.S.reshape(-1, 1))
        write_factor_mm(os.path.join(cfg.out, "V.mtx"), result.V)
    write_trace_csv(os.path.join(cfg.out, "trace.csv"), result.trace)
    _write_summary(cfg, {
        "converged": result.converged,
        "iterations": result.iterations,
        "rank": result.rank,
        "residual": result.residual,
        "mae": run_mae,
        "mae_scope": mae_scope,
        "svd_time": result.svd_time,
        "update_time": result.update_time,
        "total_time": result.total_time,
        "hard_stops": result.hard_stops,
        "events": result.events[-20:],
        **extras,
    })
    flag = "" if result.converged else " [did not converge]"
    print(f"complete: rank={result.rank} iters={result.iterations} "
          f"residual={result.residual:.4g} mae={run_mae:.4g} ({mae_scope})"
          f"{flag} -> {cfg.out}")
    return 0


# ---------------------------------------------------------------- bench

def cmd_bench(cfg: RunConfig) -> int:
    import statistics

    A = _load_sparse(cfg)
    rows = []
    for spec in cfg.suite:
        algo = spec["algo"]
        k = int(spec.get("k", cfg.k))
        p = int(spec.get("p", cfg.p if cfg.p is not None else 4))
        s = int(spec.get("s", cfg.s))
        walls, cpus = [], []
        err = None
        for _ in range(cfg.repetitions):
            _, err, wall, cpu = _run_algo(A, algo, k, p, s, cfg.seed, False)
            walls.append(wall)
            cpus.append(cpu)
        rows.append({
            "label": spec.get("label", f"{algo}-p{p}"),
            "algorithm": algo, "k": k, "p": p, "s": s,
            "wall_time": statistics.median(walls),
            "cpu_time": statistics.median(cpus),
            "qb_error": err,
        })

    base_label = cfg.baseline or rows[0]["label"]
    base = next((r for r in rows if r["label"] == base_label or r["algorithm"] == base_label), None)
    if base is None:
        raise ConfigError(f"baseline {base_label!r} matches no suite row")
    for r in rows:
        r["speedup"] = base["wall_time"] / r["wall_time"] if r["wall_time"] > 0 else float("inf")

    os.makedirs(cfg.out, exist_ok=True)
    csv_rows = [{
        "algorithm": r["algorithm"], "k": r["k"], "p": r["p"], "s": r["s"],
        "wall_time": f"{r['wall_time']:.6f}", "cpu_time": f"{r['cpu_time']:.6f}",
        "qb_error": f"{r['qb_error']:.12g}", "speedup": f"{r['speedup']:.4f}",
    } for r in rows]
    _write_table(os.path.join(cfg.out, "table.csv"), csv_rows)

    header = f"{'label':<14} {'algo':<7} {'k':>4} {'p':>3} {'time(s)':>10} {'error':>12} {'Sp.':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['label']:<14} {r['algorithm']:<7} {r['k']:>4} {r['p']:>3} "
                     f"{r['wall_time']:>10.4f} {r['qb_error']:>12.6g} {r['speedup']:>7.2f}")
    table_txt = "\n".join(lines) + "\n"
    with open(os.path.join(cfg.out, "table.txt"), "w", encoding="ascii") as fh:
        fh.write(table_txt)
    _write_summary(cfg, {
        "matrix": {"rows": A.rows, "cols": A.cols, "nnz": A.nnz},
        "baseline": base["label"],
        "rows": [{k: v for k, v in r.items()} for r in rows],
    })
    print(table_txt, end="")
    print(f"-> {cfg.out}")
    return 0


# ---------------------------------------------------------------- synth

def cmd_synth(cfg: RunConfig) -> int:
    import numpy as np

    from .ingest import (
        ImageMatrix,
        synth_low_rank,
        synth_ratings,
        write_image_stacked,
        write_ratings,
    )
    from .rng import RngState
    from .sparse import ObservationSet, write_matrix_market

    rng = RngState(cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    payload: dict = {"kind": cfg.kind}

    if cfg.kind == "lowrank":
        synth = synth_low_rank(cfg.m, cfg.n, cfg.rank, rng, spectrum=cfg.spectrum,
                               alpha=cfg.alpha, noise=cfg.noise, scale=cfg.scale)
        truth_path = os.path.join(cfg.out, "truth.mtx")
        write_matrix_market(truth_path, synth.matrix)
        dense = synth.matrix.densify()
        n_obs = max(1, int(round(cfg.density * cfg.m * cfg.n)))
        flat = np.sort(rng.choice_without_replacement(cfg.m * cfg.n, n_obs))
        i, j = np.divmod(np.asarray(flat, dtype=np.int64), cfg.n)
        obs = ObservationSet(cfg.m, cfg.n, i, j, dense[i, j])
        obs_path = os.path.join(cfg.out, "obs.mtx")
        write_matrix_market(obs_path, obs.train_matrix())
        payload.update(truth=truth_path, observations=obs_path,
                       observed=n_obs, singular_values=synth.S.tolist())
    elif cfg.kind == "ratings":
        obs = synth_ratings(rng, m=cfg.m, n=cfg.n, count=cfg.count, rank=cfg.rank)
        path = os.path.join(cfg.out, "ratings.tsv")
        write_ratings(path, obs, fmt="tsv")
        payload.update(ratings=path, users=cfg.m, items=cfg.n, count=cfg.count)
    else:
        # smooth separable modes: a low-rank image-like target
        h, w = cfg.m, cfg.n
        x = np.linspace(0.0, 1.0, h)
        y = np.linspace(0.0, 1.0, w)
        r = max(1, min(cfg.rank, 8))
        channels = []
        for _ in range(3):
            M = np.zeros((h, w))
            for j in range(r):
                wj = rng.normal_pairs(1)[0] / (j + 1.0)
                M += wj * np.outer(np.cos(np.pi * j * x + 0.3), np.cos(np.pi * j * y))
            lo, hi = M.min(), M.max()
            span = hi - lo if hi > lo else 1.0
            channels.append(16.0 + 224.0 * (M - lo) / span)
        img = ImageMatrix(w, h, 3, np.concatenate(channels, axis=0))
        path = os.path.join(cfg.out, "image.ppm")
        write_image_stacked(path, img)
        payload.update(image=path, height=h, width=w, modes=r)

    _write_summary(cfg, payload)
    print(f"synth {cfg.kind} -> {cfg.out}")
    return 0


# -------------------------------------------------------------- metrics

def cmd_metrics(cfg: RunConfig) -> int:
    import numpy as np

    from .completion import mae, read_factors
    from .ingest import load_image_stacked, load_ratings
    from .sparse import read_matrix_market

    U, S, V = read_factors(cfg.factors)
    if cfg.fmt == "mtx":
        sp = read_matrix_market(cfg.input)
        i, j, truth = sp.coo_rows(), sp.indices, sp.data
        scope = "stored-entries"
    elif cfg.fmt in _RATING_FORMATS:
        obs = load_ratings(cfg.input, fmt=cfg.fmt).obs
        i, j, truth = obs.rows, obs.cols, obs.values
        scope = "all-ratings"
    else:
        img = load_image_stacked(cfg.input)
        m, n = img.matrix.shape
        i, j = np.divmod(np.arange(m * n, dtype=np.int64), n)
        truth = img.matrix.ravel()
        scope = "all-pixels"
    if truth.shape[0] == 0:
        raise DataError("reference data has no entries to score against")
    if U.shape[0] <= i.max() or V.shape[0] <= j.max():
        raise DataError(
            f"factor dims {U.shape[0]}x{V.shape[0]} do not cover reference "
            f"indices {i.max() + 1}x{j.max() + 1}"
        )
    pred = np.einsum("er,er->e", U[i] * S, V[j]) if S.size else np.zeros(i.shape[0])
    run_mae = mae(pred, truth)
    rmse = float(np.sqrt(np.mean((pred - truth) ** 2)))
    os.makedirs(cfg.out, exist_ok=True)
    _write_summary(cfg, {"mae": run_mae, "rmse": rmse, "count": int(truth.shape[0]),
                         "scope": scope, "rank": int(S.shape[0])})
    print(f"metrics: mae={run_mae:.6g} rmse={rmse:.6g} over {truth.shape[0]} entries ({scope})")
    return 0


# ----------------------------------------------------------------- main

_DISPATCH = {
    "svd": cmd_svd,
    "complete": cmd_complete,
    "bench": cmd_bench,
    "synth": cmd_synth,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _merge(args)
        _validate(cfg)
        _pin_threads(cfg.threads)
        return _DISPATCH[cfg.command](cfg)
    except (ConfigError, ValueError) as exc:
        # engine-level ValueErrors are parameter contract violations
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (RankDeficiencyError, NumericalError, SizeCapError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
