"""Benchmark harness: declares, runs and serializes the step-size
convergence experiments.

Runs fan out over a vectorized multi-chain runner whose arithmetic matches
the scalar ``run_chain`` bit for bit (per-run generators, identical update
expressions), so results do not depend on how runs are scheduled.  All
cross-run communication is a deterministic reduce ordered by run index.
"""

from __future__ import annotations

import configparser
import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import (
    BiasMse,
    LogLogFit,
    WeakOrderResult,
    estimate_bias_mse,
    fit_loglog_slope,
    weak_order_estimate,
)
from .integrators import IntegratorConfig, IntegratorKind, SamplerConfig, derive_seed
from .models import (
    EPOCH_PERMUTATION,
    IID_WITH_REPLACEMENT,
    DatasetMeta,
    GaussianConjugateModel,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .schedules import StepSchedule, optimal_alpha

__all__ = [
    "AllDivergedError",
    "ConfigError",
    "CsvFormatError",
    "CSV_COLUMNS",
    "EnsembleResult",
    "ExperimentConfig",
    "ResultRow",
    "read_csv",
    "resolve_model",
    "run_alpha_sweep",
    "run_ensemble",
    "run_grid_search",
    "run_rate_sweep",
    "run_seeds",
    "run_stationary_order",
    "run_weak_order",
    "write_csv",
]

EXPERIMENT_KINDS = (
    "stationary-order",
    "rate-sweep",
    "alpha-sweep",
    "grid-search",
    "weak-order",
)

_DIVERGENCE_LIMIT = 1e10


class ConfigError(ValueError):
    """The experiment configuration is malformed or inconsistent."""


class AllDivergedError(RuntimeError):
    """Every run of an experiment (or every grid-search candidate) diverged."""


class CsvFormatError(ValueError):
    """A results CSV failed to parse; the message carries the line number."""


def run_seeds(base_seed: int, n_runs: int) -> list[np.random.SeedSequence]:
    """Per-run seeds derived from (base seed, run index) only, so permuting
    run execution order cannot change any run's stream."""
    return [np.random.SeedSequence((base_seed, r)) for r in range(n_runs)]


# ---------------------------------------------------------------------------
# Vectorized multi-chain runner


@dataclass(frozen=True)
class EnsembleResult:
    checkpoints: tuple[int, ...]
    plain: np.ndarray  # (n_runs, n_checkpoints) plain averages; NaN once diverged
    weighted: np.ndarray  # same layout, step-weighted averages
    kinetic: np.ndarray  # same layout, plain averages of p.p (NaN for SGLD)
    diverged_at: np.ndarray  # (n_runs,) global step index, -1 if never


class _BatchBlocks:
    """Produces per-run minibatch sums in blocks, mirroring MinibatchStream."""

    def __init__(self, data: np.ndarray, batch_size: int, mode: str, gens):
        self.data = data
        self.n = data.size
        self.size = batch_size
        self.mode = mode
        self.gens = gens
        self.m_full = self.n // batch_size
        self.rem = self.n - self.m_full * batch_size
        self.per_epoch = self.m_full + (1 if self.rem else 0)
        self.buffers = [np.empty(0) for _ in gens]
        self.offsets = [0] * len(gens)
        self.batch_index = 0

    def _epoch_sums(self, gen) -> np.ndarray:
        perm = gen.permutation(self.n)
        x = self.data[perm]
        sums = x[: self.m_full * self.size].reshape(self.m_full, self.size).sum(axis=1)
        if self.rem:
            sums = np.append(sums, np.sum(x[self.m_full * self.size :]))
        return sums

    def next_block(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        n_runs = len(self.gens)
        out = np.empty((n_runs, k))
        counts = np.empty(k, dtype=np.int64)
        if self.mode == IID_WITH_REPLACEMENT:
            counts[:] = self.size
            for r, gen in enumerate(self.gens):
                idx = gen.integers(0, self.n, size=(k, self.size))
                out[r] = self.data[idx].sum(axis=1)
        else:
            for j in range(k):
                pos = (self.batch_index + j) % self.per_epoch
                counts[j] = self.size if pos < self.m_full else self.rem
            for r in range(n_runs):
                buf, off = self.buffers[r], self.offsets[r]
                filled = 0
                while filled < k:
                    if off >= buf.size:
                        buf = self._epoch_sums(self.gens[r])
                        off = 0
                    take = min(k - filled, buf.size - off)
                    out[r, filled : filled + take] = buf[off : off + take]
                    off += take
                    filled += take
                self.buffers[r], self.offsets[r] = buf, off
        self.batch_index += k
        return out, counts


def run_ensemble(
    model: GaussianConjugateModel,
    config: SamplerConfig,
    L: int,
    seeds,
    *,
    checkpoints=None,
    burn_in: int = 0,
    chunk: int = 4096,
) -> EnsembleResult:
    """Run len(seeds) independent chains in lockstep over numpy lanes.

    Produces exactly the accumulators run_chain would produce per run for the
    same per-run seed; diverged lanes are frozen to NaN and reported through
    ``diverged_at`` (global 1-based step index, burn-in included).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    ckpts = [int(c) for c in (checkpoints if checkpoints is not None else [L])]
    if ckpts != sorted(set(ckpts)) or ckpts[0] < 1 or ckpts[-1] > L:
        raise ValueError("checkpoints must be increasing accumulation indices in [1, L]")
    kind = config.integrator.kind
    D = config.integrator.D
    n_runs = len(seeds)

    noise_gens = []
    stream_gens = []
    for s in seeds:
        seq = s if isinstance(s, np.random.SeedSequence) else np.random.SeedSequence(s)
        noise_gens.append(np.random.default_rng(derive_seed(seq, 0)))
        stream_gens.append(np.random.default_rng(derive_seed(seq, 1)))

    th = np.empty(n_runs)
    p = np.empty(n_runs) if kind.has_momentum else None
    xi = None
    init = config.init_state
    if init is not None:
        if init.theta.size != 1:
            raise ValueError("the ensemble runner is specialised to scalar states")
        th[:] = init.theta[0]
        if p is not None:
            p[:] = init.p[0]
        if kind is IntegratorKind.SGNHT:
            xi = np.full(n_runs, D if init.xi is None else init.xi)
    else:
        for r, gen in enumerate(noise_gens):
            th[r] = gen.standard_normal(1)[0]
            if p is not None:
                p[r] = gen.standard_normal(1)[0]
        if kind is IntegratorKind.SGNHT:
            xi = np.full(n_runs, D)

    batcher = None
    if config.batch_size is not None:
        batcher = _BatchBlocks(model.data, config.batch_size, config.batch_mode, stream_gens)
    n_plus_1 = model.n_data + 1
    full_sum = model.data_sum
    n_data = model.n_data

    sched = config.schedule
    phi_sum = np.zeros(n_runs)
    weighted_sum = np.zeros(n_runs)
    kinetic_sum = np.zeros(n_runs)
    s_acc = 0.0
    l_acc = 0
    diverged_at = np.full(n_runs, -1, dtype=np.int64)
    alive = np.ones(n_runs, dtype=bool)
    plain = np.full((n_runs, len(ckpts)), np.nan)
    weighted = np.full((n_runs, len(ckpts)), np.nan)
    kinetic = np.full((n_runs, len(ckpts)), np.nan)
    ck_col = {c: j for j, c in enumerate(ckpts)}

    total = burn_in + L
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while step < total:
            k = min(chunk, total - step)
            zet = np.empty((n_runs, k))
            for r, gen in enumerate(noise_gens):
                zet[r] = gen.standard_normal(k)
            bsums = counts = None
            if batcher is not None:
                bsums, counts = batcher.next_block(k)
            for j in range(k):
                step += 1
                h = sched.step_size(step)
                z = zet[:, j]
                if batcher is not None:
                    nb = int(counts[j])
                    scale = n_data / nb
                if kind is IntegratorKind.SGLD_EULER:
                    g = (n_plus_1 * th - full_sum) if batcher is None else scale * (nb * th - bsums[:, j]) + th
                    th = th - g * h + math.sqrt(2.0 * h) * z
                    bad = ~np.isfinite(th) | (np.abs(th) > _DIVERGENCE_LIMIT)
                elif kind is IntegratorKind.SGHMC_EULER:
                    g = (n_plus_1 * th - full_sum) if batcher is None else scale * (nb * th - bsums[:, j]) + th
                    p = (1.0 - D * h) * p - g * h + math.sqrt(2.0 * D * h) * z
                    th = th + p * h
                    bad = ~np.isfinite(th) | (np.abs(th) > _DIVERGENCE_LIMIT)
                    bad |= ~np.isfinite(p) | (np.abs(p) > _DIVERGENCE_LIMIT)
                elif kind is IntegratorKind.SGHMC_ABOBA:
                    half = 0.5 * h
                    decay = math.exp(-0.5 * D * h)
                    th1 = th + p * half
                    p1 = decay * p
                    g = (n_plus_1 * th1 - full_sum) if batcher is None else scale * (nb * th1 - bsums[:, j]) + th1
                    p2 = p1 - g * h + math.sqrt(2.0 * D * h) * z
                    p = decay * p2
                    th = th1 + p * half
                    bad = ~np.isfinite(th) | (np.abs(th) > _DIVERGENCE_LIMIT)
                    bad |= ~np.isfinite(p) | (np.abs(p) > _DIVERGENCE_LIMIT)
                else:  # SGNHT
                    g = (n_plus_1 * th - full_sum) if batcher is None else scale * (nb * th - bsums[:, j]) + th
                    p = (1.0 - xi * h) * p - g * h + math.sqrt(2.0 * D * h) * z
                    th = th + p * h
                    # the division keeps bit parity with the scalar p.p/dim
                    xi = xi + (p * p / 1 - 1.0) * h
                    bad = ~np.isfinite(th) | (np.abs(th) > _DIVERGENCE_LIMIT)
                    bad |= ~np.isfinite(p) | (np.abs(p) > _DIVERGENCE_LIMIT)
                    bad |= ~np.isfinite(xi) | (np.abs(xi) > _DIVERGENCE_LIMIT)
                if bad.any():
                    newly = bad & alive
                    if newly.any():
                        diverged_at[newly] = step
                        alive &= ~newly
                        th[newly] = np.nan
                        if p is not None:
                            p[newly] = np.nan
                        if xi is not None:
                            xi[newly] = np.nan
                if step > burn_in:
                    l_acc += 1
                    phi = th * th
                    phi_sum += phi
                    weighted_sum += h * phi
                    if p is not None:
                        kinetic_sum += p * p
                    s_acc += h
                    col = ck_col.get(l_acc)
                    if col is not None:
                        plain[:, col] = phi_sum / l_acc
                        weighted[:, col] = weighted_sum / s_acc
                        if p is not None:
                            kinetic[:, col] = kinetic_sum / l_acc
    return EnsembleResult(tuple(ckpts), plain, weighted, kinetic, diverged_at)


# ---------------------------------------------------------------------------
# Result rows and CSV round-trip

CSV_COLUMNS = (
    "experiment",
    "integrator",
    "alpha",
    "prefactor",
    "D",
    "L",
    "h",
    "n_runs",
    "n_diverged",
    "bias",
    "bias_se",
    "signed_bias",
    "mse",
    "mse_se",
)


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    integrator: str
    alpha: float | None
    prefactor: float | None
    D: float | None
    L: int | None
    h: float | None
    n_runs: int
    n_diverged: int
    bias: float | None
    bias_se: float | None
    signed_bias: float | None
    mse: float | None
    mse_se: float | None

    def usable_for_fit(self) -> bool:
        """Rows with a positive finite bias and a majority of finished runs."""
        return (
            self.bias is not None
            and math.isfinite(self.bias)
            and self.bias > 0.0
            and 2 * self.n_diverged <= self.n_runs
        )


def _fmt_float(v: float | None) -> str:
    return "" if v is None else f"{v:.17g}"


def _fmt_int(v: int | None) -> str:
    return "" if v is None else str(v)


def write_csv(rows, path) -> None:
    """Fixed header order, 17 significant digits, lossless round-trip."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.experiment,
                    row.integrator,
                    _fmt_float(row.alpha),
                    _fmt_float(row.prefactor),
                    _fmt_float(row.D),
                    _fmt_int(row.L),
                    _fmt_float(row.h),
                    str(row.n_runs),
                    str(row.n_diverged),
                    _fmt_float(row.bias),
                    _fmt_float(row.bias_se),
                    _fmt_float(row.signed_bias),
                    _fmt_float(row.mse),
                    _fmt_float(row.mse_se),
                ]
            )


def _parse_float(text: str, lineno: int, column: str) -> float | None:
    if text == "":
        return None
    try:
        return float(text)
    except ValueError as exc:
        raise CsvFormatError(f"line {lineno}: bad float in column {column!r}: {text!r}") from exc


def _parse_int(text: str, lineno: int, column: str) -> int | None:
    if text == "":
        return None
    try:
        return int(text)
    except ValueError as exc:
        raise CsvFormatError(f"line {lineno}: bad int in column {column!r}: {text!r}") from exc


def read_csv(path) -> list[ResultRow]:
    rows: list[ResultRow] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise CsvFormatError(f"line 1: expected header {','.join(CSV_COLUMNS)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(CSV_COLUMNS):
                raise CsvFormatError(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(rec)}")
            n_runs = _parse_int(rec[7], lineno, "n_runs")
            n_div = _parse_int(rec[8], lineno, "n_diverged")
            if n_runs is None or n_div is None:
                raise CsvFormatError(f"line {lineno}: n_runs / n_diverged must be present")
            rows.append(
                ResultRow(
                    experiment=rec[0],
                    integrator=rec[1],
                    alpha=_parse_float(rec[2], lineno, "alpha"),
                    prefactor=_parse_float(rec[3], lineno, "prefactor"),
                    D=_parse_float(rec[4], lineno, "D"),
                    L=_parse_int(rec[5], lineno, "L"),
                    h=_parse_float(rec[6], lineno, "h"),
                    n_runs=n_runs,
                    n_diverged=n_div,
                    bias=_parse_float(rec[9], lineno, "bias"),
                    bias_se=_parse_float(rec[10], lineno, "bias_se"),
                    signed_bias=_parse_float(rec[11], lineno, "signed_bias"),
                    mse=_parse_float(rec[12], lineno, "mse"),
                    mse_se=_parse_float(rec[13], lineno, "mse_se"),
                )
            )
    return rows


# ---------------------------------------------------------------------------
# Experiment configuration


_INTEGRATOR_NAMES = {k.value: k for k in IntegratorKind}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    target: str = "bias"
    family: str = "fixed"  # how h relates to L in sweeps: fixed | decreasing
    n_runs: int = 200
    base_seed: int = 0
    threads: int = 1
    out: str | None = None
    # model
    n_data: int = 1000
    true_mean: float = 0.0
    data_seed: int = 42
    data_file: str | None = None
    # sampler
    integrators: tuple[IntegratorKind, ...] = (IntegratorKind.SGHMC_ABOBA,)
    D: float = 10.0
    batch_size: int | None = 10
    batch_mode: str = EPOCH_PERMUTATION
    # sweep grids / knobs
    h_grid: tuple[float, ...] = ()
    L_grid: tuple[int, ...] = ()
    alpha_grid: tuple[float, ...] = ()
    prefactor_grid: tuple[float, ...] = ()
    D_grid: tuple[float, ...] = ()
    chain_length: int = 100_000
    burn_in_time: float = 0.0
    alpha: float | None = None
    prefactors: tuple[tuple[str, float], ...] = ()
    pilot_L: int = 500
    weak_samples: int | str = "exact"
    weak_substeps: int = 1000
    weak_start: tuple[float, float] = (1.0, 0.0)

    def prefactor_for(self, kind: IntegratorKind) -> float:
        table = dict(self.prefactors)
        if kind.value in table:
            return table[kind.value]
        if "" in table:
            return table[""]
        raise ConfigError(f"no prefactor configured for integrator {kind.value!r}")

    def alpha_for(self, kind: IntegratorKind) -> float:
        if self.alpha is not None:
            return self.alpha
        return optimal_alpha(self.target, kind.order)

    @staticmethod
    def load(path, *, kind: str | None = None) -> "ExperimentConfig":
        return _load_config(path, kind_override=kind)


def _split_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def _load_config(path, kind_override: str | None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    def get(section, option, default=None):
        if parser.has_option(section, option):
            return parser.get(section, option).strip()
        return default

    def get_float(section, option, default=None):
        raw = get(section, option)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {option}: bad float {raw!r}") from exc

    def get_int(section, option, default=None):
        raw = get(section, option)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {option}: bad int {raw!r}") from exc

    kind = kind_override or get("experiment", "kind")
    if kind is None:
        raise ConfigError("[experiment] kind missing (or pass a subcommand)")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    cfg_kind = get("experiment", "kind")
    if cfg_kind is not None and kind_override is not None and cfg_kind != kind_override:
        raise ConfigError(f"config declares kind={cfg_kind!r} but subcommand is {kind_override!r}")

    target = get("experiment", "target", "bias")
    if target not in ("bias", "mse"):
        raise ConfigError(f"[experiment] target must be bias or mse, got {target!r}")
    family = get("experiment", "family", "fixed")
    if family not in ("fixed", "decreasing"):
        raise ConfigError(f"[experiment] family must be fixed or decreasing, got {family!r}")
    n_runs = get_int("experiment", "runs", 200)
    if n_runs < 2:
        raise ConfigError("[experiment] runs must be >= 2")
    threads = get_int("experiment", "threads", 1)
    if threads < 1:
        raise ConfigError("[experiment] threads must be >= 1")

    names = _split_list(get("sampler", "integrators", "sghmc-aboba"))
    integrators = []
    for name in names:
        if name not in _INTEGRATOR_NAMES:
            raise ConfigError(
                f"unknown integrator {name!r}; expected one of {sorted(_INTEGRATOR_NAMES)}"
            )
        integrators.append(_INTEGRATOR_NAMES[name])
    if not integrators:
        raise ConfigError("[sampler] integrators is empty")

    batch_raw = get("sampler", "batch", "10")
    batch_size: int | None
    if batch_raw == "full":
        batch_size = None
    else:
        try:
            batch_size = int(batch_raw)
        except ValueError as exc:
            raise ConfigError(f"[sampler] batch: expected int or 'full', got {batch_raw!r}") from exc
        if batch_size < 1:
            raise ConfigError("[sampler] batch must be >= 1")
    batch_mode = get("sampler", "batch_mode", EPOCH_PERMUTATION)
    if batch_mode not in (EPOCH_PERMUTATION, IID_WITH_REPLACEMENT):
        raise ConfigError(f"[sampler] batch_mode: unknown mode {batch_mode!r}")

    n_data = get_int("model", "n", 1000)
    if n_data < 0:
        raise ConfigError("[model] n must be >= 0")
    if batch_size is not None and n_data == 0:
        raise ConfigError("cannot minibatch an empty dataset; use batch = full")
    if (
        batch_size is not None
        and batch_mode == EPOCH_PERMUTATION
        and n_data % batch_size != 0
    ):
        raise ConfigError("[sampler] batch must divide the dataset size in epoch-permutation mode")

    def float_list(section, option):
        raw = get(section, option)
        if raw is None:
            return ()
        try:
            return tuple(float(tok) for tok in _split_list(raw))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {option}: bad float list {raw!r}") from exc

    def int_list(section, option):
        raw = get(section, option)
        if raw is None:
            return ()
        try:
            return tuple(int(tok) for tok in _split_list(raw))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {option}: bad int list {raw!r}") from exc

    prefactor_grid: tuple[float, ...] = ()
    raw_pg = get("sweep", "prefactor_grid")
    if raw_pg is not None:
        if ":" in raw_pg:
            parts = raw_pg.split(":")
            if len(parts) != 3:
                raise ConfigError("[sweep] prefactor_grid range must be start:stop:step")
            try:
                start, stop, step = (float(tok) for tok in parts)
            except ValueError as exc:
                raise ConfigError(f"[sweep] prefactor_grid: bad range {raw_pg!r}") from exc
            if step <= 0 or stop < start:
                raise ConfigError("[sweep] prefactor_grid: need step > 0 and stop >= start")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            prefactor_grid = tuple(start + i * step for i in range(count))
        else:
            prefactor_grid = float_list("sweep", "prefactor_grid")

    prefactors: list[tuple[str, float]] = []
    if parser.has_section("sweep"):
        for option in parser.options("sweep"):
            if option == "prefactor":
                prefactors.append(("", get_float("sweep", "prefactor")))
            elif option.startswith("prefactor."):
                name = option.split(".", 1)[1]
                if name not in _INTEGRATOR_NAMES:
                    raise ConfigError(f"[sweep] {option}: unknown integrator {name!r}")
                prefactors.append((name, get_float("sweep", option)))

    cfg = ExperimentConfig(
        kind=kind,
        target=target,
        family=family,
        n_runs=n_runs,
        base_seed=get_int("experiment", "seed", 0),
        threads=threads,
        out=get("experiment", "out"),
        n_data=n_data,
        true_mean=get_float("model", "mu", 0.0),
        data_seed=get_int("model", "seed", 42),
        data_file=get("model", "file"),
        integrators=tuple(integrators),
        D=get_float("sampler", "d", 10.0),
        batch_size=batch_size,
        batch_mode=batch_mode,
        h_grid=float_list("sweep", "h_grid"),
        L_grid=int_list("sweep", "l_grid"),
        alpha_grid=float_list("sweep", "alpha_grid"),
        prefactor_grid=prefactor_grid,
        D_grid=float_list("sweep", "d_grid") or (get_float("sampler", "d", 10.0),),
        chain_length=get_int("sweep", "l", 100_000),
        burn_in_time=get_float("sweep", "burn_in_time", 0.0),
        alpha=get_float("sweep", "alpha"),
        prefactors=tuple(prefactors),
        pilot_L=get_int("sweep", "pilot_l", 500),
        weak_samples=_parse_weak_samples(get("sweep", "weak_samples", "exact")),
        weak_substeps=get_int("sweep", "weak_substeps", 1000),
        weak_start=(
            get_float("sweep", "weak_start_theta", 1.0),
            get_float("sweep", "weak_start_p", 0.0),
        ),
    )
    _validate_grids(cfg)
    return cfg


def _parse_weak_samples(raw: str):
    if raw == "exact":
        return "exact"
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"[sweep] weak_samples: expected 'exact' or an int, got {raw!r}") from exc


def _validate_grids(cfg: ExperimentConfig) -> None:
    # span checks carry 1% slack so integer grids like {100 .. 3162} count
    # as the 1.5 decades they are meant to be
    if cfg.kind == "stationary-order":
        if len(cfg.h_grid) < 2:
            raise ConfigError("stationary-order needs an h_grid with >= 2 points")
        if max(cfg.h_grid) / min(cfg.h_grid) < 10.0 * 0.99:
            raise ConfigError("stationary-order h_grid must span at least one decade")
    elif cfg.kind == "rate-sweep":
        if len(cfg.L_grid) < 3:
            raise ConfigError("rate-sweep needs an l_grid with >= 3 points")
        if max(cfg.L_grid) / min(cfg.L_grid) < 10**1.5 * 0.99:
            raise ConfigError("rate-sweep l_grid must span at least 1.5 decades")
    elif cfg.kind == "alpha-sweep":
        if not cfg.alpha_grid:
            raise ConfigError("alpha-sweep needs an alpha_grid")
        if not cfg.L_grid:
            raise ConfigError("alpha-sweep needs an l_grid")
    elif cfg.kind == "grid-search":
        if not cfg.prefactor_grid:
            raise ConfigError("grid-search needs a prefactor_grid")
    elif cfg.kind == "weak-order":
        if len(cfg.h_grid) < 3:
            raise ConfigError("weak-order needs an h_grid with >= 3 points")


def resolve_model(cfg: ExperimentConfig, out_dir=".") -> tuple[GaussianConjugateModel, Path | None]:
    """Load the persisted dataset if present, else generate it once from the
    configured seed and persist it, so bias/MSE are always measured against
    the posterior of a fixed dataset."""
    if cfg.n_data == 0:
        return GaussianConjugateModel(np.empty(0)), None
    path = Path(cfg.data_file) if cfg.data_file else Path(out_dir) / (
        f"dataset-seed{cfg.data_seed}-n{cfg.n_data}.txt"
    )
    if path.exists():
        values, meta = load_dataset(path)
        if meta.n != cfg.n_data:
            raise ConfigError(f"{path}: dataset has n={meta.n}, config wants n={cfg.n_data}")
        return GaussianConjugateModel(values), path
    values = generate_dataset(cfg.data_seed, cfg.n_data, cfg.true_mean)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(path, values, DatasetMeta(cfg.data_seed, cfg.n_data, cfg.true_mean, 1.0))
    return GaussianConjugateModel(values), path


# ---------------------------------------------------------------------------
# Experiments


def _map_tasks(fn, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def _stats(averages: np.ndarray, phi_bar: float) -> tuple[BiasMse | None, int]:
    finite = averages[np.isfinite(averages)]
    n_div = int(averages.size - finite.size)
    if finite.size >= 2:
        return estimate_bias_mse(finite, phi_bar), n_div
    return None, n_div


def _row(experiment, kind, est, n_div, n_runs, *, alpha=None, prefactor=None, D=None, L=None, h=None):
    return ResultRow(
        experiment=experiment,
        integrator=kind.value,
        alpha=alpha,
        prefactor=prefactor,
        D=D,
        L=L,
        h=h,
        n_runs=n_runs,
        n_diverged=n_div,
        bias=None if est is None else est.bias,
        bias_se=None if est is None else est.bias_se,
        signed_bias=None if est is None else est.signed_bias,
        mse=None if est is None else est.mse,
        mse_se=None if est is None else est.mse_se,
    )


def _fit_or_none(points) -> LogLogFit | None:
    pts = list(points)
    if len(pts) < 3:
        return None
    return fit_loglog_slope(pts)


def _sampler(cfg: ExperimentConfig, kind: IntegratorKind, schedule: StepSchedule, D=None) -> SamplerConfig:
    friction = cfg.D if D is None else D
    if kind is IntegratorKind.SGLD_EULER:
        friction = 0.0
    return SamplerConfig(
        integrator=IntegratorConfig(kind, friction),
        schedule=schedule,
        batch_size=cfg.batch_size,
        batch_mode=cfg.batch_mode,
    )


@dataclass(frozen=True)
class StationaryOrderResult:
    rows: list[ResultRow]
    slopes: dict[str, LogLogFit | None]  # position-moment bias-vs-h fit
    kinetic_slopes: dict[str, LogLogFit | None]  # momentum-moment bias-vs-h fit


def run_stationary_order(model: GaussianConjugateModel, cfg: ExperimentConfig) -> StationaryOrderResult:
    """Stationary bias of the plain sample average at each fixed h, plus the
    fitted log-log bias-vs-h slope per integrator.

    Two witnesses of the invariant-measure error are reported per grid
    point: the position moment E[theta.theta] against the exact posterior
    value (rows labelled ``stationary-order``) and, for momentum samplers,
    the kinetic moment E[p.p]/dim against its exact stationary value 1
    (rows labelled ``stationary-order-kinetic``).  On a Gaussian target the
    position moment of the Euler scheme superconverges (its leading
    invariant error sits in the momentum marginal), so the kinetic witness
    is the one that exposes each scheme's order.
    """
    phi_bar = model.posterior_average_phi2()
    seeds = run_seeds(cfg.base_seed, cfg.n_runs)
    tasks = [(kind, h) for kind in cfg.integrators for h in cfg.h_grid]

    def evaluate(task):
        kind, h = task
        burn_in = int(round(cfg.burn_in_time / h))
        ens = run_ensemble(
            model,
            _sampler(cfg, kind, StepSchedule.fixed(h)),
            cfg.chain_length,
            seeds,
            burn_in=burn_in,
        )
        friction = None if kind is IntegratorKind.SGLD_EULER else cfg.D
        est, n_div = _stats(ens.plain[:, -1], phi_bar)
        position_row = _row(
            "stationary-order", kind, est, n_div, cfg.n_runs,
            D=friction, L=cfg.chain_length, h=h,
        )
        kinetic_row = None
        if kind.has_momentum:
            kin_est, kin_div = _stats(ens.kinetic[:, -1], 1.0)
            kinetic_row = _row(
                "stationary-order-kinetic", kind, kin_est, kin_div, cfg.n_runs,
                D=friction, L=cfg.chain_length, h=h,
            )
        return position_row, kinetic_row

    evaluated = _map_tasks(evaluate, tasks, cfg.threads)
    rows = [pos for pos, _ in evaluated]
    rows.extend(kin for _, kin in evaluated if kin is not None)
    slopes: dict[str, LogLogFit | None] = {}
    kinetic_slopes: dict[str, LogLogFit | None] = {}
    for kind in cfg.integrators:
        slopes[kind.value] = _fit_or_none(
            (r.h, r.bias)
            for r in rows
            if r.experiment == "stationary-order" and r.integrator == kind.value and r.usable_for_fit()
        )
        if kind.has_momentum:
            kinetic_slopes[kind.value] = _fit_or_none(
                (r.h, r.bias)
                for r in rows
                if r.experiment == "stationary-order-kinetic"
                and r.integrator == kind.value
                and r.usable_for_fit()
            )
    return StationaryOrderResult(rows, slopes, kinetic_slopes)


@dataclass(frozen=True)
class RateSweepResult:
    rows: list[ResultRow]
    slopes: dict[tuple[str, str], LogLogFit | None]  # (integrator, metric) -> fit


def _sweep_rows_for_alpha(model, cfg, kind, alpha, prefactor, experiment, D=None):
    """Bias/MSE rows over the L grid for one (integrator, alpha) pair.

    fixed family: one ensemble per L at constant h = prefactor * L**-alpha.
    decreasing family: a single ensemble with h_l = prefactor * l**-alpha,
    checkpointed at every grid L and summarised by the weighted average.
    """
    phi_bar = model.posterior_average_phi2()
    seeds = run_seeds(cfg.base_seed, cfg.n_runs)
    friction = None if kind is IntegratorKind.SGLD_EULER else (cfg.D if D is None else D)
    rows = []
    if cfg.family == "fixed":
        for L in cfg.L_grid:
            h = prefactor * float(L) ** -alpha
            ens = run_ensemble(model, _sampler(cfg, kind, StepSchedule.fixed(h), D=D), L, seeds)
            est, n_div = _stats(ens.plain[:, -1], phi_bar)
            rows.append(
                _row(experiment, kind, est, n_div, cfg.n_runs,
                     alpha=alpha, prefactor=prefactor, D=friction, L=L, h=h)
            )
    else:
        schedule = StepSchedule.power_decay(prefactor, alpha)
        l_max = max(cfg.L_grid)
        ens = run_ensemble(
            model, _sampler(cfg, kind, schedule, D=D), l_max, seeds,
            checkpoints=sorted(cfg.L_grid),
        )
        for col, L in enumerate(ens.checkpoints):
            est, n_div = _stats(ens.weighted[:, col], phi_bar)
            rows.append(
                _row(experiment, kind, est, n_div, cfg.n_runs,
                     alpha=alpha, prefactor=prefactor, D=friction, L=L,
                     h=schedule.step_size(L))
            )
    return rows


def run_rate_sweep(model: GaussianConjugateModel, cfg: ExperimentConfig) -> RateSweepResult:
    """Bias/MSE decay against L with h tied to L through the configured
    decay exponent (optimal for the target by default)."""

    def evaluate(kind):
        alpha = cfg.alpha_for(kind)
        return _sweep_rows_for_alpha(model, cfg, kind, alpha, cfg.prefactor_for(kind), "rate-sweep")

    per_kind = _map_tasks(evaluate, list(cfg.integrators), cfg.threads)
    rows = [row for chunk in per_kind for row in chunk]
    slopes: dict[tuple[str, str], LogLogFit | None] = {}
    for kind in cfg.integrators:
        mine = [r for r in rows if r.integrator == kind.value]
        slopes[(kind.value, "bias")] = _fit_or_none(
            (r.L, r.bias) for r in mine if r.usable_for_fit()
        )
        slopes[(kind.value, "mse")] = _fit_or_none(
            (r.L, r.mse) for r in mine if r.usable_for_fit() and r.mse is not None and r.mse > 0
        )
    return RateSweepResult(rows, slopes)


@dataclass(frozen=True)
class AlphaSweepResult:
    rows: list[ResultRow]
    winners: dict[str, float | None]  # integrator -> alpha with lowest target metric at largest L


def run_alpha_sweep(model: GaussianConjugateModel, cfg: ExperimentConfig) -> AlphaSweepResult:
    """Bias (or MSE) trace against L for every candidate decay exponent."""
    tasks = [(kind, alpha) for kind in cfg.integrators for alpha in cfg.alpha_grid]

    def evaluate(task):
        kind, alpha = task
        return _sweep_rows_for_alpha(model, cfg, kind, alpha, cfg.prefactor_for(kind), "alpha-sweep")

    per_task = _map_tasks(evaluate, tasks, cfg.threads)
    rows = [row for chunk in per_task for row in chunk]
    winners: dict[str, float | None] = {}
    metric = "bias" if cfg.target == "bias" else "mse"
    for kind in cfg.integrators:
        l_max = max(cfg.L_grid)
        final = [
            r for r in rows
            if r.integrator == kind.value and r.L == l_max and r.usable_for_fit()
        ]
        values = [(getattr(r, metric), r.alpha) for r in final if getattr(r, metric) is not None]
        winners[kind.value] = min(values)[1] if values else None
    return AlphaSweepResult(rows, winners)


@dataclass(frozen=True)
class GridSearchResult:
    rows: list[ResultRow]
    best: dict[str, tuple[float, float | None, float]]  # integrator -> (prefactor, D, score)


def run_grid_search(model: GaussianConjugateModel, cfg: ExperimentConfig) -> GridSearchResult:
    """Paper-style protocol: score every prefactor (and friction candidate)
    at a pilot run length, return the minimiser of the target metric; it is
    then meant to be frozen for the full sweeps."""
    phi_bar = model.posterior_average_phi2()
    seeds = run_seeds(cfg.base_seed, cfg.n_runs)
    rows: list[ResultRow] = []
    best: dict[str, tuple[float, float | None, float]] = {}
    metric = cfg.target
    for kind in cfg.integrators:
        alpha = cfg.alpha_for(kind)
        d_candidates = (None,) if kind is IntegratorKind.SGLD_EULER else tuple(cfg.D_grid)

        def evaluate(task):
            prefactor, d_val = task
            if cfg.family == "fixed":
                h = prefactor * float(cfg.pilot_L) ** -alpha
                schedule = StepSchedule.fixed(h)
            else:
                schedule = StepSchedule.power_decay(prefactor, alpha)
                h = schedule.step_size(cfg.pilot_L)
            ens = run_ensemble(
                model, _sampler(cfg, kind, schedule, D=d_val), cfg.pilot_L, seeds
            )
            avg = ens.plain[:, -1] if cfg.family == "fixed" else ens.weighted[:, -1]
            est, n_div = _stats(avg, phi_bar)
            return _row(
                "grid-search", kind, est, n_div, cfg.n_runs,
                alpha=alpha, prefactor=prefactor, D=d_val, L=cfg.pilot_L, h=h,
            )

        tasks = [(c, d) for c in cfg.prefactor_grid for d in d_candidates]
        kind_rows = _map_tasks(evaluate, tasks, cfg.threads)
        rows.extend(kind_rows)
        scored = [
            (getattr(r, metric), r.prefactor, r.D)
            for r in kind_rows
            if getattr(r, metric) is not None and math.isfinite(getattr(r, metric))
        ]
        if not scored:
            raise AllDivergedError(
                f"grid search for {kind.value}: every candidate diverged"
            )
        score, prefactor, d_val = min(scored, key=lambda t: (t[0], t[1]))
        best[kind.value] = (prefactor, d_val, score)
    return GridSearchResult(rows, best)


@dataclass(frozen=True)
class WeakOrderRows:
    rows: list[ResultRow]
    results: dict[str, WeakOrderResult]


def run_weak_order(model: GaussianConjugateModel, cfg: ExperimentConfig) -> WeakOrderRows:
    """Local one-step weak error over the configured h grid (full gradients)."""
    rows: list[ResultRow] = []
    results: dict[str, WeakOrderResult] = {}
    for kind in cfg.integrators:
        if kind is IntegratorKind.SGNHT:
            raise ConfigError("weak-order is not available for sgnht (non-affine step)")
        friction = 0.0 if kind is IntegratorKind.SGLD_EULER else cfg.D
        result = weak_order_estimate(
            model,
            IntegratorConfig(kind, friction),
            cfg.h_grid,
            cfg.weak_samples,
            start=cfg.weak_start,
            substeps=cfg.weak_substeps,
            seed=cfg.base_seed,
        )
        results[kind.value] = result
        n_runs = 0 if cfg.weak_samples == "exact" else int(cfg.weak_samples)
        for h, err in zip(result.h_grid, result.errors):
            rows.append(
                ResultRow(
                    experiment="weak-order",
                    integrator=kind.value,
                    alpha=None,
                    prefactor=None,
                    D=None if kind is IntegratorKind.SGLD_EULER else cfg.D,
                    L=None,
                    h=h,
                    n_runs=n_runs,
                    n_diverged=0,
                    bias=err,
                    bias_se=None,
                    signed_bias=None,
                    mse=None,
                    mse_se=None,
                )
            )
    return WeakOrderRows(rows, results)
