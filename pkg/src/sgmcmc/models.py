"""Gaussian conjugate target with exact posterior moments and full /
minibatch stochastic gradients of the negative log-posterior.

The model is scalar (real observations, unit noise, standard normal prior)
so every reference quantity is available in closed form.  Positions are
carried as 1-d arrays to keep the samplers dimension-agnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CorruptBatchError",
    "DatasetMeta",
    "GaussianConjugateModel",
    "Minibatch",
    "MinibatchStream",
    "EPOCH_PERMUTATION",
    "IID_WITH_REPLACEMENT",
    "generate_dataset",
    "load_dataset",
    "save_dataset",
]

EPOCH_PERMUTATION = "epoch-permutation"
IID_WITH_REPLACEMENT = "iid-with-replacement"


class CorruptBatchError(ValueError):
    """A minibatch referenced indices outside the dataset."""


@dataclass(frozen=True, eq=False)
class GaussianConjugateModel:
    """Observations x_i ~ N(theta, 1) under the prior theta ~ N(0, 1).

    The posterior is N(sum(x) / (N + 1), 1 / (N + 1)) exactly, which is what
    makes this model usable as ground truth for bias/MSE measurements.
    Instances are immutable and safe to share across concurrent runs.
    """

    data: np.ndarray
    prior_mean: float = 0.0
    prior_var: float = 1.0
    obs_var: float = 1.0

    def __post_init__(self):
        if self.prior_mean != 0.0 or self.prior_var != 1.0 or self.obs_var != 1.0:
            raise ValueError("only the unit-variance, zero-prior-mean model is supported")
        arr = np.array(self.data, dtype=np.float64).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        # fsum keeps the cached sum exact regardless of dataset ordering
        object.__setattr__(self, "_data_sum", math.fsum(arr.tolist()))

    @property
    def n_data(self) -> int:
        return int(self.data.size)

    @property
    def data_sum(self) -> float:
        return self._data_sum  # type: ignore[attr-defined]

    def posterior_params(self) -> tuple[float, float]:
        """Posterior mean and variance: ((sum x)/(N+1), 1/(N+1))."""
        precision = self.n_data + 1
        return self.data_sum / precision, 1.0 / precision

    def posterior_average_phi2(self) -> float:
        """Posterior expectation of theta**2 (the benchmark test function)."""
        mean, var = self.posterior_params()
        return var + mean * mean

    def grad_affine_coeffs(self) -> tuple[float, float]:
        """(curvature, intercept) with grad_U(theta) = curvature*theta - intercept."""
        return float(self.n_data + 1), self.data_sum

    def grad_U(self, theta: np.ndarray) -> np.ndarray:
        """Full-data gradient of the negative log-posterior: (N+1)*theta - sum(x)."""
        return (self.n_data + 1) * theta - self.data_sum

    def stoch_grad_U(self, theta: np.ndarray, batch: "Minibatch") -> np.ndarray:
        """Minibatch stochastic gradient.

        The likelihood part is rescaled by N/n; the prior term enters in full
        every batch so the estimate stays unbiased over batch draws.
        """
        batch.validate(self.n_data)
        n_b = batch.indices.size
        batch_sum = float(np.sum(self.data[batch.indices]))
        return batch.scale * (n_b * theta - batch_sum) + theta


@dataclass(frozen=True, eq=False)
class Minibatch:
    """Index subset plus the N/n likelihood rescale factor."""

    indices: np.ndarray
    scale: float

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).reshape(-1)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @staticmethod
    def full(n_data: int) -> "Minibatch":
        return Minibatch(np.arange(n_data, dtype=np.int64), 1.0)

    @staticmethod
    def from_indices(n_data: int, indices, *, allow_duplicates: bool = False) -> "Minibatch":
        batch = Minibatch(np.asarray(indices, dtype=np.int64), 0.0)
        idx = batch.indices
        if idx.size == 0:
            raise CorruptBatchError("empty minibatch")
        if not allow_duplicates and np.unique(idx).size != idx.size:
            raise CorruptBatchError("duplicate indices in minibatch")
        object.__setattr__(batch, "scale", n_data / idx.size)
        batch.validate(n_data)
        return batch

    def validate(self, n_data: int) -> None:
        idx = self.indices
        if idx.size and (idx.min() < 0 or idx.max() >= n_data):
            raise CorruptBatchError(
                f"minibatch index out of range for dataset of size {n_data}"
            )


class MinibatchStream:
    """Per-run source of minibatches.

    epoch-permutation mode shuffles the dataset once per epoch and slices it
    into consecutive batches, so every index appears exactly once per
    ceil(N/n) batches.  iid-with-replacement draws each batch independently
    (duplicates within a batch are legal in that mode).
    """

    def __init__(self, n_data: int, batch_size: int, mode: str, seed):
        if mode not in (EPOCH_PERMUTATION, IID_WITH_REPLACEMENT):
            raise ValueError(f"unknown minibatch mode: {mode!r}")
        if not 1 <= batch_size <= n_data:
            raise ValueError("batch size must be in [1, N]")
        self.n_data = n_data
        self.batch_size = batch_size
        self.mode = mode
        self.rng = np.random.default_rng(seed)
        self._perm: np.ndarray | None = None
        self._pos = 0

    def next_batch(self) -> Minibatch:
        n, size = self.n_data, self.batch_size
        if self.mode == IID_WITH_REPLACEMENT:
            idx = self.rng.integers(0, n, size=size)
            return Minibatch(np.asarray(idx, dtype=np.int64), n / size)
        if self._perm is None or self._pos >= n:
            self._perm = self.rng.permutation(n)
            self._pos = 0
        idx = self._perm[self._pos : self._pos + size]
        self._pos += size
        return Minibatch(idx, n / idx.size)


@dataclass(frozen=True)
class DatasetMeta:
    seed: int
    n: int
    mu: float
    sigma: float


def generate_dataset(seed: int, n: int, mu: float, sigma: float = 1.0) -> np.ndarray:
    """Draw n observations from N(mu, sigma^2) with a dedicated generator."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return rng.normal(mu, sigma, size=n)


def save_dataset(path, values: np.ndarray, meta: DatasetMeta) -> None:
    """One observation per line, preceded by a `# seed=.. n=.. mu=.. sigma=..` header."""
    lines = [f"# seed={meta.seed} n={meta.n} mu={meta.mu!r} sigma={meta.sigma!r}"]
    lines.extend(repr(float(v)) for v in values)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path) -> tuple[np.ndarray, DatasetMeta]:
    text = Path(path).read_text(encoding="utf-8")
    meta = None
    values: list[float] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if meta is None:
                meta = _parse_header(line, lineno)
            continue
        try:
            values.append(float(line))
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: bad observation {line!r}") from exc
    if meta is None:
        raise ValueError(f"{path}: missing dataset header line")
    if len(values) != meta.n:
        raise ValueError(f"{path}: header says n={meta.n} but found {len(values)} values")
    return np.asarray(values, dtype=np.float64), meta


def _parse_header(line: str, lineno: int) -> DatasetMeta:
    fields = dict(tok.split("=", 1) for tok in line.lstrip("#").split() if "=" in tok)
    try:
        return DatasetMeta(
            seed=int(fields["seed"]),
            n=int(fields["n"]),
            mu=float(fields["mu"]),
            sigma=float(fields["sigma"]),
        )
    except (KeyError, ValueError) as exc:
        raise ValueError(f"line {lineno}: malformed dataset header") from exc
