"""One-step update maps for the samplers plus a deterministic chain runner.

Each step is a pure function (state in, state out).  The standard-normal
noise vector is an explicit argument, so runs are reproducible bit for bit
and drift-only behaviour can be tested with a zero draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .models import EPOCH_PERMUTATION, GaussianConjugateModel, Minibatch, MinibatchStream
from .schedules import ScheduleSums, StepSchedule

__all__ = [
    "DIVERGENCE_LIMIT",
    "DivergenceError",
    "IntegratorConfig",
    "IntegratorKind",
    "NoiseDraw",
    "RunTrace",
    "SamplerConfig",
    "State",
    "run_chain",
    "sghmc_aboba_step",
    "sghmc_euler_step",
    "sgld_step",
    "sgnht_step",
]

# Any state component beyond this magnitude (or non-finite) counts as a
# divergence and is reported as an error instead of polluting a trace.
DIVERGENCE_LIMIT = 1e10

# One standard-normal draw per step, one component per position dimension
# (a zero vector is legal and gives the deterministic drift).
NoiseDraw = np.ndarray


class IntegratorKind(str, Enum):
    SGLD_EULER = "sgld"
    SGHMC_EULER = "sghmc-euler"
    SGHMC_ABOBA = "sghmc-aboba"
    SGNHT = "sgnht"

    @property
    def order(self) -> int:
        """Local weak order: 2 for the symmetric splitting scheme, 1 otherwise."""
        return 2 if self is IntegratorKind.SGHMC_ABOBA else 1

    @property
    def has_momentum(self) -> bool:
        return self is not IntegratorKind.SGLD_EULER


class DivergenceError(RuntimeError):
    """A chain produced a non-finite or absurdly large state component."""

    def __init__(self, message: str, *, h: float, step: int | None = None, trace=None):
        super().__init__(message)
        self.h = h
        self.step = step
        self.trace = trace


@dataclass
class State:
    """Sampler state: position, optional momentum, optional thermostat."""

    theta: np.ndarray
    p: np.ndarray | None = None
    xi: float | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if self.p is not None:
            self.p = np.asarray(self.p, dtype=np.float64).reshape(-1)
            if self.p.shape != self.theta.shape:
                raise ValueError("theta and p must have equal dimension")

    @property
    def dim(self) -> int:
        return self.theta.size


@dataclass(frozen=True)
class IntegratorConfig:
    kind: IntegratorKind
    D: float = 0.0

    def __post_init__(self):
        if self.D < 0.0:
            raise ValueError("friction D must be >= 0")

    @property
    def order(self) -> int:
        return self.kind.order


@dataclass(frozen=True)
class SamplerConfig:
    """Everything run_chain needs besides the model: integrator, schedule,
    minibatch policy and (optionally) a fixed initial state."""

    integrator: IntegratorConfig
    schedule: StepSchedule
    batch_size: int | None = None  # None -> full gradients
    batch_mode: str = EPOCH_PERMUTATION
    init_state: State | None = None


def _gradient(model: GaussianConjugateModel, theta: np.ndarray, batch: Minibatch | None):
    if batch is None:
        return model.grad_U(theta)
    return model.stoch_grad_U(theta, batch)


def _check_finite(values: np.ndarray, h: float) -> None:
    if not np.all(np.isfinite(values)) or np.any(np.abs(values) > DIVERGENCE_LIMIT):
        raise DivergenceError(
            f"state diverged at step size h={h!r}", h=h
        )


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def sgld_step(model, state: State, h: float, batch: Minibatch | None, noise: np.ndarray) -> State:
    """theta' = theta - grad_Util(theta)*h + sqrt(2h)*zeta."""
    _require(h >= 0.0, "step size must be >= 0")
    _require(state.p is None, "SGLD state carries no momentum")
    g = _gradient(model, state.theta, batch)
    theta = state.theta - g * h + math.sqrt(2.0 * h) * noise
    _check_finite(theta, h)
    return State(theta=theta)


def sghmc_euler_step(model, state: State, h: float, D: float, batch, noise) -> State:
    """Euler update: momentum first, then the position uses the new momentum."""
    _require(h >= 0.0, "step size must be >= 0")
    _require(D >= 0.0, "friction must be >= 0")
    _require(state.p is not None, "SGHMC state requires momentum")
    g = _gradient(model, state.theta, batch)
    p = (1.0 - D * h) * state.p - g * h + math.sqrt(2.0 * D * h) * noise
    theta = state.theta + p * h
    _check_finite(theta, h)
    _check_finite(p, h)
    return State(theta=theta, p=p)


def sghmc_aboba_step(model, state: State, h: float, D: float, batch, noise) -> State:
    """Symmetric splitting step: half drift, half friction, full gradient
    kick plus noise, half friction, half drift.  The friction sub-steps are
    exact exponentials, which is what buys the second-order behaviour."""
    _require(h >= 0.0, "step size must be >= 0")
    _require(D >= 0.0, "friction must be >= 0")
    _require(state.p is not None, "SGHMC state requires momentum")
    half = 0.5 * h
    decay = math.exp(-0.5 * D * h)
    theta1 = state.theta + state.p * half
    p1 = decay * state.p
    g = _gradient(model, theta1, batch)
    p2 = p1 - g * h + math.sqrt(2.0 * D * h) * noise
    p = decay * p2
    theta = theta1 + p * half
    _check_finite(theta, h)
    _check_finite(p, h)
    return State(theta=theta, p=p)


def sgnht_step(model, state: State, h: float, D: float, batch, noise) -> State:
    """Thermostatted update: the friction coefficient xi adapts so the
    kinetic temperature p'p/dim is driven towards 1."""
    _require(h >= 0.0, "step size must be >= 0")
    _require(D >= 0.0, "friction must be >= 0")
    _require(state.p is not None, "SGNHT state requires momentum")
    _require(state.xi is not None, "SGNHT state requires a thermostat value")
    g = _gradient(model, state.theta, batch)
    p = (1.0 - state.xi * h) * state.p - g * h + math.sqrt(2.0 * D * h) * noise
    theta = state.theta + p * h
    xi = state.xi + (float(p @ p) / p.size - 1.0) * h
    _check_finite(theta, h)
    _check_finite(p, h)
    _check_finite(np.asarray([xi]), h)
    return State(theta=theta, p=p, xi=xi)


def step_state(model, config: IntegratorConfig, state: State, h: float, batch, noise) -> State:
    kind = config.kind
    if kind is IntegratorKind.SGLD_EULER:
        return sgld_step(model, state, h, batch, noise)
    if kind is IntegratorKind.SGHMC_EULER:
        return sghmc_euler_step(model, state, h, config.D, batch, noise)
    if kind is IntegratorKind.SGHMC_ABOBA:
        return sghmc_aboba_step(model, state, h, config.D, batch, noise)
    if kind is IntegratorKind.SGNHT:
        return sgnht_step(model, state, h, config.D, batch, noise)
    raise ValueError(f"unknown integrator kind {kind!r}")


@dataclass
class RunTrace:
    """Streaming accumulators for one chain, plus optional recorded traces.

    The plain sample average is phi_sum / L; the step-weighted average is
    weighted_phi_sum / S_L.  For a constant schedule the two coincide.
    kinetic_sum accumulates p.p for momentum samplers (the exact stationary
    law of the momentum is standard normal, so E[p.p]/dim = 1).
    """

    phi_sum: float = 0.0
    weighted_phi_sum: float = 0.0
    kinetic_sum: float = 0.0
    L: int = 0
    S_L: float = 0.0
    diverged_at: int | None = None
    phi_trace: np.ndarray | None = None
    theta_trace: np.ndarray | None = None
    schedule_sums: ScheduleSums | None = None

    def update(self, phi: float, h: float, kinetic: float = 0.0) -> None:
        self.phi_sum += phi
        self.weighted_phi_sum += h * phi
        self.kinetic_sum += kinetic
        self.S_L += h
        self.L += 1
        if self.schedule_sums is not None:
            self.schedule_sums.add(h)


def derive_seed(seq: np.random.SeedSequence, key: int) -> np.random.SeedSequence:
    """Stateless child derivation: unlike SeedSequence.spawn, deriving the
    same child twice from the same parent yields the same stream."""
    return np.random.SeedSequence(entropy=seq.entropy, spawn_key=tuple(seq.spawn_key) + (key,))


def draw_initial_state(kind: IntegratorKind, D: float, rng: np.random.Generator, dim: int = 1) -> State:
    """Random initialization: theta ~ N(0, I), p ~ N(0, I), xi = D."""
    theta = rng.standard_normal(dim)
    if not kind.has_momentum:
        return State(theta=theta)
    p = rng.standard_normal(dim)
    xi = D if kind is IntegratorKind.SGNHT else None
    return State(theta=theta, p=p, xi=xi)


def run_chain(
    model: GaussianConjugateModel,
    config: SamplerConfig,
    L: int,
    rng_seed,
    *,
    burn_in: int = 0,
    record_theta: bool = False,
    record_phi: bool = False,
) -> RunTrace:
    """Run one chain for ``burn_in + L`` steps, accumulating phi = theta.theta
    over the last L of them.

    One noise vector is drawn per step from a generator seeded by
    ``rng_seed``; one minibatch is drawn per step from the stream (which owns
    an independent child generator).  Identical seeds give bit-identical
    traces.  A divergence aborts the run with the offending step index.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    seq = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    noise_seq, stream_seq = derive_seed(seq, 0), derive_seed(seq, 1)
    gen = np.random.default_rng(noise_seq)

    kind = config.integrator.kind
    if config.init_state is not None:
        init = config.init_state
        state = State(
            theta=init.theta.copy(),
            p=None if init.p is None else init.p.copy(),
            xi=init.xi,
        )
    else:
        state = draw_initial_state(kind, config.integrator.D, gen)
    dim = state.dim

    stream = None
    if config.batch_size is not None:
        stream = MinibatchStream(model.n_data, config.batch_size, config.batch_mode, stream_seq)

    trace = RunTrace(schedule_sums=ScheduleSums(order=config.integrator.order))
    if record_phi:
        trace.phi_trace = np.empty(L)
    if record_theta:
        trace.theta_trace = np.empty((L, dim))

    total = burn_in + L
    for l in range(1, total + 1):
        h = config.schedule.step_size(l)
        batch = stream.next_batch() if stream is not None else None
        zeta = gen.standard_normal(dim)
        try:
            state = step_state(model, config.integrator, state, h, batch, zeta)
        except DivergenceError as err:
            trace.diverged_at = l
            err.step = l
            err.trace = trace
            raise
        if l > burn_in:
            k = l - burn_in - 1
            phi = float(state.theta @ state.theta)
            kin = 0.0 if state.p is None else float(state.p @ state.p)
            trace.update(phi, h, kin)
            if record_phi:
                trace.phi_trace[k] = phi
            if record_theta:
                trace.theta_trace[k] = state.theta
    return trace
