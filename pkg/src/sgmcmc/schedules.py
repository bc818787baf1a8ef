"""Step-size schedules: fixed h and power decay h_l = a * l**-alpha."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FIXED",
    "POWER_DECAY",
    "ScheduleSums",
    "ScheduleValidation",
    "StepSchedule",
    "optimal_alpha",
    "validate_schedule",
]

FIXED = "fixed"
POWER_DECAY = "power-decay"

# Names of the requirements a decreasing schedule must satisfy to make the
# weighted sample average consistent: the step sizes must sum to infinity,
# the ratio sum(h^(K+1))/sum(h) must vanish, and the sequence must decrease.
COND_SUM_DIVERGES = "sum-diverges"
COND_RATIO_VANISHES = "ratio-vanishes"
COND_DECREASING = "decreasing"


@dataclass(frozen=True)
class StepSchedule:
    """Evaluates h_l lazily by 1-based index l."""

    kind: str
    h0: float = 0.0
    prefactor: float = 0.0
    alpha: float = 0.0
    horizon: int = 100_000

    @staticmethod
    def fixed(h0: float, horizon: int = 100_000) -> "StepSchedule":
        # h0 == 0 is tolerated so the identity behaviour of the samplers at
        # zero step size stays exercisable through the chain runner.
        if h0 < 0.0:
            raise ValueError("fixed step size must be >= 0")
        return StepSchedule(FIXED, h0=h0, horizon=horizon)

    @staticmethod
    def power_decay(prefactor: float, alpha: float, horizon: int = 100_000) -> "StepSchedule":
        if prefactor <= 0.0:
            raise ValueError("prefactor must be positive")
        return StepSchedule(POWER_DECAY, prefactor=prefactor, alpha=alpha, horizon=horizon)

    def step_size(self, l: int) -> float:
        if l < 1:
            raise IndexError("schedule index is 1-based")
        if self.kind == FIXED:
            return self.h0
        return self.prefactor * float(l) ** -self.alpha

    def step_sizes(self, L: int) -> np.ndarray:
        """Vectorized h_1..h_L, for diagnostics only (chains call step_size)."""
        if self.kind == FIXED:
            return np.full(L, self.h0)
        ls = np.arange(1, L + 1, dtype=np.float64)
        return self.prefactor * ls**-self.alpha


@dataclass
class ScheduleSums:
    """Incrementally maintained partial sums used by weighted averaging
    and by the consistency diagnostics."""

    order: int
    S_L: float = 0.0
    S_L_Kp1: float = 0.0
    S_L_sq: float = 0.0
    L: int = 0

    def add(self, h: float) -> None:
        self.S_L += h
        self.S_L_Kp1 += h ** (self.order + 1)
        self.S_L_sq += h * h
        self.L += 1

    def ratio(self) -> float:
        return self.S_L_Kp1 / self.S_L


@dataclass(frozen=True)
class ScheduleValidation:
    valid: bool
    usable_for_fixed_step_theory: bool
    violated: tuple[str, ...]
    ratio_at_horizon: float
    horizon: int


def validate_schedule(schedule: StepSchedule, order: int) -> ScheduleValidation:
    """Check the consistency requirements for a schedule under a K-th order
    integrator (K = ``order``).

    Power decay with 0 < alpha < 1 satisfies every requirement.  alpha >= 1
    is rejected (the step-size sum stops diverging; alpha == 1 sits on the
    boundary and is rejected conservatively).  alpha <= 0 is rejected since
    the sequence no longer decreases and the ratio sum(h^(K+1))/sum(h) does
    not vanish.  Fixed schedules keep a finite ratio h0**K, so they are not
    asymptotically consistent but remain usable for fixed-step analysis.
    """
    horizon = schedule.horizon
    if schedule.kind == FIXED:
        # constant sequence: ratio is exactly h0**K at every horizon
        return ScheduleValidation(
            valid=False,
            usable_for_fixed_step_theory=True,
            violated=(COND_RATIO_VANISHES,),
            ratio_at_horizon=schedule.h0**order,
            horizon=horizon,
        )

    hs = schedule.step_sizes(horizon)
    ratio = float(np.sum(hs ** (order + 1)) / np.sum(hs))
    alpha = schedule.alpha
    if 0.0 < alpha < 1.0:
        return ScheduleValidation(True, True, (), ratio, horizon)
    if alpha >= 1.0:
        violated = (COND_SUM_DIVERGES,)
    else:  # alpha <= 0: non-decreasing, and the ratio stays bounded away from 0
        violated = (COND_DECREASING, COND_RATIO_VANISHES)
    return ScheduleValidation(False, False, violated, ratio, horizon)


def optimal_alpha(target: str, order: int) -> float:
    """Decay exponent balancing the error terms: 1/(K+1) for the bias,
    1/(2K+1) for the MSE."""
    if order < 1:
        raise ValueError("integrator order must be >= 1")
    if target == "bias":
        return 1.0 / (order + 1)
    if target == "mse":
        return 1.0 / (2 * order + 1)
    raise ValueError(f"unknown target {target!r}; expected 'bias' or 'mse'")
