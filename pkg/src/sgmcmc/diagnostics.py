"""Sample averages, bias/MSE estimation across seeded runs, log-log rate
fitting, and the local weak-order measurement.

For quadratic targets every integrator step is affine in (state, noise), so
one-step expectations propagate exactly through the step's matrix form; the
weak-order estimate uses that closed form by default and falls back to Monte
Carlo only on request.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .integrators import DivergenceError, IntegratorConfig, IntegratorKind, RunTrace
from .models import GaussianConjugateModel

__all__ = [
    "AffineStep",
    "BiasMse",
    "LogLogFit",
    "WeakOrderResult",
    "affine_step_map",
    "batch_means",
    "estimate_bias_mse",
    "fit_loglog_slope",
    "propagate_moments",
    "sample_average",
    "weak_order_estimate",
    "weighted_sample_average",
]


def _require_usable(trace: RunTrace) -> None:
    if trace.diverged_at is not None:
        raise DivergenceError(
            f"trace diverged at step {trace.diverged_at}",
            h=math.nan,
            step=trace.diverged_at,
            trace=trace,
        )
    if trace.L < 1:
        raise ValueError("empty trace")


def sample_average(trace: RunTrace) -> float:
    """Plain average phi_sum / L."""
    _require_usable(trace)
    return trace.phi_sum / trace.L


def weighted_sample_average(trace: RunTrace) -> float:
    """Step-weighted average: sum(h_l * phi_l) / sum(h_l)."""
    _require_usable(trace)
    if trace.S_L <= 0.0:
        raise ValueError("trace carries no accumulated step sizes")
    return trace.weighted_phi_sum / trace.S_L


@dataclass(frozen=True)
class BiasMse:
    bias: float
    bias_se: float
    mse: float
    mse_se: float
    signed_bias: float
    n_runs: int


def estimate_bias_mse(runs, phi_bar: float) -> BiasMse:
    """Bias and MSE of per-run sample averages against the exact posterior
    average, with standard errors from the run-to-run spread (the MSE one via
    the spread of squared deviations, i.e. a fourth-moment estimate)."""
    values = np.asarray(runs, dtype=np.float64)
    n = values.size
    if n < 2:
        raise ValueError("need at least 2 runs to estimate bias/MSE")
    signed = float(np.mean(values)) - phi_bar
    sq_dev = (values - phi_bar) ** 2
    return BiasMse(
        bias=abs(signed),
        bias_se=float(np.std(values, ddof=1)) / math.sqrt(n),
        mse=float(np.mean(sq_dev)),
        mse_se=float(np.std(sq_dev, ddof=1)) / math.sqrt(n),
        signed_bias=signed,
        n_runs=n,
    )


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    r_squared: float


def fit_loglog_slope(points) -> LogLogFit:
    """Least-squares fit of log(value) against log(control).

    Non-positive values are refused: a diverged or zero-bias point must be
    excluded explicitly by the caller rather than silently dropped here.
    """
    pts = [(float(c), float(v)) for c, v in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points for a slope fit")
    for i, (c, v) in enumerate(pts):
        if not (c > 0.0 and v > 0.0) or not (math.isfinite(c) and math.isfinite(v)):
            raise ValueError(f"non-positive or non-finite point at index {i}: {(c, v)}")
    x = np.log(np.array([c for c, _ in pts]))
    y = np.log(np.array([v for _, v in pts]))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 and ss_res < 1e-20 else 1.0 - ss_res / ss_tot
    return LogLogFit(float(slope), float(intercept), r2)


def batch_means(values, n_batches: int = 100) -> tuple[float, float]:
    """Mean of a correlated sequence and its batch-means standard error."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if n_batches < 2 or arr.size < 2 * n_batches:
        raise ValueError("need at least 2 batches of at least 2 points")
    size = arr.size // n_batches
    means = arr[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    se = float(np.std(means, ddof=1)) / math.sqrt(n_batches)
    return float(arr.mean()), se


# ---------------------------------------------------------------------------
# Exact moment propagation for affine steps (quadratic-gradient models)


@dataclass(frozen=True)
class AffineStep:
    """x' = M x + c + sum_i noises[i] * zeta_i with independent zeta_i."""

    M: np.ndarray
    c: np.ndarray
    noises: tuple[np.ndarray, ...]


def _compose(outer: AffineStep, inner: AffineStep) -> AffineStep:
    M = outer.M @ inner.M
    c = outer.M @ inner.c + outer.c
    noises = tuple(outer.M @ v for v in inner.noises) + outer.noises
    return AffineStep(M, c, noises)


def affine_step_map(kind: IntegratorKind, h: float, D: float, curvature: float, intercept: float) -> AffineStep:
    """Matrix form of one integrator step when grad U(theta) = curvature*theta - intercept.

    The state vector is (theta,) for SGLD and (theta, p) otherwise.  The
    thermostat update is not affine, so SGNHT is not representable here.
    """
    lam, s = curvature, intercept
    if kind is IntegratorKind.SGLD_EULER:
        return AffineStep(
            M=np.array([[1.0 - h * lam]]),
            c=np.array([h * s]),
            noises=(np.array([math.sqrt(2.0 * h)]),),
        )
    if kind is IntegratorKind.SGHMC_EULER:
        # p' = (1-Dh)p - h(lam*theta - s) + sqrt(2Dh) z;  theta' = theta + h p'
        sig = math.sqrt(2.0 * D * h)
        return AffineStep(
            M=np.array([[1.0 - h * h * lam, h * (1.0 - D * h)], [-h * lam, 1.0 - D * h]]),
            c=np.array([h * h * s, h * s]),
            noises=(np.array([h * sig, sig]),),
        )
    if kind is IntegratorKind.SGHMC_ABOBA:
        half = 0.5 * h
        decay = math.exp(-0.5 * D * h)
        ident = np.zeros(2)
        a_half = AffineStep(np.array([[1.0, half], [0.0, 1.0]]), ident, ())
        b_half = AffineStep(np.array([[1.0, 0.0], [0.0, decay]]), ident, ())
        kick = AffineStep(
            np.array([[1.0, 0.0], [-h * lam, 1.0]]),
            np.array([0.0, h * s]),
            (np.array([0.0, math.sqrt(2.0 * D * h)]),),
        )
        step = a_half
        for part in (b_half, kick, b_half, a_half):
            step = _compose(part, step)
        return step
    raise ValueError(f"no affine form for integrator kind {kind!r}")


def propagate_moments(step: AffineStep, mean: np.ndarray, cov: np.ndarray, n_steps: int = 1):
    """Push (mean, cov) of the state through ``n_steps`` applications."""
    mean = np.asarray(mean, dtype=np.float64).copy()
    cov = np.asarray(cov, dtype=np.float64).copy()
    noise_cov = sum((np.outer(v, v) for v in step.noises), np.zeros_like(cov))
    for _ in range(n_steps):
        mean = step.M @ mean + step.c
        cov = step.M @ cov @ step.M.T + noise_cov
    return mean, cov


def _expected_phi(mean: np.ndarray, cov: np.ndarray) -> float:
    return float(cov[0, 0] + mean[0] ** 2)


@dataclass(frozen=True)
class WeakOrderResult:
    h_grid: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float | None
    fit: LogLogFit | None


def _reference_kind(kind: IntegratorKind) -> IntegratorKind:
    # The reference must integrate the same dynamics: substepped splitting for
    # the momentum samplers, substepped SGLD for the momentum-free one.
    if kind is IntegratorKind.SGLD_EULER:
        return IntegratorKind.SGLD_EULER
    return IntegratorKind.SGHMC_ABOBA


def _mc_expected_phi(model, kind, h, D, start, n_samples, rng, substeps=1):
    lam, s = model.grad_affine_coeffs()
    theta = np.full(n_samples, start[0])
    p = np.full(n_samples, start[1]) if kind.has_momentum else None
    hs = h / substeps
    for _ in range(substeps):
        z = rng.standard_normal(n_samples)
        if kind is IntegratorKind.SGLD_EULER:
            theta = theta - (lam * theta - s) * hs + math.sqrt(2.0 * hs) * z
        elif kind is IntegratorKind.SGHMC_EULER:
            p = (1.0 - D * hs) * p - (lam * theta - s) * hs + math.sqrt(2.0 * D * hs) * z
            theta = theta + p * hs
        else:  # ABOBA
            decay = math.exp(-0.5 * D * hs)
            theta1 = theta + p * (0.5 * hs)
            p = decay * (decay * p - (lam * theta1 - s) * hs + math.sqrt(2.0 * D * hs) * z)
            theta = theta1 + p * (0.5 * hs)
    return float(np.mean(theta * theta))


def weak_order_estimate(
    model: GaussianConjugateModel,
    integrator: IntegratorConfig,
    h_grid,
    samples: int | str = "exact",
    *,
    start: tuple[float, float] = (1.0, 0.0),
    substeps: int = 1000,
    seed: int = 0,
) -> WeakOrderResult:
    """One-step weak error |E phi(X_h) - E phi(X_h_ref)| over a grid of h.

    The reference runs ``substeps`` sub-steps at h/substeps from the same
    start, so its own error is smaller by a factor substeps**2 and the fitted
    log-log slope exposes the local order K+1 of the integrator under test.
    ``samples="exact"`` uses affine moment propagation (no Monte Carlo noise);
    an integer switches to that many Monte Carlo draws.
    """
    h_list = [float(h) for h in h_grid]
    if len(h_list) < 3:
        raise ValueError("need at least 3 step sizes")
    kind = integrator.kind
    ref_kind = _reference_kind(kind)
    errors = []
    if samples == "exact":
        lam, s = model.grad_affine_coeffs()
        dim = 2 if kind.has_momentum else 1
        mean0 = np.array([start[0], start[1]])[:dim]
        cov0 = np.zeros((dim, dim))
        for h in h_list:
            num = _expected_phi(*propagate_moments(affine_step_map(kind, h, integrator.D, lam, s), mean0, cov0))
            ref_step = affine_step_map(ref_kind, h / substeps, integrator.D, lam, s)
            ref = _expected_phi(*propagate_moments(ref_step, mean0, cov0, n_steps=substeps))
            errors.append(abs(num - ref))
    else:
        n = int(samples)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        for h in h_list:
            num = _mc_expected_phi(model, kind, h, integrator.D, start, n, rng)
            ref = _mc_expected_phi(model, ref_kind, h, integrator.D, start, n, rng, substeps=substeps)
            errors.append(abs(num - ref))

    fit = None
    if all(e > 0.0 for e in errors):
        fit = fit_loglog_slope(zip(h_list, errors))
    return WeakOrderResult(
        h_grid=tuple(h_list),
        errors=tuple(errors),
        slope=None if fit is None else fit.slope,
        fit=fit,
    )
