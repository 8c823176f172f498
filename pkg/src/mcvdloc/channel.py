"""Closed-form absorption model for one spherical receiver and the
two-parameter fit model used for distance estimation.

``fit_model`` is ``a * Q * (r/d) * erfc((d - r) / sqrt(4 D t))``; with ``a = 1``
it is the exact single-receiver cumulative count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DistanceInsideReceiver, LengthMismatch, NonPositiveParameter

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


def erfc(x):
    """Complementary error function (scalar or array)."""
    return special.erfc(x)


@dataclass(frozen=True)
class FitParams:
    a: float
    d: float

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.a, self.d], dtype=float)


@dataclass(frozen=True)
class ModelContext:
    Q: float
    r: float
    D: float
    sample_times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.sample_times, dtype=float)
        object.__setattr__(self, "sample_times", t)
        if not (self.Q > 0 and self.r > 0 and self.D > 0):
            raise NonPositiveParameter(f"Q, r and D must be positive (Q={self.Q}, r={self.r}, D={self.D})")
        if t.ndim != 1 or t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise NonPositiveParameter("sample times must be positive and strictly increasing")


def _shape(ctx: ModelContext, d: float, t):
    t = np.asarray(t, dtype=float)
    width = np.sqrt(4.0 * ctx.D * t)
    u = (d - ctx.r) / width
    return u, width


def siso_cumulative(ctx: ModelContext, d: float, t):
    """Expected cumulative number of molecules absorbed by a lone receiver at
    distance ``d`` by time ``t``."""
    if d < ctx.r:
        raise DistanceInsideReceiver(f"d={d} is inside the receiver (r={ctx.r})")
    u, _ = _shape(ctx, d, t)
    return ctx.Q * (ctx.r / d) * erfc(u)


def fit_model(params: FitParams, ctx: ModelContext, t):
    return params.a * siso_cumulative(ctx, params.d, t)


def fit_model_jacobian(params: FitParams, ctx: ModelContext, t):
    """Analytic partials ``(dF/da, dF/dd)`` of :func:`fit_model`."""
    a, d = params.a, params.d
    if d < ctx.r:
        raise DistanceInsideReceiver(f"d={d} is inside the receiver (r={ctx.r})")
    u, width = _shape(ctx, d, t)
    ec = erfc(u)
    dF_da = ctx.Q * (ctx.r / d) * ec
    dF_dd = a * ctx.Q * (
        -(ctx.r / d**2) * ec - (ctx.r / d) * _TWO_OVER_SQRT_PI * np.exp(-u * u) / width
    )
    return dF_da, dF_dd


def _check_lengths(ctx: ModelContext, counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    if counts.shape != ctx.sample_times.shape:
        raise LengthMismatch(
            f"trace has {counts.size} samples, model context has {ctx.sample_times.size}"
        )
    return counts


def residuals(params: FitParams, ctx: ModelContext, trace, normalized: bool = True) -> np.ndarray:
    """Observed minus modelled cumulative counts at each sample instant.

    ``trace`` is a :class:`~mcvdloc.sim.CumulativeTrace` or a plain count array.
    With ``normalized`` the counts are divided by Q, so the residuals are in
    units of absorption probability.
    """
    counts = _check_lengths(ctx, getattr(trace, "counts", trace))
    if hasattr(trace, "sample_times") and not np.allclose(trace.sample_times, ctx.sample_times):
        raise LengthMismatch("trace sample times differ from the model context")
    r = counts - fit_model(params, ctx, ctx.sample_times)
    return r / ctx.Q if normalized else r


def residual_jacobian(params: FitParams, ctx: ModelContext, normalized: bool = True) -> np.ndarray:
    """N x 2 Jacobian of :func:`residuals` with respect to ``(a, d)``."""
    dF_da, dF_dd = fit_model_jacobian(params, ctx, ctx.sample_times)
    J = -np.column_stack([dF_da, dF_dd])
    return J / ctx.Q if normalized else J
