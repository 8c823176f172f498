"""Levenberg-Marquardt minimisation of a sum of squared residuals.

Each iteration solves ``(J^T J + mu I) delta = -J^T r``. A trial step that lowers
the SSR is accepted and ``mu`` is divided by ``v``; otherwise ``mu`` is
multiplied by ``v`` and the step is recomputed from the same point. The loop
stops when ``||delta|| < eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteResidual, NonPositiveParameter, SingularSystem

MAX_REJECTIONS = 50


@dataclass(frozen=True)
class LmOptions:
    mu0: float | None = None  # None: 1e-3 * mean(diag(J^T J)) at beta0
    v: float = 10.0
    eps: float = 1e-8
    max_iters: int = 200

    def __post_init__(self):
        if self.mu0 is not None and not self.mu0 > 0:
            raise NonPositiveParameter(f"mu0 must be > 0, got {self.mu0}")
        if not self.v > 1:
            raise NonPositiveParameter(f"v must be > 1, got {self.v}")
        if not self.eps > 0:
            raise NonPositiveParameter(f"eps must be > 0, got {self.eps}")
        if self.max_iters < 1:
            raise NonPositiveParameter(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class LmResult:
    beta: np.ndarray
    iterations: int
    final_ssr: float
    converged: bool
    trajectory: list[float] = field(default_factory=list)
    betas: list[np.ndarray] = field(default_factory=list)
    rejections: int = 0


def solve_damped_step(J, r, mu: float) -> np.ndarray:
    """Solve the damped normal equations for the parameter update."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    r = np.asarray(r, dtype=float)
    if mu < 0:
        raise NonPositiveParameter(f"mu must be >= 0, got {mu}")
    A = J.T @ J + mu * np.eye(J.shape[1])
    g = J.T @ r
    try:
        step = np.linalg.solve(A, -g)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(step)):
        raise SingularSystem("damped system produced a non-finite step")
    return step


def _ssr(r: np.ndarray) -> float:
    val = float(r @ r)
    if not np.isfinite(val):
        raise NonFiniteResidual("residual vector contains NaN or Inf")
    return val


def lm_minimize(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian_fn: Callable[[np.ndarray], np.ndarray],
    beta0,
    opts: LmOptions | None = None,
) -> LmResult:
    opts = opts or LmOptions()
    beta = np.array(beta0, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise NonFiniteResidual(f"non-finite starting point {beta}")
    r = np.asarray(residual_fn(beta), dtype=float)
    ssr = _ssr(r)
    J = np.asarray(jacobian_fn(beta), dtype=float)
    if opts.mu0 is None:
        mu = 1e-3 * float(np.mean(np.sum(J * J, axis=0)))
        if not mu > 0:
            mu = 1e-3
    else:
        mu = opts.mu0

    result = LmResult(beta=beta.copy(), iterations=0, final_ssr=ssr, converged=False,
                      trajectory=[ssr], betas=[beta.copy()])
    for it in range(opts.max_iters):
        for _ in range(MAX_REJECTIONS):
            delta = solve_damped_step(J, r, mu)
            if np.linalg.norm(delta) < opts.eps:
                result.converged = True
                break
            trial = beta + delta
            r_trial = np.asarray(residual_fn(trial), dtype=float)
            ssr_trial = float(r_trial @ r_trial)
            if np.isfinite(ssr_trial) and ssr_trial < ssr:
                beta, r, ssr = trial, r_trial, ssr_trial
                J = np.asarray(jacobian_fn(beta), dtype=float)
                mu /= opts.v
                break
            mu *= opts.v
            result.rejections += 1
        else:
            # every retry was rejected: report the best point as unconverged
            break
        if result.converged:
            break
        result.iterations = it + 1
        result.trajectory.append(ssr)
        result.betas.append(beta.copy())

    result.beta = beta
    result.final_ssr = ssr
    return result
