"""Monotone Newton-type minimiser over a masked subset of coordinates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

ARMIJO_C = 1e-4
MAX_HALVINGS = 40


@dataclass
class OptimizeBudget:
    inner_iterations: int = 100
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-14
    cg_iterations: int = 200
    cg_tolerance: float = 1e-3

    def __post_init__(self):
        if self.inner_iterations < 1:
            raise ValueError("inner_iterations must be >= 1")


@dataclass
class OptimizeOutcome:
    x: np.ndarray
    f_before: float
    f_after: float
    iterations: int
    reason: str  # budget | gradient | step | line-search-failure


def _pcg(hvp, diag, b, tol, maxiter):
    """Truncated preconditioned CG on H p = b; stops at negative curvature."""
    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    bnorm = math.sqrt(b @ b)
    for _ in range(maxiter):
        Hp = hvp(p)
        curv = p @ Hp
        if curv <= 0:
            break
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Hp
        if math.sqrt(r @ r) <= tol * bnorm:
            break
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


def minimize(
    evaluator: Callable,
    x0,
    free_mask,
    budget: OptimizeBudget | None = None,
    hessian: Optional[Callable] = None,
) -> OptimizeOutcome:
    """Minimise ``evaluator`` over the coordinates where ``free_mask`` is set.

    ``evaluator(x) -> (f, grad)`` works on the full vector.  ``hessian(x)`` may
    return a sparse (or dense) matrix; without it Hessian-vector products are
    taken by differencing the gradient.  Every accepted step satisfies the
    Armijo condition, so ``f_after <= f_before`` and frozen entries are left
    bit-identical.
    """
    budget = budget or OptimizeBudget()
    x = np.array(x0, dtype=float).ravel()
    free = np.flatnonzero(np.asarray(free_mask, dtype=bool).ravel())
    f, g = evaluator(x)
    if not math.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    f0 = f
    if len(free) == 0:
        return OptimizeOutcome(x, f0, f0, 0, "gradient")

    def restricted_eval(xf):
        xt = x.copy()
        xt[free] = xf
        try:
            ft, gt = evaluator(xt)
        except (ArithmeticError, FloatingPointError):
            return math.inf, None
        return ft, gt

    reason = "budget"
    it = 0
    for it in range(1, budget.inner_iterations + 1):
        gf = g[free]
        if np.max(np.abs(gf)) <= budget.gradient_tolerance:
            reason = "gradient"
            it -= 1
            break

        if hessian is not None:
            H = hessian(x)
            Hf = H[free][:, free]
            diag = np.asarray(Hf.diagonal()).ravel()
            hvp = lambda v: np.asarray(Hf @ v).ravel()
        else:
            scale = math.sqrt(np.finfo(float).eps) * (1.0 + np.linalg.norm(x[free]))

            def hvp(v):
                nv = np.linalg.norm(v)
                if nv == 0:
                    return np.zeros_like(v)
                h = scale / nv
                _, gp = restricted_eval(x[free] + h * v)
                return (gp[free] - gf) / h

            diag = np.ones(len(free))
        diag = np.where(diag > 1e-12 * max(diag.max(), 1e-300), diag, max(diag.max(), 1.0))

        p = _pcg(hvp, diag, -gf, budget.cg_tolerance, budget.cg_iterations)
        slope = gf @ p
        if not (slope < 0 and np.all(np.isfinite(p))):
            p = -gf / diag
            slope = gf @ p

        # backtracking: halve until sufficient decrease (non-finite = reject)
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            ft, gt = restricted_eval(x[free] + t * p)
            if math.isfinite(ft) and ft <= f + ARMIJO_C * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            reason = "line-search-failure"
            it -= 1
            break

        step = t * np.linalg.norm(p)
        x[free] = x[free] + t * p
        f_prev, f, g = f, ft, gt
        if step <= budget.step_tolerance * (1.0 + np.linalg.norm(x[free])) or f_prev - f <= budget.step_tolerance * abs(f_prev):
            reason = "step"
            break

    return OptimizeOutcome(x, f0, f, it, reason)
