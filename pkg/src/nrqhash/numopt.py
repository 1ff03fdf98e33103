"""Unconstrained smooth maximization and the linear-algebra kernels behind training.

The maximizer is a limited-memory quasi-Newton method (two-loop recursion)
with Armijo backtracking. The training subproblems it serves are
unconstrained, so no box projection is involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

ARMIJO_CONSTANT = 1e-4
BACKTRACK_FACTOR = 0.5


class NonFiniteError(FloatingPointError):
    """A value or gradient evaluation produced a non-finite number."""

    def __init__(self, message: str, point: np.ndarray | None = None):
        super().__init__(message)
        self.point = point


@dataclass(frozen=True)
class ObjectiveFn:
    """A scalar objective and its gradient, both deterministic for fixed input."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SolverSettings:
    memory_pairs: int = 10
    max_iterations: int = 50
    gradient_tolerance: float = 1e-6
    max_line_search_steps: int = 20

    def __post_init__(self):
        if (
            self.memory_pairs <= 0
            or self.max_iterations <= 0
            or self.gradient_tolerance <= 0
            or self.max_line_search_steps <= 0
        ):
            raise ValueError("all solver settings must be strictly positive")


@dataclass(frozen=True)
class MaximizeResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    line_search_failed: bool


def _check_finite(kind: str, value, point: np.ndarray):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite {kind} at iterate {point!r}", point=point)


def maximize(f: ObjectiveFn, x0, settings: SolverSettings | None = None) -> MaximizeResult:
    """Maximize f from x0; never returns an iterate with objective below f(x0).

    Terminates when the gradient infinity-norm drops to the tolerance or the
    iteration budget runs out. If backtracking cannot find an improving step
    the best iterate so far is returned with ``line_search_failed`` set.
    """
    settings = settings or SolverSettings()
    x = np.array(x0, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite start point {x!r}", point=x)

    # Internally minimize phi = -f.
    phi = -float(f.value(x))
    _check_finite("value", phi, x)
    g = -np.asarray(f.gradient(x), dtype=np.float64).ravel()
    _check_finite("gradient", g, x)

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []

    iterations = 0
    failed = False
    converged = bool(np.max(np.abs(g)) <= settings.gradient_tolerance)

    while not converged and iterations < settings.max_iterations:
        d = -_two_loop(g, s_hist, y_hist, rho_hist)
        if not s_hist:
            # no curvature information yet: take a unit-length first step so
            # backtracking can cope with arbitrarily scaled gradients
            d = d / max(1.0, float(np.linalg.norm(d)))
        dg = float(d @ g)
        if dg >= 0.0:  # history gave a non-descent direction; fall back
            d = -g / max(1.0, float(np.linalg.norm(g)))
            dg = float(d @ g)

        step = 1.0
        accepted = False
        for _ in range(settings.max_line_search_steps):
            x_new = x + step * d
            phi_new = -float(f.value(x_new))
            # the strict inequality matters once the sufficient-decrease margin
            # underflows: a step with no measurable improvement is a failure,
            # not an accepted iterate
            if (
                np.isfinite(phi_new)
                and phi_new < phi
                and phi_new <= phi + ARMIJO_CONSTANT * step * dg
            ):
                accepted = True
                break
            step *= BACKTRACK_FACTOR
        if not accepted:
            failed = True
            break

        g_new = -np.asarray(f.gradient(x_new), dtype=np.float64).ravel()
        _check_finite("gradient", g_new, x_new)

        s = x_new - x
        y = g_new - g
        # Armijo alone does not guarantee positive curvature along the step,
        # so damp the pair (Powell) instead of discarding it. B s is free:
        # s = -step * H g, hence B s = -step * g.
        bs = -step * g
        sbs = float(s @ bs)
        ys = float(y @ s)
        if sbs > 0.0 and ys < 0.2 * sbs:
            theta = 0.8 * sbs / (sbs - ys)
            y = theta * y + (1.0 - theta) * bs
            ys = float(y @ s)
        if ys > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / ys)
            if len(s_hist) > settings.memory_pairs:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)

        x, phi, g = x_new, phi_new, g_new
        iterations += 1
        converged = bool(np.max(np.abs(g)) <= settings.gradient_tolerance)

    return MaximizeResult(
        x=x, value=-phi, iterations=iterations, converged=converged, line_search_failed=failed
    )


def _two_loop(g: np.ndarray, s_hist, y_hist, rho_hist) -> np.ndarray:
    """Apply the inverse-Hessian approximation from stored curvature pairs."""
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    if y_hist:
        y_last = y_hist[-1]
        q *= float(s_hist[-1] @ y_last) / float(y_last @ y_last)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def check_gradient(f: ObjectiveFn, x, step: float | None = None) -> float:
    """Max relative error between the analytic gradient and central differences.

    Per coordinate: |analytic - central| / (|analytic| + |central| + 1e-12).
    """
    x = np.array(x, dtype=np.float64).ravel()
    if step is None:
        step = 1e-6 * (1.0 + float(np.max(np.abs(x))))
    if step <= 0:
        raise ValueError("step must be positive")
    g = np.asarray(f.gradient(x), dtype=np.float64).ravel()
    _check_finite("gradient", g, x)
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        fp = float(f.value(xp))
        fm = float(f.value(xm))
        _check_finite("value", fp, xp)
        _check_finite("value", fm, xm)
        diff = (fp - fm) / (2.0 * step)
        err = abs(g[i] - diff) / (abs(g[i]) + abs(diff) + 1e-12)
        worst = max(worst, err)
    return worst


def top_eigenvectors(c, k: int) -> np.ndarray:
    """The k unit eigenvectors of a symmetric matrix with the largest eigenvalues.

    Columns come in descending eigenvalue order. Sign convention for
    determinism: the entry of largest absolute value in each column is made
    positive (ties resolved toward the lowest index).
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {c.shape}")
    d = c.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= {d}, got k={k}")
    asym = np.linalg.norm(c - c.T)
    if asym > 1e-9 * (1.0 + np.linalg.norm(c)):
        raise ValueError(f"matrix is not symmetric (residual {asym:.3e})")
    sym = 0.5 * (c + c.T)
    _, vecs = np.linalg.eigh(sym)  # ascending eigenvalues
    cols = np.ascontiguousarray(vecs[:, ::-1][:, :k])
    for j in range(k):
        pivot = int(np.argmax(np.abs(cols[:, j])))  # argmax takes the lowest index on ties
        if cols[pivot, j] < 0:
            cols[:, j] = -cols[:, j]
    return cols


def svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD of a square matrix as (left, singular_values, right).

    Satisfies m = left @ diag(singular_values) @ right.T with both factor
    matrices orthogonal and singular values non-negative descending.
    """
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    left, vals, right_t = np.linalg.svd(m)
    return left, vals, right_t.T
