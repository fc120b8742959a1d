"""Limited-memory quasi-Newton minimization with optional L1 handling.

Two modes share one loop:

* smooth (no L1): classic two-loop recursion with a strong-Wolfe line
  search (bracket + cubic-interpolation zoom);
* L1 > 0: orthant-wise variant -- pseudo-gradient in place of the gradient,
  direction sign-aligned against it, and a backtracking line search whose
  candidate points are projected onto the current orthant.

Everything is plain float64 numpy with a fixed evaluation order, so repeated
runs from the same start produce bitwise-identical iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SmoothFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class OptimizerConfig:
    max_iterations: int = 100
    epsilon: float = 1e-5  # converged when ||g|| <= epsilon * max(1, ||x||)
    stop_period: int = 10
    stop_delta: float = 1e-5
    memory: int = 6
    line_search_max_trials: int = 20
    l1_coefficient: float = 0.0


@dataclass
class OptimizeResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    status: str  # converged | stopped_delta | max_iterations | line_search_failed
    trace: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "stopped_delta")


def _pseudo_gradient(x: np.ndarray, grad: np.ndarray, c1: float) -> np.ndarray:
    """Steepest-descent direction generator for f + c1*||x||_1 at x."""
    pg = np.where(x > 0, grad + c1, np.where(x < 0, grad - c1, 0.0))
    at_zero = x == 0
    right = grad[at_zero] + c1
    left = grad[at_zero] - c1
    pz = np.zeros(right.shape)
    pz[right < 0] = right[right < 0]
    pz[left > 0] = left[left > 0]
    pg[at_zero] = pz
    return pg


def _two_loop(pg: np.ndarray, s_list, y_list, rho_list) -> np.ndarray:
    q = pg.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * (y @ q)
        q += s * (a - b)
    return -q


def _wolfe_line_search(fun, x, f0, g0, d, max_trials, c1w=1e-4, c2w=0.9):
    """Strong-Wolfe search along d. Returns (alpha, f, g, n_used, ok).

    On failure the best strictly-decreasing trial seen is returned with
    ok=False; when not even that exists, alpha is None.
    """
    dphi0 = float(g0 @ d)
    evals = 0
    best = None  # (alpha, f, g)

    def evaluate(alpha):
        nonlocal evals, best
        f, g = fun(x + alpha * d)
        evals += 1
        if f < f0 and (best is None or f < best[1]):
            best = (alpha, f, g)
        return f, g

    def interpolate(lo, hi, f_lo, d_lo, f_hi):
        # Cubic minimizer with bisection fallback and safeguarding.
        span = hi - lo
        if span == 0:
            return lo
        with np.errstate(all="ignore"):
            d1 = d_lo + (f_lo - f_hi) * 3.0 / span  # quadratic fit slope trick
            disc = d1 * d1 - d_lo * (d_lo + 2 * d1)
            if disc >= 0:
                w = np.sqrt(disc)
                denom = 2 * d1 + d_lo + 2 * w
                if denom != 0:
                    cand = lo + span * (d1 + w) / denom
                    if np.isfinite(cand) and min(lo, hi) < cand < max(lo, hi):
                        frac = abs(cand - lo) / abs(span)
                        if 0.05 < frac < 0.95:
                            return float(cand)
        return lo + 0.5 * span

    def zoom(a_lo, a_hi, f_lo, d_lo, f_hi):
        nonlocal evals
        while evals < max_trials:
            a = interpolate(a_lo, a_hi, f_lo, d_lo, f_hi)
            f_a, g_a = evaluate(a)
            d_a = float(g_a @ d)
            if f_a > f0 + c1w * a * dphi0 or f_a >= f_lo:
                a_hi, f_hi = a, f_a
            else:
                if abs(d_a) <= -c2w * dphi0:
                    return a, f_a, g_a, True
                if d_a * (a_hi - a_lo) >= 0:
                    a_hi, f_hi = a_lo, f_lo
                a_lo, f_lo, d_lo = a, f_a, d_a
            if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
                break
        return None, None, None, False

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    alpha = 1.0
    while evals < max_trials:
        f_a, g_a = evaluate(alpha)
        d_a = float(g_a @ d)
        if f_a > f0 + c1w * alpha * dphi0 or (a_prev > 0 and f_a >= f_prev):
            a, f, g, ok = zoom(a_prev, alpha, f_prev, d_prev, f_a)
            if ok:
                return a, f, g, evals, True
            break
        if abs(d_a) <= -c2w * dphi0:
            return alpha, f_a, g_a, evals, True
        if d_a >= 0:
            a, f, g, ok = zoom(alpha, a_prev, f_a, d_a, f_prev)
            if ok:
                return a, f, g, evals, True
            break
        a_prev, f_prev, d_prev = alpha, f_a, d_a
        alpha = min(2.0 * alpha, 1e10)

    if best is not None:
        return best[0], best[1], best[2], evals, False
    return None, None, None, evals, False


def _orthant_line_search(fun, x, total0, g0, pg, d, c1, max_trials, gamma=1e-4):
    """Backtracking Armijo search with orthant projection (L1 mode)."""
    orthant = np.where(x != 0, np.sign(x), -np.sign(pg))
    alpha = 1.0
    evals = 0
    while evals < max_trials:
        x_new = x + alpha * d
        x_new[np.sign(x_new) != orthant] = 0.0
        f_new, g_new = fun(x_new)
        evals += 1
        total_new = f_new + c1 * np.abs(x_new).sum()
        if total_new <= total0 + gamma * float(pg @ (x_new - x)):
            return x_new, f_new, g_new, total_new, evals, True
        alpha *= 0.5
    return None, None, None, None, evals, False


def minimize(fun: SmoothFn, x0: np.ndarray, config: OptimizerConfig) -> OptimizeResult:
    """Minimize fun(x) + l1_coefficient * ||x||_1.

    ``fun`` must return the smooth value and its gradient; any L2 term
    belongs inside ``fun``.
    """
    c1 = config.l1_coefficient
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun(x)
    total = f + c1 * np.abs(x).sum() if c1 > 0 else f
    history: list[float] = [total]

    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []

    status = "max_iterations"
    it = 0
    for it in range(1, config.max_iterations + 1):
        pg = _pseudo_gradient(x, g, c1) if c1 > 0 else g
        gnorm = float(np.linalg.norm(pg))
        if gnorm <= config.epsilon * max(1.0, float(np.linalg.norm(x))):
            status = "converged"
            break

        d = _two_loop(pg, s_list, y_list, rho_list)
        if c1 > 0:
            d[d * pg >= 0] = 0.0  # keep only components that descend in pseudo-grad
        if float(d @ pg) >= 0 or not np.isfinite(d).all():
            s_list, y_list, rho_list = [], [], []
            d = -pg

        if c1 > 0:
            x_new, f_new, g_new, total_new, _, ok = _orthant_line_search(
                fun, x, total, g, pg, d, c1, config.line_search_max_trials
            )
            if not ok:
                status = "line_search_failed"
                break
        else:
            alpha, f_new, g_new, _, ok = _wolfe_line_search(
                fun, x, f, g, d, config.line_search_max_trials
            )
            if alpha is None:
                status = "line_search_failed"
                break
            x_new = x + alpha * d
            total_new = f_new
            if not ok:
                # Accept the decreasing iterate but report the failure.
                s_list, y_list, rho_list = [], [], []
                status = "line_search_failed"

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10:
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > config.memory:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)

        x, f, g, total = x_new, f_new, g_new, total_new
        history.append(total)
        if status == "line_search_failed":
            break

        if len(history) > config.stop_period:
            past = history[-config.stop_period - 1]
            improvement = (past - total) / max(abs(total), 1.0)
            if improvement < config.stop_delta:
                status = "stopped_delta"
                break

    pg = _pseudo_gradient(x, g, c1) if c1 > 0 else g
    return OptimizeResult(
        x=x,
        value=total,
        grad_norm=float(np.linalg.norm(pg)),
        iterations=it,
        status=status,
        trace=history,
    )
