"""Variable-order, variable-step BDF integration for stiff ODE systems.

Backward differentiation formulas of orders 1..5 in backward-difference
form with a quasi-constant step strategy: the difference array is
rescaled whenever the step or order changes, the implicit equation is
solved by a damped Newton iteration with a finite-difference Jacobian,
and the local error estimate drives step/order selection.  Dense output
evaluates the interpolating polynomial of the current order, so
solutions land exactly on the requested time grid.

A fixed-step, fixed-order variant (`bdf_fixed`) is exposed for
convergence studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .symbolic import SystemExpr, compile_system

MAX_ORDER = 5
NEWTON_MAXITER = 4
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class SolverError(RuntimeError):
    """Base class; `last_time` is the last successfully reached time."""

    def __init__(self, msg: str, last_time: float):
        super().__init__(f"{msg} (last valid time t={last_time:.6g})")
        self.last_time = last_time


class StepSizeUnderflow(SolverError):
    pass


class NonFiniteState(SolverError):
    pass


class MaxStepsExceeded(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    abs_tol: float = 1e-6
    rel_tol: float = 1e-5
    max_order: int = MAX_ORDER
    max_steps: int = 100_000
    first_step: float | None = None

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 1 <= self.max_order <= MAX_ORDER:
            raise ValueError(f"max_order must be in 1..{MAX_ORDER}")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    values: np.ndarray  # (len(times), d)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trajectory values must be finite")
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("times/values length mismatch")


def _as_callable(sys):
    if isinstance(sys, SystemExpr):
        return compile_system(sys)
    return sys


def _safe_eval(f, u):
    """RHS evaluation that maps all failures to None."""
    try:
        out = f(u)
    except (ArithmeticError, ValueError):
        return None
    out = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(out)):
        return None
    return out


def jacobian_fd(sys, u, eps: float = 6e-6) -> np.ndarray:
    """Central finite-difference Jacobian of the right-hand side at u."""
    f = _as_callable(sys)
    u = np.asarray(u, dtype=float)
    n = u.size
    J = np.empty((n, n))
    for j in range(n):
        h = eps * max(1.0, abs(u[j]))
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        fp, fm = f(up), f(um)
        J[:, j] = (np.asarray(fp, dtype=float)
                   - np.asarray(fm, dtype=float)) / (2.0 * h)
    return J


def _compute_R(order: int, factor: float) -> np.ndarray:
    """Difference-array rescaling matrix for a step-size change."""
    I = np.arange(1, order + 1)[:, None]
    J = np.arange(1, order + 1)[None]
    M = np.zeros((order + 1, order + 1))
    M[1:, 1:] = (I - 1 - factor * J) / I
    M[0] = 1
    return np.cumprod(M, axis=0)


def _change_D(D: np.ndarray, order: int, factor: float) -> None:
    R = _compute_R(order, factor)
    U = _compute_R(order, 1.0)
    RU = R.dot(U)
    D[:order + 1] = RU.T.dot(D[:order + 1])


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def _initial_step(f, t0, y0, f0, rtol, atol, t_span):
    scale = atol + np.abs(y0) * rtol
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = _safe_eval(f, y0 + h0 * f0)
    if f1 is None:
        return min(1e-6, t_span / 100)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.5
    return min(100 * h0, h1, t_span)


def solve(sys, u0, t_grid, cfg: SolverConfig = SolverConfig()) -> Trajectory:
    """Integrate u' = f(u) from t_grid[0], returning values on t_grid.

    `sys` is a SystemExpr or a callable f(u) -> array.  Adaptive internal
    stepping; grid values come from the order-k interpolating polynomial
    of each accepted step.  Raises StepSizeUnderflow, NonFiniteState or
    MaxStepsExceeded (each carrying `.last_time`) on failure.
    """
    f = _as_callable(sys)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be a strictly increasing 1-D array")
    y = np.asarray(u0, dtype=float).copy()
    t = float(t_grid[0])
    t_end = float(t_grid[-1])
    atol, rtol = cfg.abs_tol, cfg.rel_tol

    out = np.empty((t_grid.size, y.size))
    out[0] = y
    next_out = 1
    if t_grid.size == 1:
        return Trajectory(times=t_grid.copy(), values=out)

    f0 = _safe_eval(f, y)
    if f0 is None:
        raise NonFiniteState("right-hand side not finite at initial state", t)
    h = cfg.first_step or _initial_step(f, t, y, f0, rtol, atol, t_end - t)
    h = min(h, t_end - t)

    gamma = np.hstack([0, np.cumsum(1 / np.arange(1, MAX_ORDER + 1))])
    error_const = 1 / np.arange(1, MAX_ORDER + 2)  # order k -> 1/(k+1)

    order = 1
    D = np.zeros((MAX_ORDER + 3, y.size))
    D[0] = y
    D[1] = f0 * h
    n_equal_steps = 0
    J = None
    lu = None
    c_lu = None
    n_steps = 0
    min_step = 1e-13 * max(1.0, abs(t_end))

    def ensure_lu(c):
        nonlocal lu, c_lu, J
        if J is None:
            J = jacobian_fd(f, y)
        if lu is None or c_lu != c:
            lu = lu_factor(np.eye(y.size) - c * J)
            c_lu = c

    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        n_steps += 1
        if n_steps > cfg.max_steps:
            raise MaxStepsExceeded(
                f"exceeded {cfg.max_steps} internal steps", t)
        if h < min_step:
            raise StepSizeUnderflow("step size underflow", t)
        if t + h > t_end:
            factor = (t_end - t) / h
            _change_D(D, order, factor)
            h = t_end - t
            n_equal_steps = 0
            lu = None

        t_new = t + h
        y_predict = np.sum(D[:order + 1], axis=0)
        scale = atol + rtol * np.abs(y_predict)
        psi = np.dot(D[1:order + 1].T, gamma[1:order + 1]) / gamma[order]
        c = h / gamma[order]

        converged = False
        current_jac_fresh = False
        while not converged:
            ensure_lu(c)
            d = np.zeros_like(y)
            y_new = y_predict.copy()
            dy_norm_old = None
            ok = True
            for _ in range(NEWTON_MAXITER):
                f_new = _safe_eval(f, y_new)
                if f_new is None:
                    ok = False
                    break
                dy = lu_solve(lu, c * f_new - psi - d)
                dy_norm = _rms(dy / scale)
                rate = None if dy_norm_old is None else dy_norm / dy_norm_old
                if rate is not None and (rate >= 1 or
                                         rate ** (NEWTON_MAXITER) /
                                         (1 - rate) * dy_norm > 1e-3):
                    ok = False
                    break
                y_new += dy
                d += dy
                if dy_norm == 0 or (rate is not None and
                                    rate / (1 - rate) * dy_norm < 1e-3):
                    converged = True
                    break
                dy_norm_old = dy_norm
            if converged:
                break
            if ok is False and not current_jac_fresh:
                # stale Jacobian is the usual suspect; refresh and retry
                J = jacobian_fd(f, y)
                lu = None
                current_jac_fresh = True
                continue
            # genuine nonlinearity: shrink the step
            _change_D(D, order, 0.5)
            h *= 0.5
            n_equal_steps = 0
            lu = None
            if h < min_step:
                raise StepSizeUnderflow(
                    "Newton iteration failed at minimum step size", t)
            t_new = t + h
            y_predict = np.sum(D[:order + 1], axis=0)
            scale = atol + rtol * np.abs(y_predict)
            psi = np.dot(D[1:order + 1].T, gamma[1:order + 1]) / gamma[order]
            c = h / gamma[order]
            current_jac_fresh = False

        scale = atol + rtol * np.abs(y_new)
        error = error_const[order] * d
        error_norm = _rms(error / scale)
        if error_norm > 1:
            factor = max(MIN_FACTOR,
                         0.9 * error_norm ** (-1 / (order + 1)))
            _change_D(D, order, factor)
            h *= factor
            n_equal_steps = 0
            lu = None
            continue

        # step accepted
        n_equal_steps += 1
        t_old = t
        t = t_new
        y = y_new
        D[order + 2] = d - D[order + 1]
        D[order + 1] = d
        for i in reversed(range(order + 1)):
            D[i] += D[i + 1]

        # dense output onto the requested grid
        while next_out < t_grid.size and t_grid[next_out] <= t + 1e-12 * h:
            out[next_out] = _interpolate(t_grid[next_out], t, h, order, D)
            next_out += 1

        if n_equal_steps < order + 1:
            continue

        # order/step selection once enough equal steps accumulated
        if order > 1:
            error_m = error_const[order - 1] * D[order]
            error_m_norm = _rms(error_m / scale)
        else:
            error_m_norm = np.inf
        if order < cfg.max_order:
            error_p = error_const[order + 1] * D[order + 2]
            error_p_norm = _rms(error_p / scale)
        else:
            error_p_norm = np.inf
        error_norms = np.array([error_m_norm, error_norm, error_p_norm])
        with np.errstate(divide="ignore"):
            factors = error_norms ** (-1 / np.arange(order, order + 3))
        delta_order = int(np.argmax(factors)) - 1
        order += delta_order
        factor = min(MAX_FACTOR, max(MIN_FACTOR, 0.9 * factors[delta_order + 1]))
        if factor != 1.0 or delta_order != 0:
            _change_D(D, order, factor)
            h *= factor
            n_equal_steps = 0
            lu = None

    if next_out < t_grid.size:
        # grid tail falls within roundoff of t_end
        for k in range(next_out, t_grid.size):
            out[k] = y
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("non-finite values in output", t)
    return Trajectory(times=t_grid.copy(), values=out)


def _interpolate(t_eval, t, h, order, D):
    x = (t_eval - (t - h * np.arange(order))) / (h * (1 + np.arange(order)))
    p = np.cumprod(x)
    return D[0] + p.dot(D[1:order + 1])


# classic uniform-grid BDF coefficients: y_n = sum a_j y_{n-j} + h b f(y_n)
_FIXED_A = {
    1: [1.0],
    2: [4 / 3, -1 / 3],
    3: [18 / 11, -9 / 11, 2 / 11],
    4: [48 / 25, -36 / 25, 16 / 25, -3 / 25],
    5: [300 / 137, -300 / 137, 200 / 137, -75 / 137, 12 / 137],
}
_FIXED_B = {1: 1.0, 2: 2 / 3, 3: 6 / 11, 4: 12 / 25, 5: 60 / 137}


def bdf_fixed(sys, u0, t_span, h, order: int,
              startup: np.ndarray | None = None) -> Trajectory:
    """Fixed-step, fixed-order BDF corrector on a uniform grid.

    `startup` optionally supplies the order-1 solution values after u0
    (shape (order-1, d)); otherwise they come from fine-step RK4 so the
    startup error does not pollute convergence measurements.
    """
    if order not in _FIXED_A:
        raise ValueError(f"order must be in 1..{MAX_ORDER}")
    f = _as_callable(sys)
    t0, t1 = t_span
    n_steps = int(round((t1 - t0) / h))
    if abs(t0 + n_steps * h - t1) > 1e-9 * max(1.0, abs(t1)):
        raise ValueError("t_span must be an integer number of steps")
    y0 = np.asarray(u0, dtype=float)
    ys = [y0]
    if order > 1:
        if startup is not None:
            ys += [np.asarray(v, dtype=float) for v in startup]
        else:
            y = y0.copy()
            for _ in range(order - 1):
                y = _rk4_span(f, y, h, substeps=100)
                ys.append(y)
    a = np.array(_FIXED_A[order])
    b = _FIXED_B[order]
    eye = np.eye(y0.size)
    for n in range(len(ys) - 1, n_steps):
        hist = ys[-order:][::-1]  # y_{n}, y_{n-1}, ...
        rhs_const = sum(aj * yj for aj, yj in zip(a, hist))
        y = ys[-1].copy()
        J = jacobian_fd(f, y)
        lu = lu_factor(eye - h * b * J)
        for _ in range(10):
            fy = _safe_eval(f, y)
            if fy is None:
                raise NonFiniteState("right-hand side not finite",
                                     t0 + n * h)
            res = rhs_const + h * b * fy - y
            dy = lu_solve(lu, res)
            y = y + dy
            if _rms(dy) < 1e-13 * max(1.0, _rms(y)):
                break
        ys.append(y)
    times = t0 + h * np.arange(n_steps + 1)
    return Trajectory(times=times, values=np.array(ys))


def _rk4_span(f, y, h, substeps=100):
    hh = h / substeps
    for _ in range(substeps):
        k1 = f(y)
        k2 = f(y + 0.5 * hh * k1)
        k3 = f(y + 0.5 * hh * k2)
        k4 = f(y + hh * k3)
        y = y + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def rk4(sys, u0, t_grid) -> Trajectory:
    """Fixed-step classical Runge-Kutta on the given grid (oracle use)."""
    f = _as_callable(sys)
    t_grid = np.asarray(t_grid, dtype=float)
    y = np.asarray(u0, dtype=float).copy()
    out = np.empty((t_grid.size, y.size))
    out[0] = y
    for i in range(1, t_grid.size):
        h = t_grid[i] - t_grid[i - 1]
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i] = y
    return Trajectory(times=t_grid.copy(), values=out)
