"""Monte-Carlo comparison of two vector fields.

The expression error between a true right-hand side f and a candidate
f_hat is the average, over points u sampled uniformly from a box, of
||f(u) - f_hat(u)||_2 / ||f(u)||_2.
"""

from __future__ import annotations

import numpy as np

from .tree import DimensionMismatch, PlaceholderPresent, SystemExpr, evaluate_many

# degenerate sample points (domain failures, zero denominator) are
# redrawn at most this many times before being skipped
MAX_RESAMPLE = 10


def expression_error(f: SystemExpr, f_hat: SystemExpr, n_points: int = 50,
                     box: float = 5.0, rng: np.random.Generator | None = None
                     ) -> float:
    if f.dim != f_hat.dim:
        raise DimensionMismatch(
            f"dimensions differ: {f.dim} vs {f_hat.dim}")
    if f.has_placeholder() or f_hat.has_placeholder():
        raise PlaceholderPresent("cannot score expressions with placeholders")
    if rng is None:
        rng = np.random.default_rng()
    errors = []
    for _ in range(n_points):
        for _ in range(MAX_RESAMPLE):
            u = rng.uniform(-box, box, size=(1, f.dim))
            fu = evaluate_many(f, u)[0]
            fhu = evaluate_many(f_hat, u)[0]
            if not (np.all(np.isfinite(fu)) and np.all(np.isfinite(fhu))):
                continue
            denom = np.linalg.norm(fu)
            if denom == 0.0:
                continue
            errors.append(np.linalg.norm(fu - fhu) / denom)
            break
        # point skipped after MAX_RESAMPLE failed draws
    if not errors:
        return float("nan")
    return float(np.mean(errors))
