"""One-dimensional profile search: grid scan followed by golden-section refinement."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .shares import InversionError

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class ProfileResult:
    x: float
    value: float
    payload: object = None
    n_evals: int = 0
    n_failed: int = 0
    grid: np.ndarray = field(default=None, repr=False)
    grid_values: np.ndarray = field(default=None, repr=False)


def golden_section(f, a, b, tol=1e-6):
    """Minimize ``f`` on ``[a, b]``; returns ``(x, f(x), payload, n_evals)``.

    ``f`` returns ``(value, payload)``.
    """
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, pc = f(c)
    fd, pd = f(d)
    n = 2
    while abs(b - a) > tol:
        if fc <= fd:
            b, d, fd, pd = d, c, fc, pc
            c = b - INV_PHI * (b - a)
            fc, pc = f(c)
        else:
            a, c, fc, pc = c, d, fd, pd
            d = a + INV_PHI * (b - a)
            fd, pd = f(d)
        n += 1
    if fc <= fd:
        return c, fc, pc, n
    return d, fd, pd, n


def profile_minimize(f, grid, tol=1e-6, refine=True):
    """Minimize a scalar function over a sorted grid, then refine locally.

    ``f(x)`` returns ``(value, payload)``.  Points where ``f`` raises
    :class:`InversionError` are skipped with a warning.  The returned point
    is never worse than the best grid point.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.full(grid.size, np.inf)
    payloads = [None] * grid.size
    failed = 0

    def safe(x):
        nonlocal failed
        try:
            return f(x)
        except InversionError as exc:
            failed += 1
            warnings.warn(f"skipping sigma={x:.6g}: {exc}", RuntimeWarning, stacklevel=3)
            return np.inf, None

    for i, x in enumerate(grid):
        values[i], payloads[i] = safe(x)
    if not np.isfinite(values).any():
        raise InversionError("every grid point failed")
    k = int(np.argmin(values))
    best = ProfileResult(x=float(grid[k]), value=float(values[k]), payload=payloads[k],
                         n_evals=grid.size, grid=grid, grid_values=values)
    if refine and grid.size > 1:
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, grid.size - 1)]
        x, v, pl, n = golden_section(safe, lo, hi, tol)
        best.n_evals += n
        if v < best.value:
            best.x, best.value, best.payload = float(x), float(v), pl
    best.n_failed = failed
    return best
