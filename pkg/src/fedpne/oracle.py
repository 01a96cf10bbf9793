"""Dense-grid extremum search used for f* and for objective normalization."""

from __future__ import annotations

import numpy as np
from scipy import optimize

MAX_GRID_POINTS = 4_000_000
_CHUNK = 1_000_000


class OracleError(ValueError):
    pass


def grid_points(domain, resolution: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, resolution) for lo, hi in domain]
    if len(axes) == 1:
        return axes[0][:, None]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def grid_extremum(func, domain, resolution: int, mode: str = "max", refine: bool = True):
    """Return ``(value, point)`` of the max (or min) of ``func`` over ``domain``.

    ``func`` maps an ``(n, D)`` array to ``(n,)`` values.  The grid has
    ``resolution`` points per axis, endpoints included; ties go to the first
    grid point in C order.  With ``refine`` a bounded local search is started
    between the neighbours of the best grid point and kept only if it
    improves on the grid value.
    """
    dim = len(domain)
    if dim >= 3:
        raise OracleError(f"grid oracle is infeasible for D={dim}; supply f* explicitly")
    if resolution < 2:
        raise OracleError("resolution must be at least 2")
    if resolution**dim > MAX_GRID_POINTS:
        raise OracleError(
            f"resolution {resolution} per axis gives {resolution**dim} points in D={dim}; "
            f"limit is {MAX_GRID_POINTS}"
        )
    if mode not in ("max", "min"):
        raise OracleError(f"mode must be 'max' or 'min', got {mode!r}")
    sign = 1.0 if mode == "max" else -1.0

    pts = grid_points(domain, resolution)
    best_val, best_idx = -np.inf, 0
    for start in range(0, len(pts), _CHUNK):
        vals = sign * np.asarray(func(pts[start:start + _CHUNK]), dtype=float)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_idx = float(vals[j]), start + j
    best_pt = pts[best_idx].copy()
    if refine:
        best_val, best_pt = _refine(func, domain, resolution, sign, best_val, best_pt)
    return sign * best_val, best_pt


def _refine(func, domain, resolution, sign, best_val, best_pt):
    steps = np.array([(hi - lo) / (resolution - 1) for lo, hi in domain])
    lo = np.maximum(best_pt - steps, [d[0] for d in domain])
    hi = np.minimum(best_pt + steps, [d[1] for d in domain])

    def neg(z):
        return -sign * float(func(np.atleast_2d(z))[0])

    if len(domain) == 1:
        res = optimize.minimize_scalar(
            lambda t: neg([t]), bounds=(lo[0], hi[0]), method="bounded",
            options={"xatol": 1e-15, "maxiter": 2000},
        )
        cand = np.array([res.x])
        # Brent stops at a relative x tolerance near 1e-8, which costs ~1e-4
        # in f at a square-root cusp; golden section runs to float resolution
        g = _golden(lambda t: neg([t]), lo[0], hi[0])
        if neg([g]) < neg(cand):
            cand = np.array([g])
    else:
        res = optimize.minimize(
            neg, best_pt, method="Nelder-Mead", bounds=list(zip(lo, hi)),
            options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 4000},
        )
        cand = np.clip(res.x, lo, hi)
    cand_val = -neg(cand)
    if cand_val > best_val:
        return cand_val, cand
    return best_val, best_pt


_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _golden(fn, a: float, b: float, max_iter: int = 200) -> float:
    """Golden-section minimizer of ``fn`` on ``[a, b]`` down to adjacent floats."""
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if not (a < c < d < b):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(d)
    return c if fc <= fd else d
