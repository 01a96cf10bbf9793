"""Objectives, heterogeneous client ensembles and bounded reward noise.

All evaluators take an ``(n, D)`` array of points and return ``(n,)`` values.
``Objective.__call__`` also accepts a single point or, for ``D == 1``, a flat
vector of abscissae.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from .oracle import grid_extremum

NOISE_KINDS = ("none", "bounded-uniform", "truncated-gaussian")

# spawn-key tag for the perturbation draws of make_ensemble
_PERTURB_STREAM = 7


class ObjectiveError(ValueError):
    pass


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce ``x`` to shape ``(n, dim)``; the flag says "was a single point"."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise ObjectiveError(f"scalar input for a {dim}-D objective")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if dim == 1:
            return arr[:, None], False
        if arr.shape[0] != dim:
            raise ObjectiveError(f"expected a point of length {dim}, got {arr.shape[0]}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ObjectiveError(f"expected points of shape (n, {dim}), got {arr.shape}")
    return arr, False


@dataclass(eq=False)
class Objective:
    name: str
    func: Callable[[np.ndarray], np.ndarray]
    domain: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    params: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return len(self.domain)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(points), dtype=float)

    def __call__(self, x):
        pts, single = _as_points(x, self.dimension)
        vals = self.evaluate(pts)
        return float(vals[0]) if single else vals

    @property
    def descriptor(self) -> dict:
        return {"name": self.name, **self.params}


# -- synthetic functions --------------------------------------------------------


def garland(x):
    """Garland test function ``x(1-x)(4 - sqrt|sin 60x|)`` on [0, 1]."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)) or np.any(np.isnan(x)):
        raise ObjectiveError("garland is defined on [0, 1]")
    out = x * (1.0 - x) * (4.0 - np.sqrt(np.abs(np.sin(60.0 * x))))
    return out if out.ndim else float(out)


def double_sine_envelope(t):
    """Period-1 switch ``max(0, sin 2πt)`` used inside double_sine."""
    return np.maximum(0.0, np.sin(2.0 * np.pi * np.asarray(t, dtype=float)))


def double_sine(x, rho1: float = 0.8, rho2: float = 0.3):
    """DoubleSine test function on [0, 1]; its supremum 0 sits at x = 0.5.

    With ``u = |2x - 1|``, ``a1 = -log2(rho1)``, ``a2 = -log2(rho2)``::

        f(x) = s(log2(u) / 2) * (u**a2 - u**a1) - u**a1

    where ``s`` is :func:`double_sine_envelope`.  At ``u = 0`` every power
    vanishes, so ``f(0.5) = 0``.
    """
    if not (0.0 < rho1 < 1.0 and 0.0 < rho2 < 1.0):
        raise ObjectiveError("rho1 and rho2 must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    u = np.abs(2.0 * x - 1.0)
    a1, a2 = -np.log2(rho1), -np.log2(rho2)
    pos = u > 0.0
    safe = np.where(pos, u, 1.0)
    val = double_sine_envelope(0.5 * np.log2(safe)) * (safe**a2 - safe**a1) - safe**a1
    out = np.where(pos, val, 0.0)
    return out if out.ndim else float(out)


def garland_objective() -> Objective:
    return Objective("garland", lambda p: garland(p[:, 0]))


def double_sine_objective(rho1: float = 0.8, rho2: float = 0.3) -> Objective:
    return Objective(
        "double_sine",
        lambda p: double_sine(p[:, 0], rho1, rho2),
        params={"rho1": rho1, "rho2": rho2},
    )


def normalize_objective(raw: Objective, resolution: int = 100_000) -> Objective:
    """Affinely rescale ``raw`` onto [0, 1] using grid-oracle extrema.

    The scaled values are clipped to [0, 1] so that residual oracle error
    (the true extremum lying between grid points) never leaks outside the
    reward range.
    """
    hi, _ = grid_extremum(raw.evaluate, raw.domain, resolution, mode="max")
    lo, _ = grid_extremum(raw.evaluate, raw.domain, resolution, mode="min")
    span = hi - lo
    if not np.isfinite(span):
        raise ObjectiveError(f"{raw.name}: non-finite range [{lo}, {hi}]")
    if span <= 0.0:
        raise ObjectiveError(f"{raw.name}: degenerate (constant) objective, cannot normalize")

    def func(p):
        return np.clip((raw.evaluate(p) - lo) / span, 0.0, 1.0)

    params = dict(raw.params)
    params.update(normalized=True, offset=lo, scale=span, resolution=resolution)
    return Objective(raw.name, func, raw.domain, params)


# -- noise ------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean reward noise whose support keeps ``f(x) + eps`` inside [0, 1].

    ``bounded-uniform``: uniform on ``[-w, w]`` with ``w = min(scale, f, 1 - f)``.
    ``truncated-gaussian``: ``N(0, scale**2)`` truncated symmetrically to
    ``[-w, w]`` with ``w = min(f, 1 - f)``.  Symmetric truncation keeps the
    mean at zero, so no clipping is ever applied to the reward.
    """

    kind: str = "none"
    scale: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ObjectiveError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if not self.scale >= 0.0:
            raise ObjectiveError(f"noise scale must be >= 0, got {self.scale}")

    def _half_width(self, fx):
        room = np.clip(np.minimum(fx, 1.0 - fx), 0.0, None)
        if self.kind == "bounded-uniform":
            return np.minimum(self.scale, room)
        return room

    def sample(self, fx, size: int, rng: np.random.Generator) -> np.ndarray:
        """``size`` independent noise draws; ``fx`` is the mean reward, scalar or per draw."""
        if self.kind == "none" or self.scale == 0.0:
            return np.zeros(size)
        w = self._half_width(np.asarray(fx, dtype=float))
        if self.kind == "bounded-uniform":
            return w * rng.uniform(-1.0, 1.0, size)
        a = w / self.scale
        u = rng.uniform(special.ndtr(-a), special.ndtr(a), size)
        # the clip only absorbs ndtri round-off at the truncation points
        return np.clip(self.scale * special.ndtri(u), -w, w)

    def variance(self, fx: float) -> float:
        if self.kind == "none" or self.scale == 0.0:
            return 0.0
        w = float(self._half_width(fx))
        if self.kind == "bounded-uniform":
            return w * w / 3.0
        if w == 0.0:
            return 0.0
        a = w / self.scale
        mass = special.ndtr(a) - special.ndtr(-a)
        pdf = np.exp(-0.5 * a * a) / np.sqrt(2.0 * np.pi)
        return float(self.scale**2 * (1.0 - 2.0 * a * pdf / mass))


# -- client ensembles ----------------------------------------------------------


@dataclass(eq=False)
class ObjectiveEnsemble:
    locals: list[Objective]
    global_objective: Objective
    noise: NoiseModel = field(default_factory=NoiseModel)
    info: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.locals)

    @property
    def dimension(self) -> int:
        return self.global_objective.dimension

    @property
    def domain(self):
        return self.global_objective.domain

    def global_evaluate(self, x):
        return self.global_objective(x)

    def local(self, m: int) -> Objective:
        if not 1 <= m <= self.M:
            raise ObjectiveError(f"client id {m} outside 1..{self.M}")
        return self.locals[m - 1]


def bump(points: np.ndarray, domain) -> np.ndarray:
    """Smooth bump ``prod_d sin(pi * u_d)`` in [0, 1], zero on the boundary."""
    lo = np.array([d[0] for d in domain])
    hi = np.array([d[1] for d in domain])
    u = (points - lo) / (hi - lo)
    return np.prod(np.sin(np.pi * u), axis=1)


def perturbation_coefficients(M: int, perturb_scale: float, seed: int) -> np.ndarray:
    """Zero-sum client coefficients with ``max |a_m| <= 1``.

    Draws ``perturb_scale * N(0, 1)`` per client, subtracts the mean and, if
    any coefficient exceeds 1 in magnitude, divides all of them by the
    largest magnitude.
    """
    rng = np.random.default_rng([seed, _PERTURB_STREAM])
    z = perturb_scale * rng.standard_normal(M)
    a = z - z.mean()
    peak = np.max(np.abs(a))
    if peak > 1.0:
        a = a / peak
    return a


def make_ensemble(
    base: Objective,
    M: int,
    perturb_scale: float = 1.0,
    seed: int = 0,
    noise: NoiseModel | None = None,
) -> ObjectiveEnsemble:
    """Build M local objectives whose average is exactly ``base``.

    ``f_m = base + a_m * g`` with ``g = base * (1 - base) * bump``.  Because
    ``|a_m| <= 1`` and ``bump`` lies in [0, 1], every ``f_m`` stays inside
    ``[base**2, 2*base - base**2]`` which is a subset of [0, 1].
    """
    if M < 1:
        raise ObjectiveError("M must be >= 1")
    if perturb_scale < 0:
        raise ObjectiveError("perturb_scale must be >= 0")
    coeffs = perturbation_coefficients(M, perturb_scale, seed)
    domain = base.domain

    def make_local(a_m: float) -> Objective:
        def func(p):
            f = base.evaluate(p)
            if a_m == 0.0:
                return f
            return np.clip(f + a_m * f * (1.0 - f) * bump(p, domain), 0.0, 1.0)

        return Objective(f"{base.name}[a={a_m:+.4f}]", func, domain, {"coefficient": float(a_m)})

    return ObjectiveEnsemble(
        locals=[make_local(float(a)) for a in coeffs],
        global_objective=base,
        noise=noise or NoiseModel(),
        info={"base": base.descriptor, "perturb_scale": perturb_scale, "seed": seed,
              "coefficients": coeffs.tolist()},
    )


def sample_rewards(
    ensemble: ObjectiveEnsemble, m: int, x, n: int, rng: np.random.Generator,
    fx: float | None = None,
) -> np.ndarray:
    """``n`` independent noisy rewards of client ``m`` at point ``x``.

    ``fx`` may carry a precomputed ``f_m(x)`` to skip re-evaluation.
    """
    if fx is None:
        fx = float(ensemble.local(m)(np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0])
    return fx + ensemble.noise.sample(fx, n, rng)


def sample_reward(ensemble: ObjectiveEnsemble, m: int, x, rng: np.random.Generator) -> float:
    return float(sample_rewards(ensemble, m, x, 1, rng)[0])
