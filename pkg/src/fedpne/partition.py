"""k-ary hierarchical partition of an axis-aligned box.

Node ``(h, i)`` is the ``i``-th cell (1-based) at depth ``h``; its children are
``(h + 1, k*i - j)`` for ``j = k-1, ..., 0``.  Every level splits exactly one
axis into ``k`` equal slabs and the child with the smallest index takes the
lowest slab.  The axis split at depth ``h`` is either ``h mod D`` (round robin)
or drawn from a generator seeded on ``(seed, h)``.

Cell bounds are computed from integer slab counters, so the shared face of two
siblings is the same float expression on both sides and the children tile the
parent without gaps.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

ROUND_ROBIN = "round-robin-axis"
SEEDED_RANDOM = "seeded-random-axis"
SPLIT_POLICIES = (ROUND_ROBIN, SEEDED_RANDOM)

# Deepest level the protocol will expand to.  Indices are Python ints, so this
# bounds float cell widths (2**-60) rather than integer overflow.
MAX_DEPTH = 60


class PartitionError(ValueError):
    pass


class NodeId(NamedTuple):
    depth: int
    index: int

    def __str__(self) -> str:
        return f"({self.depth},{self.index})"


ROOT = NodeId(0, 1)


@dataclass(frozen=True)
class CellBox:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lower) + np.asarray(self.upper)) / 2.0

    def contains(self, x, strict: bool = False) -> bool:
        x = np.asarray(x, dtype=float)
        if strict:
            return bool(np.all(x > self.lower) and np.all(x < self.upper))
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class PartitionSpec:
    """Arity, domain box and axis-selection rule of a partition.

    ``domain`` is a tuple of ``(lower, upper)`` pairs, one per axis.
    ``seed`` is only read by the seeded-random-axis policy.
    """

    arity: int = 2
    domain: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    split_policy: str = ROUND_ROBIN
    seed: int = 0

    def __post_init__(self):
        if int(self.arity) != self.arity or self.arity < 2:
            raise PartitionError(f"arity must be an integer >= 2, got {self.arity}")
        dom = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        if not dom:
            raise PartitionError("domain needs at least one axis")
        for axis, (lo, hi) in enumerate(dom):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise PartitionError(f"axis {axis}: need finite lower < upper, got [{lo}, {hi}]")
        if self.split_policy not in SPLIT_POLICIES:
            raise PartitionError(
                f"split_policy must be one of {SPLIT_POLICIES}, got {self.split_policy!r}"
            )
        object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "arity", int(self.arity))

    @property
    def dimension(self) -> int:
        return len(self.domain)

    @classmethod
    def unit(cls, dimension: int = 1, arity: int = 2, **kwargs) -> "PartitionSpec":
        return cls(arity=arity, domain=((0.0, 1.0),) * dimension, **kwargs)


def validate_node(node: NodeId, k: int) -> None:
    h, i = node
    if h < 0 or not 1 <= i <= k**h:
        raise PartitionError(f"invalid node {tuple(node)} for arity {k}")


def children(node: NodeId, k: int) -> list[NodeId]:
    h, i = node
    return [NodeId(h + 1, k * i - j) for j in range(k - 1, -1, -1)]


def parent(node: NodeId, k: int) -> NodeId:
    h, i = node
    if h == 0:
        raise PartitionError("the root has no parent")
    return NodeId(h - 1, -(-i // k))


def child_position(node: NodeId, k: int) -> int:
    """Slab position (0 = lowest) of ``node`` inside its parent."""
    return (node.index - 1) % k


@lru_cache(maxsize=4096)
def _seeded_axis(seed: int, depth: int, dimension: int) -> int:
    rng = np.random.default_rng([seed, depth])
    return int(rng.integers(dimension))


def split_axis(depth: int, spec: PartitionSpec) -> int:
    """Axis that is cut when going from ``depth`` to ``depth + 1``."""
    if spec.dimension == 1:
        return 0
    if spec.split_policy == ROUND_ROBIN:
        return depth % spec.dimension
    return _seeded_axis(spec.seed, depth, spec.dimension)


def _slab_counters(node: NodeId, spec: PartitionSpec) -> tuple[list[int], list[int]]:
    h, i = node
    k = spec.arity
    offset = i - 1
    num = [0] * spec.dimension
    den = [1] * spec.dimension
    for level in range(h):
        digit = (offset // k ** (h - 1 - level)) % k
        axis = split_axis(level, spec)
        num[axis] = num[axis] * k + digit
        den[axis] *= k
    return num, den


def _interp(lo: float, hi: float, num: int, den: int) -> float:
    if num == den:
        return hi
    return lo + (hi - lo) * (num / den)


def cell_bounds(node: NodeId, spec: PartitionSpec) -> CellBox:
    validate_node(node, spec.arity)
    num, den = _slab_counters(node, spec)
    lower, upper = [], []
    for (lo, hi), n, d in zip(spec.domain, num, den):
        lower.append(_interp(lo, hi, n, d))
        upper.append(_interp(lo, hi, n + 1, d))
    return CellBox(tuple(lower), tuple(upper))


def representative_point(node: NodeId, spec: PartitionSpec) -> np.ndarray:
    return cell_bounds(node, spec).center


def representative_points(nodes: Sequence[NodeId], spec: PartitionSpec) -> np.ndarray:
    """Centers of several cells stacked as an ``(n, D)`` array."""
    if not nodes:
        return np.empty((0, spec.dimension))
    return np.vstack([representative_point(n, spec) for n in nodes])


def depth_diameter(h: int, nu1: float, rho: float) -> float:
    """Cell-diameter envelope ``nu1 * rho**h``."""
    return nu1 * rho**h


def locate(x, depth: int, spec: PartitionSpec) -> NodeId:
    """Node at ``depth`` whose cell contains ``x``.

    Points on a shared face go to the lower-index cell; the domain's upper
    edge belongs to the last slab.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    node = ROOT
    for level in range(depth):
        box = cell_bounds(node, spec)
        axis = split_axis(level, spec)
        kids = children(node, spec.arity)
        chosen = kids[-1]
        for kid in kids:
            if x[axis] <= cell_bounds(kid, spec).upper[axis]:
                chosen = kid
                break
        if not box.contains(x):
            raise PartitionError(f"point {x} lies outside the domain")
        node = chosen
    return node
