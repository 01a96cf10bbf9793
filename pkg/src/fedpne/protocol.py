"""Federated phased node elimination: server planning and client execution.

One phase: the server expands the active set until it is worth sampling,
broadcasts the nodes with a per-client pull count, every client pulls each
node's center and reports per-node means, the server averages the reports
and eliminates nodes whose optimistic value falls below the pessimistic
value of the best node.  Survivors are split into their children.

All active nodes share one depth ``h`` and the pull threshold, the
confidence radius and the smoothness slack ``nu1 * rho**h`` are all evaluated
at that depth.  The root is always split before the first phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import partition as pt
from .objectives import ObjectiveEnsemble
from .partition import NodeId, PartitionSpec
from .privacy import privatize_rewards


class ProtocolError(RuntimeError):
    pass


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending setting when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
        self.reason = message


@dataclass(frozen=True)
class ServerConfig:
    """Server-side inputs.  ``delta=None`` resolves to ``1/M``."""

    M: int = 10
    T: int = 2000
    k: int = 2
    nu1: float = 1.0
    rho: float = 0.5
    c: float = 0.1
    c1: float = 1.0
    delta: float | None = None
    max_depth: int = pt.MAX_DEPTH

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", 1.0 / self.M if self.M >= 1 else 1.0)
        checks = [
            ("M", isinstance(self.M, (int, np.integer)) and self.M >= 1, "M must be an integer >= 1"),
            ("T", isinstance(self.T, (int, np.integer)) and self.T >= 1, "T must be an integer >= 1"),
            ("k", isinstance(self.k, (int, np.integer)) and self.k >= 2, "k must be an integer >= 2"),
            ("rho", 0.0 < self.rho < 1.0, "ρ must lie in (0,1)"),
            ("nu1", self.nu1 > 0.0, "ν₁ must be > 0"),
            ("c", self.c > 0.0, "c must be > 0"),
            ("c1", self.c1 > 0.0, "c₁ must be > 0"),
            ("delta", 0.0 < self.delta <= 1.0, "δ must lie in (0,1]"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(msg, key)
        if not self.log_term > 0.0:
            raise ConfigError("log(c₁T/δ) must be > 0", "T")

    @property
    def log_term(self) -> float:
        return math.log(self.c1 * self.T / self.delta)

    @classmethod
    def experimental(cls, M: int = 10, T: int = 2000, **kw) -> "ServerConfig":
        """Constants used for the synthetic experiments: c=0.1, c1=1, nu1=1, rho=0.5."""
        return cls(M=M, T=T, **{"c": 0.1, "c1": 1.0, **kw})

    @classmethod
    def theory(cls, M: int = 10, T: int = 2000, **kw) -> "ServerConfig":
        """Constants under which the high-probability analysis holds: c=2, c1=(2M)^(1/8)."""
        return cls(M=M, T=T, **{"c": 2.0, "c1": (2.0 * M) ** 0.125, **kw})


def threshold_tau(h: int, cfg: ServerConfig) -> int:
    """Minimum total pulls for a depth-``h`` node, ``ceil(c² log(c1 T/δ) / nu1² · rho^(-2h))``."""
    base = cfg.c**2 / cfg.nu1**2 * cfg.rho ** (-2 * h)
    value = base * cfg.log_term
    if not math.isfinite(value) or value <= 0.0:
        raise ConfigError(f"threshold at depth {h} is {value}; check c, nu1, rho, T, delta")
    return math.ceil(value)


def confidence_radius(n_pulls: int, cfg: ServerConfig) -> float:
    if n_pulls < 1:
        raise ProtocolError("confidence radius needs at least one pull")
    return cfg.c * math.sqrt(cfg.log_term / n_pulls)


def expand(active: Sequence[NodeId], k: int) -> list[NodeId]:
    return [child for node in active for child in pt.children(node, k)]


def expand_until_ready(active: Sequence[NodeId], h: int, cfg: ServerConfig):
    """Split the active set until sampling it is worthwhile.

    The root is split unconditionally.  After that the set at depth ``h`` is
    split while ``|active| * tau_(h+1) <= M`` or ``tau_(h+1) <= 1``, i.e. the
    test is made against the next depth before committing to it.
    """
    active = list(active)
    if any(n.depth != h for n in active):
        raise ProtocolError(f"active nodes must all have depth {h}")
    if h == 0:
        active, h = expand(active, cfg.k), 1
    while True:
        tau_next = threshold_tau(h + 1, cfg)
        if not (len(active) * tau_next <= cfg.M or tau_next <= 1):
            return active, h
        if h + 1 > cfg.max_depth:
            raise ProtocolError(f"depth cap {cfg.max_depth} exceeded")
        active, h = expand(active, cfg.k), h + 1


@dataclass(frozen=True)
class PhasePlan:
    """Broadcast of one phase.

    ``pulls`` holds the per-client pull count of every active node.  It equals
    ``pulls_per_client`` everywhere unless the plan is truncated.
    """

    phase: int
    depth: int
    active: tuple[NodeId, ...]
    pulls_per_client: int
    pulls: tuple[int, ...]
    truncated: bool = False

    @property
    def phase_length(self) -> int:
        return sum(self.pulls)

    def total_pulls(self, M: int) -> int:
        """Pulls per node summed over clients, ``T_(h,i) = M * t``."""
        return M * self.pulls_per_client


def distribute_budget(n_nodes: int, budget: int) -> list[int]:
    """Spread ``budget`` pulls over nodes in sweeps of one pull per node.

    Every node gets ``budget // n_nodes`` pulls and the remainder goes, one
    each, to the lowest-index nodes.
    """
    base, extra = divmod(budget, n_nodes)
    return [base + (1 if j < extra else 0) for j in range(n_nodes)]


def plan_phase(active: Sequence[NodeId], h: int, cfg: ServerConfig,
               budget_remaining: int, phase: int = 1) -> PhasePlan:
    if budget_remaining <= 0:
        raise ProtocolError("no budget remaining")
    if not active:
        raise ProtocolError("empty active set")
    if any(n.depth != h for n in active):
        raise ProtocolError(f"active nodes must all have depth {h}")
    active = tuple(sorted(active))
    t = -(-threshold_tau(h, cfg) // cfg.M)
    pulls = [t] * len(active)
    truncated = len(active) * t > budget_remaining
    if truncated:
        pulls = distribute_budget(len(active), budget_remaining)
    return PhasePlan(phase, h, active, t, tuple(pulls), truncated)


@dataclass(frozen=True)
class ClientReport:
    phase: int
    client: int
    means: tuple[float, ...]
    pulls: tuple[int, ...]


@dataclass
class PullLog:
    """Client-local record of raw pulls; never sent to the server."""

    nodes: list = field(default_factory=list)
    points: list = field(default_factory=list)
    rewards: list = field(default_factory=list)


def client_execute(plan: PhasePlan, m: int, ensemble: ObjectiveEnsemble, spec: PartitionSpec,
                   rng: np.random.Generator, *, sigma2: float | None = None,
                   dp_rng: np.random.Generator | None = None,
                   log: PullLog | None = None,
                   points: np.ndarray | None = None) -> ClientReport:
    """Pull every planned node of client ``m`` and summarize.

    Nodes are pulled in ascending index order, all pulls of one node back to
    back, at the node's cell center.  With ``sigma2`` set, Gaussian noise from
    ``dp_rng`` is added to every reward and only the privatized values enter
    the reported means.  ``points`` may carry precomputed pull locations.
    """
    local = ensemble.local(m)
    if points is None:
        points = pt.representative_points(plan.active, spec)
    fx = local.evaluate(points)
    counts = np.asarray(plan.pulls)
    means_src = np.repeat(fx, counts)
    rewards = means_src + ensemble.noise.sample(means_src, int(counts.sum()), rng)
    if sigma2 is not None:
        if dp_rng is None:
            raise ProtocolError("DP mode needs its own random stream")
        released = privatize_rewards(rewards, sigma2, dp_rng)
    else:
        released = rewards

    means = []
    start = 0
    for node, n in zip(plan.active, counts):
        seg = released[start:start + n]
        means.append(float(np.mean(seg)) if n else math.nan)
        if log is not None and n:
            log.nodes.append(node)
            log.points.append(np.repeat(points[len(means) - 1][None, :], n, axis=0))
            log.rewards.append(rewards[start:start + n])
        start += n
    return ClientReport(plan.phase, m, tuple(means), tuple(int(c) for c in counts))


def aggregate(reports: Sequence[ClientReport], plan: PhasePlan, M: int) -> np.ndarray:
    """Per-node average of the M local means, summed in ascending client order."""
    by_client = {}
    for rep in reports:
        if rep.phase != plan.phase:
            raise ProtocolError(f"report of client {rep.client} is for phase {rep.phase}, "
                                f"expected {plan.phase}")
        if rep.client in by_client:
            raise ProtocolError(f"duplicate report from client {rep.client}")
        if len(rep.means) != len(plan.active):
            raise ProtocolError(f"client {rep.client} reported {len(rep.means)} nodes, "
                                f"plan has {len(plan.active)}")
        by_client[rep.client] = rep
    missing = sorted(set(range(1, M + 1)) - set(by_client))
    if missing:
        raise ProtocolError(f"missing reports from clients {missing}")
    total = np.zeros(len(plan.active))
    for m in range(1, M + 1):
        total = total + np.asarray(by_client[m].means)
    return total / M


@dataclass(frozen=True)
class EliminationOutcome:
    best: NodeId
    eliminated: tuple[NodeId, ...]
    survivors: tuple[NodeId, ...]
    next_active: tuple[NodeId, ...]
    means: dict
    radii: dict


def eliminate(means: Mapping[NodeId, float], radii, h: int, cfg: ServerConfig) -> EliminationOutcome:
    """Drop every node whose ``mean + radius + nu1 rho^h`` is strictly below
    the best node's ``mean - radius``.  ``radii`` may be a mapping or a scalar.
    """
    nodes = sorted(means)
    if not nodes:
        raise ProtocolError("nothing to eliminate from")
    if isinstance(radii, Mapping):
        rad = {n: float(radii[n]) for n in nodes}
    else:
        rad = {n: float(radii) for n in nodes}
    best = nodes[0]
    for n in nodes[1:]:
        if means[n] > means[best]:
            best = n
    slack = pt.depth_diameter(h, cfg.nu1, cfg.rho)
    floor = means[best] - rad[best]
    eliminated = tuple(n for n in nodes if means[n] + rad[n] + slack < floor)
    gone = set(eliminated)
    survivors = tuple(n for n in nodes if n not in gone)
    return EliminationOutcome(
        best=best,
        eliminated=eliminated,
        survivors=survivors,
        next_active=tuple(expand(survivors, cfg.k)),
        means={n: float(means[n]) for n in nodes},
        radii=rad,
    )


class FedPNEServer:
    """Sequential server state across phases."""

    def __init__(self, cfg: ServerConfig):
        self.cfg = cfg
        self.active: list[NodeId] = [pt.ROOT]
        self.depth = 0
        self.phase = 0
        self.history: list[EliminationOutcome | None] = []

    def next_plan(self, budget_remaining: int) -> PhasePlan:
        self.active, self.depth = expand_until_ready(self.active, self.depth, self.cfg)
        self.phase += 1
        return plan_phase(self.active, self.depth, self.cfg, budget_remaining, self.phase)

    def complete(self, plan: PhasePlan, reports: Sequence[ClientReport]) -> EliminationOutcome | None:
        """Aggregate and eliminate; truncated phases are aggregated only."""
        global_means = aggregate(reports, plan, self.cfg.M)
        if plan.truncated:
            self.history.append(None)
            return None
        radius = confidence_radius(plan.total_pulls(self.cfg.M), self.cfg)
        outcome = eliminate(dict(zip(plan.active, global_means)), radius, plan.depth, self.cfg)
        self.history.append(outcome)
        self.active = list(outcome.next_active)
        self.depth = plan.depth + 1
        return outcome
