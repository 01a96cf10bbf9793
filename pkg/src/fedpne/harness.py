"""Experiment orchestration: runs, regret and communication accounting, baselines."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from . import partition as pt
from .objectives import (NoiseModel, Objective, ObjectiveEnsemble, double_sine_objective,
                         garland_objective, make_ensemble, normalize_objective)
from .oracle import grid_extremum
from .partition import NodeId, PartitionSpec
from .privacy import DpConfig, dp_constants
from .protocol import (ClientReport, ConfigError, FedPNEServer, PhasePlan, PullLog, ServerConfig,
                       aggregate, client_execute, confidence_radius, distribute_budget)
from .seir import SeirParams, make_seir_ensemble

OBJECTIVES = ("garland", "double_sine", "seir")

# stream tags: every (seed, tag, client, phase) gets its own generator
REWARD_STREAM = 1
DP_STREAM = 2
ARM_STREAM = 3


class HarnessError(RuntimeError):
    pass


def stream(seed: int, tag: int, m: int = 0, p: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, tag, m, p])


# -- objectives from configuration ------------------------------------------------


@dataclass(frozen=True)
class ObjectiveConfig:
    name: str = "garland"
    perturb_scale: float = 1.0
    noise: str = "bounded-uniform"
    noise_scale: float = 0.1
    normalize_resolution: int = 100_000
    rho1: float = 0.8
    rho2: float = 0.3
    seir: tuple = ()  # (key, value) overrides of SeirParams

    def __post_init__(self):
        if self.name not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.name!r}")
        NoiseModel(self.noise, self.noise_scale)
        if self.perturb_scale < 0:
            raise ConfigError("perturb_scale must be >= 0")

    @property
    def noise_model(self) -> NoiseModel:
        return NoiseModel(self.noise, self.noise_scale)

    def seir_params(self) -> SeirParams:
        return SeirParams(**dict(self.seir))


@lru_cache(maxsize=32)
def _normalized_base(name: str, rho1: float, rho2: float, resolution: int) -> Objective:
    raw = garland_objective() if name == "garland" else double_sine_objective(rho1, rho2)
    return normalize_objective(raw, resolution)


def build_ensemble(obj: ObjectiveConfig, M: int, seed: int) -> ObjectiveEnsemble:
    if obj.name == "seir":
        return make_seir_ensemble(M, seed, obj.seir_params(), obj.noise_model)
    base = _normalized_base(obj.name, obj.rho1, obj.rho2, obj.normalize_resolution)
    return make_ensemble(base, M, obj.perturb_scale, seed, obj.noise_model)


# -- f* oracle -------------------------------------------------------------------


def estimate_fstar(objective: Objective, resolution: int = 1_000_000, refine: bool = True):
    """Dense-grid maximum of ``objective``: ``(f*, argmax point)``.

    ``resolution`` counts grid points per axis.  D >= 3 is refused; the caller
    must then supply f* explicitly.
    """
    if objective.dimension == 1 and resolution < 1000:
        raise HarnessError("1-D oracle resolution must be at least 1000")
    return grid_extremum(objective.evaluate, objective.domain, resolution, "max", refine)


_FSTAR_CACHE: dict = {}


def _cached_fstar(ensemble: ObjectiveEnsemble, key, resolution: int):
    k = (key, resolution)
    if k not in _FSTAR_CACHE:
        _FSTAR_CACHE[k] = estimate_fstar(ensemble.global_objective, resolution)
    val, arg = _FSTAR_CACHE[k]
    return val, arg.copy()


# -- run configuration and trace ----------------------------------------------------


@dataclass(frozen=True)
class RunSetup:
    server: ServerConfig = field(default_factory=ServerConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    split_policy: str = pt.ROUND_ROBIN
    dp: DpConfig | None = None
    fstar_resolution: int = 1_000_000
    fstar_value: float | None = None

    def effective_server(self) -> ServerConfig:
        """DP runs replace (c, c1) by the privatized-reward constants."""
        if self.dp is None:
            return self.server
        c, c1 = dp_constants(self.dp.sigma2, self.server.M)
        return replace(self.server, c=c, c1=c1)

    def describe(self) -> dict:
        d = asdict(self)
        d["objective"]["seir"] = dict(self.objective.seir)
        return d


@dataclass
class PhaseRecord:
    phase: int
    depth: int
    active: tuple
    pulls_per_client: int
    truncated: bool
    survivors: tuple = ()
    eliminated: tuple = ()
    best: NodeId | None = None
    events: int = 0

    @property
    def n_active(self) -> int:
        return len(self.active)

    @property
    def n_eliminated(self) -> int:
        return len(self.eliminated)


class CommEvent(NamedTuple):
    phase: int
    client: int
    direction: str  # "broadcast" (server -> client) or "report" (client -> server)
    payload: int


@dataclass
class RunTrace:
    """Per-pull records (columnar) plus phase and communication logs."""

    client: np.ndarray
    round: np.ndarray
    phase: np.ndarray
    depth: np.ndarray
    node_index: np.ndarray
    x: np.ndarray
    reward: np.ndarray
    regret: np.ndarray
    phases: list = field(default_factory=list)
    events: list = field(default_factory=list)
    fstar: float = math.nan
    argmax: np.ndarray | None = None
    seed: int = 0
    M: int = 1
    T: int = 0
    algorithm: str = "fedpne"
    config: dict = field(default_factory=dict)
    partition: PartitionSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_pulls(self) -> int:
        return int(self.client.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.x.shape[1])

    def completed_phases(self) -> list:
        return [p for p in self.phases if not p.truncated]

    @classmethod
    def empty(cls, dimension: int = 1, **kw) -> "RunTrace":
        z = np.zeros(0, dtype=np.int64)
        f = np.zeros(0)
        return cls(z, z.copy(), z.copy(), z.copy(), z.copy(), np.zeros((0, dimension)),
                   f, f.copy(), **kw)


class _TraceBuilder:
    def __init__(self, M: int, dim: int):
        self.M = M
        self.dim = dim
        self.rounds_used = np.zeros(M + 1, dtype=np.int64)
        self.chunks: list = []

    def add(self, m, phase, depth, indices, counts, points, rewards, fglob, fstar):
        n = int(counts.sum())
        if n == 0:
            return
        start = self.rounds_used[m]
        rounds = np.arange(start + 1, start + n + 1)
        self.rounds_used[m] += n
        self.chunks.append((
            np.full(n, m), rounds, np.full(n, phase), np.full(n, depth),
            np.repeat(indices, counts), np.repeat(points, counts, axis=0),
            rewards, fstar - np.repeat(fglob, counts),
        ))

    def build(self, **kw) -> RunTrace:
        if not self.chunks:
            return RunTrace.empty(self.dim, **kw)
        cols = list(zip(*self.chunks))
        ints = [np.concatenate(c).astype(np.int64) for c in cols[:5]]
        return RunTrace(*ints, np.concatenate(cols[5]), np.concatenate(cols[6]),
                        np.concatenate(cols[7]), **kw)


def _resolve_fstar(setup: RunSetup, ensemble: ObjectiveEnsemble, seed: int):
    if setup.fstar_value is not None:
        return float(setup.fstar_value), None
    obj = setup.objective
    key = (obj.name, obj.rho1, obj.rho2, obj.normalize_resolution, obj.seir)
    if obj.name == "seir":
        key = key + (ensemble.M, seed)
    return _cached_fstar(ensemble, key, setup.fstar_resolution)


def _execute_phase(plan: PhasePlan, points: np.ndarray, ensemble: ObjectiveEnsemble,
                   spec: PartitionSpec, seed: int, sigma2, builder: _TraceBuilder,
                   fglob: np.ndarray, fstar: float, events: list) -> list[ClientReport]:
    M = ensemble.M
    counts = np.asarray(plan.pulls)
    indices = np.array([n.index for n in plan.active])
    reports = []
    for m in range(1, M + 1):
        events.append(CommEvent(plan.phase, m, "broadcast", len(plan.active)))
        log = PullLog()
        rep = client_execute(
            plan, m, ensemble, spec, stream(seed, REWARD_STREAM, m, plan.phase),
            sigma2=sigma2,
            dp_rng=stream(seed, DP_STREAM, m, plan.phase) if sigma2 is not None else None,
            log=log, points=points,
        )
        rewards = np.concatenate(log.rewards) if log.rewards else np.zeros(0)
        builder.add(m, plan.phase, plan.depth, indices, counts, points, rewards, fglob, fstar)
        events.append(CommEvent(plan.phase, m, "report", len(rep.means)))
        reports.append(rep)
    return reports


def run_experiment(setup: RunSetup, seed: int = 0) -> RunTrace:
    """One full Fed-PNE (or DP-Fed-PNE when ``setup.dp`` is set) run.

    Phases repeat until every client has spent its ``T`` pulls; the last
    phase may be truncated and is then not followed by elimination.
    """
    cfg = setup.effective_server()
    ensemble = build_ensemble(setup.objective, cfg.M, seed)
    spec = PartitionSpec(cfg.k, ensemble.domain, setup.split_policy, seed)
    fstar, argmax = _resolve_fstar(setup, ensemble, seed)
    sigma2 = setup.dp.sigma2 if setup.dp is not None else None

    server = FedPNEServer(cfg)
    builder = _TraceBuilder(cfg.M, ensemble.dimension)
    phases: list[PhaseRecord] = []
    events: list[CommEvent] = []
    used = 0
    while used < cfg.T:
        plan = server.next_plan(cfg.T - used)
        points = pt.representative_points(plan.active, spec)
        fglob = ensemble.global_objective.evaluate(points)
        n_events = len(events)
        reports = _execute_phase(plan, points, ensemble, spec, seed, sigma2, builder,
                                 fglob, fstar, events)
        outcome = server.complete(plan, reports)
        rec = PhaseRecord(plan.phase, plan.depth, plan.active, plan.pulls_per_client,
                          plan.truncated, events=len(events) - n_events)
        if outcome is not None:
            rec.survivors, rec.eliminated, rec.best = (outcome.survivors, outcome.eliminated,
                                                       outcome.best)
        phases.append(rec)
        used += plan.phase_length

    algorithm = "dp-fedpne" if setup.dp is not None else "fedpne"
    return builder.build(
        phases=phases, events=events, fstar=fstar, argmax=argmax, seed=seed, M=cfg.M,
        T=cfg.T, algorithm=algorithm, config=setup.describe(), partition=spec,
        meta={"c": cfg.c, "c1": cfg.c1, "sigma2": sigma2},
    )


def optimum_survival(trace: RunTrace) -> list[bool]:
    """For each completed phase: did the cell holding the oracle argmax survive?"""
    if trace.argmax is None or trace.partition is None:
        raise HarnessError("trace carries no oracle argmax / partition")
    out = []
    for rec in trace.completed_phases():
        node = pt.locate(trace.argmax, rec.depth, trace.partition)
        out.append(node in set(rec.survivors))
    return out


# -- regret ----------------------------------------------------------------------


@dataclass
class RegretSummary:
    per_client: np.ndarray  # (M, rounds) cumulative regret of each client
    average: np.ndarray     # (rounds,) total / M
    phases: int
    events: int
    fstar: float
    seed: int

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(1, self.average.shape[0] + 1)

    @property
    def total(self) -> float:
        return float(self.per_client[:, -1].sum()) if self.per_client.size else 0.0


def cumulative_regret(trace: RunTrace, fstar: float | None = None,
                      f: Objective | None = None) -> RegretSummary:
    """Per-client running sums of ``f* - f(x)``.

    Without ``f`` the increments stored in the trace are used (shifted if a
    different ``fstar`` is given).
    """
    if f is not None:
        fs = trace.fstar if fstar is None else fstar
        inc = fs - f.evaluate(trace.x)
    else:
        inc = trace.regret if fstar is None else trace.regret + (fstar - trace.fstar)
    rows = []
    for m in range(1, trace.M + 1):
        sel = np.flatnonzero(trace.client == m)
        order = sel[np.argsort(trace.round[sel], kind="stable")]
        rows.append(np.cumsum(inc[order]))
    lengths = {len(r) for r in rows}
    if len(lengths) > 1:
        raise HarnessError(f"clients have unequal pull counts {sorted(lengths)}")
    per_client = np.vstack(rows) if rows else np.zeros((0, 0))
    average = per_client.sum(axis=0) / trace.M
    return RegretSummary(per_client, average, len(trace.completed_phases()),
                         len(trace.events), trace.fstar if fstar is None else fstar, trace.seed)


class CommCheck(NamedTuple):
    phases: int
    bound: float | None
    passed: bool | None  # None: bound not applicable


def communication_bound(cfg: ServerConfig) -> float | None:
    """``log(M T nu1² / (k c²)) / log(rho^-2)``, or None when the log argument is <= 1."""
    arg = cfg.M * cfg.T * cfg.nu1**2 / (cfg.k * cfg.c**2)
    if arg <= 1.0:
        return None
    return math.log(arg) / math.log(cfg.rho**-2)


def communication_check(trace: RunTrace, cfg: ServerConfig) -> CommCheck:
    P = len(trace.completed_phases())
    bound = communication_bound(cfg)
    if bound is None:
        return CommCheck(P, None, None)
    return CommCheck(P, bound, P <= math.ceil(bound))


# -- meshgrid baseline -------------------------------------------------------------


def meshgrid_arms(domain, K: int, rng: np.random.Generator) -> np.ndarray:
    """K arms per axis: one random start in the first 1/K of the axis, then a
    uniform mesh over the rest.  Returns the ``K**D`` product grid.
    """
    axes = []
    for lo, hi in domain:
        w = (hi - lo) / K
        first = rng.uniform(lo, lo + w)
        rest = np.linspace(lo + w, hi, K - 1) if K > 1 else np.zeros(0)
        axes.append(np.concatenate([[first], rest]))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def run_grid_baseline(setup: RunSetup, K: int, seed: int = 0,
                      arms: np.ndarray | None = None) -> RunTrace:
    """Federated phased elimination over a fixed meshgrid of arms.

    Phase ``p`` pulls every surviving arm ``2**(p-1)`` times per client;
    statistics accumulate over phases and an arm is dropped when its upper
    confidence bound falls below the best lower bound.  Once one arm is
    left it is pulled for the rest of the budget.  ``trace.meta`` records
    the round at which exploration ended.
    """
    cfg = setup.server
    ensemble = build_ensemble(setup.objective, cfg.M, seed)
    fstar, argmax = _resolve_fstar(setup, ensemble, seed)
    if arms is None:
        if K < 1:
            raise HarnessError("K must be >= 1")
        arms = meshgrid_arms(ensemble.domain, K, stream(seed, ARM_STREAM))
    arms = np.atleast_2d(np.asarray(arms, dtype=float))
    n_arms = arms.shape[0]
    if n_arms > cfg.T:
        raise HarnessError(f"{n_arms} arms cannot all be pulled once within T={cfg.T}")

    builder = _TraceBuilder(cfg.M, ensemble.dimension)
    fglob_all = ensemble.global_objective.evaluate(arms)
    active = list(range(n_arms))
    sum_means = np.zeros(n_arms)
    n_pulled = np.zeros(n_arms, dtype=np.int64)
    phases, events = [], []
    used, p = 0, 0
    explore_end = 0 if n_arms == 1 else None
    while used < cfg.T:
        p += 1
        remaining = cfg.T - used
        per = remaining if len(active) == 1 else 2 ** (p - 1)
        pulls = [per] * len(active)
        truncated = per * len(active) > remaining
        if truncated:
            pulls = distribute_budget(len(active), remaining)
        nodes = tuple(NodeId(0, a + 1) for a in active)
        plan = PhasePlan(p, 0, nodes, per, tuple(pulls), truncated)
        n_events = len(events)
        reports = _execute_phase(plan, arms[active], ensemble, None, seed, None, builder,
                                 fglob_all[active], fstar, events)
        gmeans = aggregate(reports, plan, cfg.M)
        rec = PhaseRecord(p, 0, nodes, per, truncated, events=len(events) - n_events)
        counts = np.asarray(pulls)
        idx = np.asarray(active)
        ok = counts > 0
        sum_means[idx[ok]] += gmeans[ok] * counts[ok]
        n_pulled[idx[ok]] += counts[ok]
        used += int(counts.sum())
        if not truncated and len(active) > 1:
            mu = sum_means[idx] / n_pulled[idx]
            rad = np.array([confidence_radius(int(cfg.M * n), cfg) for n in n_pulled[idx]])
            b = int(np.argmax(mu))
            keep = mu + rad >= mu[b] - rad[b]
            rec.best = nodes[b]
            rec.survivors = tuple(n for n, k in zip(nodes, keep) if k)
            rec.eliminated = tuple(n for n, k in zip(nodes, keep) if not k)
            active = [a for a, k in zip(active, keep) if k]
            if len(active) == 1 and explore_end is None:
                explore_end = used
        else:
            rec.survivors = nodes
        phases.append(rec)

    return builder.build(
        phases=phases, events=events, fstar=fstar, argmax=argmax, seed=seed, M=cfg.M,
        T=cfg.T, algorithm="grid-baseline", config={**setup.describe(), "K": K},
        meta={"arms": arms, "exploration_rounds": cfg.T if explore_end is None else explore_end},
    )


# -- multi-seed aggregation ------------------------------------------------------------


class RunAggregate(NamedTuple):
    rounds: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_seeds: int


def aggregate_runs(traces: Sequence[RunTrace], fstar: float | None = None,
                   f: Objective | None = None) -> RunAggregate:
    """Pointwise mean and (population) std of the per-client average regret."""
    if len(traces) < 2:
        raise HarnessError("need at least two traces to aggregate")
    ref = traces[0].config
    for tr in traces[1:]:
        if tr.config != ref or tr.algorithm != traces[0].algorithm:
            raise HarnessError("traces come from different configurations")
    series = [cumulative_regret(tr, fstar, f).average for tr in traces]
    if len({len(s) for s in series}) > 1:
        raise HarnessError("traces have different lengths")
    stack = np.vstack(series)
    return RunAggregate(np.arange(1, stack.shape[1] + 1), stack.mean(axis=0),
                        stack.std(axis=0), len(traces))
