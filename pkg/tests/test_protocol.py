import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedpne import partition as pt
from fedpne.objectives import NoiseModel, Objective, make_ensemble
from fedpne.partition import NodeId, PartitionSpec
from fedpne.protocol import (ClientReport, ConfigError, FedPNEServer, PhasePlan, ProtocolError,
                             ServerConfig, aggregate, client_execute, confidence_radius,
                             distribute_budget, eliminate, expand_until_ready, plan_phase,
                             threshold_tau)

HAND = ServerConfig(M=1, T=10, k=2, nu1=1.0, rho=0.5, c=1.0, c1=1.0, delta=1.0)


def linear_ensemble(M=2, noise=None):
    base = Objective("lin", lambda p: 0.2 + 0.6 * p[:, 0])
    return make_ensemble(base, M, perturb_scale=0.0, noise=noise)


def test_tau_hand_values():
    assert [threshold_tau(h, HAND) for h in range(3)] == [3, 10, 37]


def test_tau_experimental_defaults():
    cfg = ServerConfig.experimental()
    assert cfg.delta == pytest.approx(0.1)
    L = math.log(2000 / 0.1)
    assert [threshold_tau(h, cfg) for h in range(5)] == [math.ceil(0.01 * L * 4**h) for h in range(5)]
    assert [threshold_tau(h, cfg) for h in range(5)] == [1, 1, 2, 7, 26]


def test_config_validation_names_key():
    with pytest.raises(ConfigError) as err:
        ServerConfig(rho=1.5)
    assert err.value.key == "rho" and "ρ must lie in (0,1)" in str(err.value)
    for kw, key in [({"M": 0}, "M"), ({"k": 1}, "k"), ({"nu1": 0.0}, "nu1"),
                    ({"c": -1.0}, "c"), ({"delta": 2.0}, "delta"), ({"T": 0}, "T")]:
        with pytest.raises(ConfigError) as err:
            ServerConfig(**kw)
        assert err.value.key == key


def test_theory_preset():
    cfg = ServerConfig.theory(M=10)
    assert cfg.c == 2.0 and cfg.c1 == pytest.approx(20 ** (1 / 8), abs=1e-15)


def test_expand_single_client_stops_after_root_split():
    active, h = expand_until_ready([pt.ROOT], 0, HAND)
    assert h == 1 and active == [NodeId(1, 1), NodeId(1, 2)]


def test_expand_trace_m100():
    cfg = ServerConfig(M=100, T=100, c=1.0, c1=1.0, delta=1.0)
    assert threshold_tau(1, cfg) == 19 and threshold_tau(2, cfg) == 74
    active, h = expand_until_ready([pt.ROOT], 0, cfg)
    assert h == 1 and len(active) == 2


def test_expand_experimental_reaches_depth_two():
    active, h = expand_until_ready([pt.ROOT], 0, ServerConfig.experimental())
    assert h == 2 and active == [NodeId(2, i) for i in range(1, 5)]


def test_expand_rejects_mixed_depths():
    with pytest.raises(ProtocolError):
        expand_until_ready([NodeId(1, 1), NodeId(2, 1)], 1, HAND)


def tau25_config():
    # c chosen so that tau_2 = ceil(24.5) = 25 with M=10, T=2000, delta=1/10
    return ServerConfig(M=10, c=math.sqrt(24.5 / (16 * math.log(2000 / 0.1))))


def test_plan_phase_counts():
    cfg = tau25_config()
    assert threshold_tau(2, cfg) == 25
    plan = plan_phase([NodeId(2, i) for i in range(1, 5)], 2, cfg, 100)
    assert plan.pulls_per_client == 3
    assert plan.phase_length == 12
    assert plan.total_pulls(10) == 30
    assert not plan.truncated


def test_plan_phase_single_client_uses_tau():
    plan = plan_phase([NodeId(1, 1), NodeId(1, 2)], 1, HAND, 1000)
    assert plan.pulls_per_client == threshold_tau(1, HAND) == plan.total_pulls(1)


def test_truncated_plan_spends_whole_budget():
    nodes = [NodeId(2, i) for i in range(1, 5)]
    plan = plan_phase(nodes, 2, tau25_config(), 5)
    assert plan.truncated
    assert plan.pulls == (2, 1, 1, 1)
    assert plan.phase_length == 5


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 50), st.integers(0, 500))
def test_distribute_budget(n, budget):
    pulls = distribute_budget(n, budget)
    assert sum(pulls) == budget
    assert max(pulls) - min(pulls) <= 1
    assert pulls == sorted(pulls, reverse=True)


def test_confidence_radius_examples():
    cfg = ServerConfig(M=1, T=math.ceil(math.exp(4)), c=1.0, c1=math.exp(4) / math.ceil(math.exp(4)),
                       delta=1.0)
    assert cfg.log_term == pytest.approx(4.0, abs=1e-14)
    assert confidence_radius(100, cfg) == pytest.approx(0.2, abs=1e-15)
    assert confidence_radius(400, cfg) == pytest.approx(0.1, abs=1e-15)
    e_cfg = ServerConfig(M=1, T=3, c=0.1, c1=math.e / 3, delta=1.0)
    assert confidence_radius(1, e_cfg) == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(ProtocolError):
        confidence_radius(0, e_cfg)


def test_eliminate_examples():
    cfg = ServerConfig(nu1=0.1)
    a, b = NodeId(1, 1), NodeId(1, 2)
    out = eliminate({a: 0.9, b: 0.1}, 0.05, 0, cfg)
    assert out.best == a and out.eliminated == (b,) and out.survivors == (a,)
    assert out.next_active == (NodeId(2, 1), NodeId(2, 2))
    same = eliminate({a: 0.5, b: 0.5}, 0.0, 0, cfg)
    assert same.eliminated == () and same.best == a


def test_eliminate_boundary_is_strict():
    cfg = ServerConfig(nu1=0.25)
    a, b = NodeId(1, 1), NodeId(1, 2)
    # 0.25 + 0.0 + 0.25 == 0.5 - 0.0: not strictly below, so b survives
    out = eliminate({a: 0.5, b: 0.25}, 0.0, 0, cfg)
    assert out.eliminated == ()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 0.5),
       st.integers(0, 8))
def test_eliminate_keeps_best_and_partitions(means, radius, h):
    cfg = ServerConfig()
    nodes = [NodeId(5, i + 1) for i in range(len(means))]
    out = eliminate(dict(zip(nodes, means)), radius, h, cfg)
    assert out.best in out.survivors
    assert sorted(out.survivors + out.eliminated) == nodes
    assert means[out.best.index - 1] == max(means)


def test_client_execute_noiseless_exact():
    ens = linear_ensemble()
    spec = PartitionSpec.unit(1, 2)
    plan = PhasePlan(1, 1, (NodeId(1, 1), NodeId(1, 2)), 1, (1, 1))
    rep = client_execute(plan, 1, ens, spec, np.random.default_rng(0))
    assert rep.means == (0.2 + 0.6 * 0.25, 0.2 + 0.6 * 0.75)


def test_client_execute_dp_needs_stream():
    ens = linear_ensemble()
    plan = PhasePlan(1, 1, (NodeId(1, 1),), 1, (1,))
    with pytest.raises(ProtocolError):
        client_execute(plan, 1, ens, PartitionSpec.unit(), np.random.default_rng(0), sigma2=1.0)


def test_aggregate_examples_and_errors():
    plan = PhasePlan(3, 1, (NodeId(1, 1),), 1, (1,))
    reps = [ClientReport(3, 1, (0.2,), (1,)), ClientReport(3, 2, (0.6,), (1,))]
    assert aggregate(reps, plan, 2)[0] == pytest.approx(0.4, abs=1e-15)
    assert aggregate([ClientReport(3, m, (0.7,), (1,)) for m in (1, 2, 3)], plan, 3)[0] == \
        pytest.approx(0.7, abs=1e-15)
    with pytest.raises(ProtocolError):
        aggregate(reps[:1], plan, 2)
    with pytest.raises(ProtocolError):
        aggregate([reps[0], reps[0]], plan, 2)
    with pytest.raises(ProtocolError):
        aggregate([ClientReport(2, 1, (0.2,), (1,)), reps[1]], plan, 2)


def test_aggregate_order_independent():
    plan = PhasePlan(1, 1, (NodeId(1, 1), NodeId(1, 2)), 1, (1, 1))
    rng = np.random.default_rng(4)
    reps = [ClientReport(1, m, tuple(rng.random(2)), (1, 1)) for m in range(1, 8)]
    a = aggregate(reps, plan, 7)
    b = aggregate(reps[::-1], plan, 7)
    assert np.array_equal(a, b)


def test_server_loop_spends_budget():
    cfg = ServerConfig.experimental(M=3, T=300)
    ens = linear_ensemble(3, NoiseModel("bounded-uniform", 0.1))
    spec = PartitionSpec.unit()
    server = FedPNEServer(cfg)
    used = 0
    while used < cfg.T:
        plan = server.next_plan(cfg.T - used)
        reps = [client_execute(plan, m, ens, spec, np.random.default_rng([m, plan.phase]))
                for m in (1, 2, 3)]
        server.complete(plan, reps)
        used += plan.phase_length
    assert used == cfg.T
    # the increasing objective keeps the right-most cell alive
    last = [o for o in server.history if o is not None][-1]
    assert last.survivors[-1].index == 2 ** last.survivors[-1].depth


@settings(max_examples=300, deadline=None)
@given(st.floats(0.05, 5), st.floats(0.1, 10), st.floats(0.05, 0.95), st.integers(1, 10**6),
       st.floats(0.5, 3), st.floats(1e-3, 1), st.integers(0, 40))
def test_tau_between_one_and_two_values(c, nu1, rho, T, c1, delta, h):
    # ceil(v) lies in [v, 2v] only once v >= 1/2; below that tau is pinned at 1
    if math.log(c1 * T / delta) < 1:
        return
    cfg = ServerConfig(M=1, T=T, nu1=nu1, rho=rho, c=c, c1=c1, delta=delta)
    scale = c**2 / nu1**2 * rho ** (-2 * h)
    value = scale * cfg.log_term
    tau = threshold_tau(h, cfg)
    assert scale <= tau
    assert tau <= max(1.0, 2 * value)
    if value >= 0.5:
        assert tau <= 2 * value
