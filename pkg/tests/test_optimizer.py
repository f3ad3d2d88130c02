"""Weight-transfer loop, baseline bisection, capacity searches.

Simulation-backed behavior is exercised elsewhere; here the search
arithmetic runs against injected loss functions and stubbed simulators
so every branch is cheap and exactly predictable.
"""

import time
from types import SimpleNamespace

import numpy as np
import pytest

import slosim.optimizer as optimizer
from slosim.bottleneck import SharedFifo, WeightAllocation
from slosim.errors import ConfigError
from slosim.optimizer import (
    BaselineResult,
    CapacityResult,
    OptimizerConfig,
    ScenarioRow,
    ScenarioSpace,
    Strategy,
    _search_capacity,
    find_baselines,
    inflation,
    min_bandwidth,
    offered_load,
    optimize_weights,
    run_scenario_batch,
    sample_scenario,
    write_scenario_csv,
)
from slosim.units import gbps, to_gbps

from conftest import make_class, quick_cfg


def scripted(loss_rows):
    """Evaluate stub: returns the scripted rows in order, records weights."""
    seen = []
    rows = [np.asarray(r, dtype=float) for r in loss_rows]

    def evaluate(weights):
        seen.append(np.array(weights))
        return rows[len(seen) - 1]

    evaluate.seen = seen
    return evaluate


# -- optimizer config -------------------------------------------------------


def test_optimizer_config_validation():
    with pytest.raises(ConfigError):
        OptimizerConfig(max_iterations=0)
    with pytest.raises(ConfigError):
        OptimizerConfig(baseline_weight_tolerance=0.6)
    with pytest.raises(ConfigError):
        OptimizerConfig(capacity_search_tolerance=0.0)
    with pytest.raises(ConfigError):
        OptimizerConfig(timeout_s=-1.0)
    assert OptimizerConfig().deadline() is None
    d = OptimizerConfig(timeout_s=10.0).deadline()
    assert d == pytest.approx(time.monotonic() + 10.0, abs=1.0)


def test_baseline_result_normalization():
    b = BaselineResult(weights=[0.2, 0.3, 0.5])
    assert b.feasible
    assert b.normalized().weights == pytest.approx((0.2, 0.3, 0.5))
    b2 = BaselineResult(weights=[0.4, 0.4])
    assert b2.normalized().weights == pytest.approx((0.5, 0.5))
    bad = BaselineResult(weights=[0.2, None])
    assert not bad.feasible
    with pytest.raises(ConfigError):
        bad.normalized()


# -- weight transfer loop ---------------------------------------------------


def three_class_cfg():
    return quick_cfg([make_class("a"), make_class("b"), make_class("c")])


def test_transfer_moves_half_loss_from_best_to_worst():
    cfg = three_class_cfg()
    ev = scripted([[-0.5, 0.2, -0.1], [-0.4, -0.1, -0.2]])
    out = optimize_weights(cfg, OptimizerConfig(),
                           baselines=BaselineResult([0.2, 0.3, 0.5]), evaluate=ev)
    assert out.success
    # first transfer: donor 0 (loss -0.5) gives |l/2| * w = 0.05 to the
    # worst class 1; the -0.1 class pairs with itself and the loop breaks
    np.testing.assert_allclose(ev.seen[0], [0.2, 0.3, 0.5])
    np.testing.assert_allclose(ev.seen[1], [0.15, 0.35, 0.5])
    np.testing.assert_allclose(out.weights.weights, [0.15, 0.35, 0.5])
    assert len(out.trace) == 2
    w0, l0 = out.trace[0]
    np.testing.assert_allclose(l0, [-0.5, 0.2, -0.1])
    for w, _ in out.trace:
        assert sum(w.weights) == pytest.approx(1.0, abs=1e-9)


def test_all_negative_losses_stop_immediately():
    cfg = three_class_cfg()
    ev = scripted([[-0.5, -0.2, -0.1]])
    out = optimize_weights(cfg, OptimizerConfig(),
                           baselines=BaselineResult([0.2, 0.3, 0.5]), evaluate=ev)
    assert out.success
    assert len(out.trace) == 1
    np.testing.assert_allclose(out.weights.weights, [0.2, 0.3, 0.5])


def test_all_positive_losses_fail_fast():
    cfg = three_class_cfg()
    ev = scripted([[0.4, 0.2, 0.1]])
    out = optimize_weights(cfg, OptimizerConfig(),
                           baselines=BaselineResult([0.2, 0.3, 0.5]), evaluate=ev)
    assert not out.success
    assert len(out.trace) == 1
    assert len(ev.seen) == 1  # no transfer attempted when nobody can donate


def test_exhausted_iterations_return_best_seen_minimax():
    cfg = three_class_cfg()
    ev = scripted([
        [-0.5, 0.2, -0.1],   # max 0.2 at (0.2, 0.3, 0.5)
        [-0.3, 0.1, -0.1],   # max 0.1 at (0.15, 0.35, 0.5)  <- best
        [-0.2, 0.3, -0.2],   # max 0.3
    ])
    out = optimize_weights(cfg, OptimizerConfig(max_iterations=3),
                           baselines=BaselineResult([0.2, 0.3, 0.5]), evaluate=ev)
    assert not out.success
    assert len(out.trace) == 3
    np.testing.assert_allclose(out.weights.weights, [0.15, 0.35, 0.5])
    # second iteration transfers 0.15 * 0.15 = 0.0225 from class 0 to 1
    np.testing.assert_allclose(ev.seen[2], [0.1275, 0.3725, 0.5])


def test_deadline_interrupts_the_loop():
    cfg = three_class_cfg()

    def slow_eval(weights):
        time.sleep(0.01)
        return np.array([-0.5, 0.2, -0.1])

    out = optimize_weights(cfg, OptimizerConfig(timeout_s=0.005),
                           baselines=BaselineResult([0.2, 0.3, 0.5]),
                           evaluate=slow_eval)
    assert not out.success
    assert len(out.trace) == 1  # one evaluation, then the clock ran out
    np.testing.assert_allclose(out.weights.weights, [0.2, 0.3, 0.5])


def test_infeasible_baselines_short_circuit():
    cfg = three_class_cfg()
    out = optimize_weights(cfg, OptimizerConfig(),
                           baselines=BaselineResult([0.5, None, None]))
    assert not out.success
    assert out.infeasible_classes == (1, 2)
    assert out.trace == []
    np.testing.assert_allclose(out.weights.weights, [1 / 3] * 3)


def test_donor_weight_never_reaches_zero():
    cfg = three_class_cfg()
    # a fully-clamped donor gives away |l/2| * w = w each round; the
    # guarded transfer must trip before the weight goes to zero
    ev = scripted([[-2.0, 0.5, 0.4]] * 5)
    with pytest.raises(AssertionError):
        optimize_weights(cfg, OptimizerConfig(max_iterations=5),
                         baselines=BaselineResult([0.2, 0.3, 0.5]), evaluate=ev)


# -- baseline bisection -----------------------------------------------------


def stub_simulator(needs):
    """run_simulation replacement: SLO met iff capacity covers the class need.

    ``needs`` maps class name -> minimal capacity in bytes/ns.
    """
    calls = []

    def fake_run(cfg):
        name = cfg.classes[0].name
        ok = cfg.network.capacity >= needs[name] - 1e-12
        calls.append((name, cfg.network.capacity))
        return SimpleNamespace(unstable=False, all_slos_met=lambda: ok)

    fake_run.calls = calls
    return fake_run


def test_find_baselines_bisects_to_tolerance(monkeypatch):
    cfg = quick_cfg([make_class("a"), make_class("b")])
    C = cfg.network.capacity
    monkeypatch.setattr(optimizer, "run_simulation",
                        stub_simulator({"a": 0.37 * C, "b": 0.81 * C}))
    res = find_baselines(cfg, OptimizerConfig(baseline_weight_tolerance=0.01))
    assert res.feasible
    assert 0.37 <= res.weights[0] <= 0.38
    assert 0.81 <= res.weights[1] <= 0.82


def test_find_baselines_flags_infeasible_class(monkeypatch):
    cfg = quick_cfg([make_class("a"), make_class("b")])
    C = cfg.network.capacity
    monkeypatch.setattr(optimizer, "run_simulation",
                        stub_simulator({"a": 0.5 * C, "b": 1.5 * C}))
    res = find_baselines(cfg, OptimizerConfig())
    assert res.weights[1] is None
    assert not res.feasible


def test_find_baselines_hint_narrows_the_search(monkeypatch):
    cfg = quick_cfg([make_class("a")])
    C = cfg.network.capacity
    fake = stub_simulator({"a": 0.37 * C})
    monkeypatch.setattr(optimizer, "run_simulation", fake)
    opt = OptimizerConfig(baseline_weight_tolerance=0.01)
    cold = find_baselines(cfg, opt)
    cold_calls = len(fake.calls)
    fake.calls.clear()
    warm = find_baselines(cfg, opt, hints=[cold.weights[0]])
    assert len(fake.calls) < cold_calls
    assert warm.weights[0] == pytest.approx(cold.weights[0], abs=2 * 0.01)
    assert 0.37 <= warm.weights[0]


def test_find_baselines_recovers_from_stale_hint(monkeypatch):
    cfg = quick_cfg([make_class("a")])
    C = cfg.network.capacity
    monkeypatch.setattr(optimizer, "run_simulation", stub_simulator({"a": 0.8 * C}))
    res = find_baselines(cfg, OptimizerConfig(baseline_weight_tolerance=0.01),
                         hints=[0.2])  # far below the truth
    assert res.feasible
    assert 0.8 <= res.weights[0] <= 0.81


# -- capacity search --------------------------------------------------------


def probes_of(fn):
    calls = []

    def met(c):
        calls.append(c)
        return fn(c)

    met.calls = calls
    return met


def test_search_capacity_brackets_then_bisects():
    met = probes_of(lambda c: c >= 7.3)
    opt = OptimizerConfig(capacity_search_tolerance=0.02)
    counter = [0]
    c = _search_capacity(met, 1.0, opt, counter=counter)
    assert c is not None
    assert 7.3 <= c <= 7.3 * 1.03
    assert met.calls[:3] == [2.0, 4.0, 8.0]  # geometric bracket from the load
    assert counter[0] == len(met.calls)


def test_search_capacity_gives_up_at_the_bracket_cap():
    met = probes_of(lambda c: c >= 100.0)
    opt = OptimizerConfig(bracket_cap_factor=16.0)
    assert _search_capacity(met, 1.0, opt) is None
    assert met.calls == [2.0, 4.0, 8.0, 16.0]


def test_search_capacity_accepts_a_good_hint():
    met = probes_of(lambda c: c >= 7.3)
    c = _search_capacity(met, 1.0, OptimizerConfig(), hint_hi=7.5)
    assert met.calls[0] == 7.5  # hint probed before any doubling
    assert 7.3 <= c <= 7.3 * 1.03


def test_search_capacity_ignores_a_bad_hint():
    met = probes_of(lambda c: c >= 7.3)
    c = _search_capacity(met, 1.0, OptimizerConfig(), hint_hi=6.0)
    assert met.calls[0] == 6.0
    assert met.calls[1:3] == [2.0, 4.0]  # falls back to the bracket
    assert 7.3 <= c <= 7.3 * 1.03


def test_search_capacity_deadline_semantics():
    past = time.monotonic() - 1.0
    met = probes_of(lambda c: c >= 7.3)
    # no feasible point yet: nothing conservative to return
    assert _search_capacity(met, 1.0, OptimizerConfig(), deadline=past) is None
    assert met.calls == []
    # hint already feasible: returned as-is instead of bisecting further
    met2 = probes_of(lambda c: c >= 7.3)
    c = _search_capacity(met2, 1.0, OptimizerConfig(), hint_hi=7.5, deadline=past)
    assert c == 7.5
    assert met2.calls == [7.5]


def test_min_bandwidth_static_sums_solo_searches(monkeypatch):
    cfg = quick_cfg([make_class("a", rate=gbps(8)), make_class("b", rate=gbps(8))])
    monkeypatch.setattr(optimizer, "run_simulation",
                        stub_simulator({"a": 3.0, "b": 5.0}))
    res = min_bandwidth(cfg, Strategy.STATIC, OptimizerConfig())
    assert res.feasible
    assert 8.0 * (1 - 1e-9) <= res.capacity <= 8.0 * 1.05
    assert res.probes > 0


def test_min_bandwidth_shared_fifo_uses_joint_probes(monkeypatch):
    cfg = quick_cfg([make_class("a", rate=gbps(8)), make_class("b", rate=gbps(8))])

    def fake_run(probe_cfg):
        # joint probe carries both classes; require 7.3 B/ns for the pair
        assert len(probe_cfg.classes) == 2
        assert probe_cfg.cc.r_init == probe_cfg.network.capacity
        ok = probe_cfg.network.capacity >= 7.3
        return SimpleNamespace(unstable=False, all_slos_met=lambda: ok)

    monkeypatch.setattr(optimizer, "run_simulation", fake_run)
    res = min_bandwidth(cfg, Strategy.SHARED_FIFO, OptimizerConfig())
    assert 7.3 <= res.capacity <= 7.3 * 1.03


def test_offered_load_and_inflation_helpers():
    classes = [make_class("a", rate=gbps(8)), make_class("b", rate=gbps(4))]
    assert offered_load(classes) == pytest.approx(gbps(12), rel=1e-9)
    assert inflation(15.0, 10.0) == 1.5
    with pytest.raises(ConfigError):
        inflation(0.0, 10.0)


# -- scenario sampling ------------------------------------------------------


def test_sample_scenario_respects_the_ranges(net100):
    space = ScenarioSpace(network=net100)
    rng = np.random.default_rng(0)
    classes = sample_scenario(space, 3, rng)
    assert len(classes) == 3
    for spec in classes:
        assert 1.0 <= spec.interarrivals.sigma <= 2.0
        assert gbps(5) - 1e-9 <= spec.offered_load() <= gbps(10) + 1e-9
        assert spec.flow_sizes.source in ("google", "facebook", "alibaba")
        (small, large) = spec.slis
        assert small.size_range == (0.0, 125_000.0)
        assert large.size_range == (125_000.0, None)
        comps = {c.ident: c.threshold for c in
                 spec.slo.terms} if hasattr(spec.slo, "terms") else {}
        assert 3.0 <= comps["small_p99"] <= 8.0
        assert comps["large_p99"] == pytest.approx(2 * comps["small_p99"], rel=1e-4)


def test_sample_scenario_rate_range_depends_on_class_count(net100):
    space = ScenarioSpace(network=net100)
    classes = sample_scenario(space, 5, np.random.default_rng(1))
    for spec in classes:
        assert gbps(3) - 1e-9 <= spec.offered_load() <= gbps(6) + 1e-9
    with pytest.raises(ConfigError):
        sample_scenario(space, 4, np.random.default_rng(1))


def test_sample_scenario_is_deterministic(net100):
    space = ScenarioSpace(network=net100)
    a = sample_scenario(space, 3, np.random.default_rng([5, 2]))
    b = sample_scenario(space, 3, np.random.default_rng([5, 2]))
    assert [s.interarrivals for s in a] == [s.interarrivals for s in b]
    assert [s.slo.unparse() for s in a] == [s.slo.unparse() for s in b]


def test_scenario_row_inflation_and_csv(tmp_path):
    row = ScenarioRow(index=0, seed=1001, classes=[make_class("a")])
    row.capacities = {"fifo": 15.0, "weights-fifo": 10.0, "weights-fq": None,
                      "static": 12.0}
    assert row.inflation_over(Strategy.WEIGHTS_FIFO) == 1.5
    assert row.inflation_over(Strategy.WEIGHTS_FQ) is None
    out = tmp_path / "rows.csv"
    write_scenario_csv([row], str(out))
    lines = out.read_text().splitlines()
    assert lines[0].startswith("scenario,seed,n_classes,classes,cap_gbps_fifo")
    assert len(lines) == 2
    assert f"{to_gbps(15.0):.4f}" in lines[1]


def test_run_scenario_batch_seeds_and_hints(monkeypatch, net100):
    calls = []

    def fake_min_bandwidth(cfg, strategy, opt, hint_hi=None):
        calls.append((strategy, hint_hi, opt.seed))
        return CapacityResult(capacity=10.0 if strategy is Strategy.SHARED_FIFO else 8.0,
                              probes=1)

    monkeypatch.setattr(optimizer, "min_bandwidth", fake_min_bandwidth)
    space = ScenarioSpace(network=net100)
    template = quick_cfg([make_class("placeholder")])
    lines = []
    rows = run_scenario_batch(space, 2, 3, template, OptimizerConfig(seed=7),
                              progress=lines.append)
    assert len(rows) == 2
    per_scenario = len(calls) // 2
    assert [c[0] for c in calls[:per_scenario]] == [
        Strategy.SHARED_FIFO, Strategy.WEIGHTS_FIFO, Strategy.WEIGHTS_FQ, Strategy.STATIC]
    # fifo runs first and its capacity seeds the weighted searches
    assert calls[0][1] is None
    assert calls[1][1] == 10.0 and calls[2][1] == 10.0
    assert calls[3][1] is None
    assert calls[0][2] == 1007 and calls[per_scenario][2] == 2007
    assert rows[0].capacities["weights-fifo"] == 8.0
    assert rows[0].inflation_over(Strategy.WEIGHTS_FIFO) == 1.25
    assert len(lines) == 8
