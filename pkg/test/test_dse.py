import math
import statistics

import numpy as np
import pytest

from axvit.axmul import AxMultiplier, Kind, default_catalog
from axvit.data import probe_batch
from axvit.dse import (ConfigEvaluator, SearchParams, SensitivityTable, brute_force,
                       cost_of_config, mcts_search, pareto_coverage, pareto_front, power_of_config,
                       profile_sensitivity, rollout_policy_probs, simulations_to_settle, surrogate_rmse, ucb_score)
from axvit.errors import ConfigError, DataError, SearchError
from axvit.nn import AxxConfig, MacCounts, evaluate_accuracy

EXACT = "mul8s_1KV6"
# (approximated MAC share %, printed power reduction % for mul8s_1KV9, mul8s_1L2H, mul8s_1L2L)
POWER_REDUCTIONS = [
    (98.54, (3.45, 28.75, 52.18)),
    (98.54, (3.45, 28.75, 52.18)),
    (99.7, (3.49, 29.09, 52.79)),
    (75.5, (2.64, 22.03, 39.98)),
]


def three_way(catalog):
    return {name: catalog[name] for name in (EXACT, "mul8s_1L2H", "mul8s_1L2L")}


@pytest.fixture(scope="module")
def evaluator3(toy_model3, test_data, catalog, luts):
    small = three_way(catalog)
    return ConfigEvaluator(toy_model3, small, probe_batch(test_data, 128), {n: luts[n] for n in small})


@pytest.fixture(scope="module")
def sensitivity3(evaluator3):
    return profile_sensitivity(evaluator3.model, evaluator3.catalog, evaluator3.probe, evaluator=evaluator3)


@pytest.mark.parametrize("share, printed", POWER_REDUCTIONS)
def test_power_reduction_matches_published_table(catalog, share, printed):
    macs = MacCounts((share,), 100.0 - share)
    for name, expected in zip(("mul8s_1KV9", "mul8s_1L2H", "mul8s_1L2L"), printed):
        reduction = 100.0 * (1.0 - power_of_config(AxxConfig((name,)), macs, catalog))
        assert reduction == pytest.approx(expected, abs=0.1)


def test_area_and_delay_reductions_average(catalog):
    shares = [row[0] for row in POWER_REDUCTIONS]

    def mean_reduction(name, metric):
        return statistics.mean(100.0 * (1.0 - cost_of_config(AxxConfig((name,)), MacCounts((s,), 100.0 - s),
                                                              catalog, metric)) for s in shares)

    assert mean_reduction("mul8s_1KV9", "area_um2") == pytest.approx(5.68, abs=0.1)
    assert mean_reduction("mul8s_1L2H", "area_um2") == pytest.approx(21.8, abs=0.1)
    assert mean_reduction("mul8s_1L2L", "area_um2") == pytest.approx(40.6, abs=0.1)
    assert mean_reduction("mul8s_1L2H", "delay_ns") == pytest.approx(7.5, abs=0.1)
    assert mean_reduction("mul8s_1L2L", "delay_ns") == pytest.approx(21.4, abs=0.1)


def test_all_exact_power_is_one(catalog):
    macs = MacCounts((100, 200, 300), 50)
    assert power_of_config(AxxConfig.uniform(EXACT, 3), macs, catalog) == 1.0
    with pytest.raises(ConfigError):
        power_of_config(AxxConfig.uniform("nope", 3), macs, catalog)
    with pytest.raises(ConfigError):
        cost_of_config(AxxConfig.uniform(EXACT, 3), macs, catalog, "leakage")


def test_ucb_score():
    assert ucb_score(0.5, math.sqrt(2), 100, 10) == pytest.approx(1.4598, abs=1e-3)
    assert ucb_score(0.3, math.sqrt(2), 5, 0) == math.inf
    assert ucb_score(0.7, 0.0, 50, 3) == 0.7


def test_rollout_policy_probs():
    assert rollout_policy_probs([1.0, 0.8], [1.0, 0.5], 1.0) == pytest.approx([0.4256, 0.5744], abs=1e-3)
    assert rollout_policy_probs([0.9, 0.9], [0.4, 0.4], 1.0) == pytest.approx([0.5, 0.5])
    s = [0.9, 0.5, 0.99]
    probs = rollout_policy_probs(s, [1.0, 0.2, 0.6], 0.0)
    assert list(np.argsort(probs)) == list(np.argsort(s))
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(SearchError):
        rollout_policy_probs([], [], 1.0)


def test_pareto_front_small():
    points = [(0.7, 0.5), (0.6, 0.6), (0.8, 0.9)]
    assert pareto_front(points) == [(0.7, 0.5), (0.8, 0.9)]
    assert pareto_front([(0.5, 0.5)]) == [(0.5, 0.5)]
    assert pareto_front([]) == []
    assert pareto_front([(0.7, 0.5), (0.7, 0.5)]) == [(0.7, 0.5)]


def test_pareto_front_matches_dominance_oracle():
    rng = np.random.default_rng(0)
    points = [tuple(p) for p in np.round(rng.uniform(0, 1, (200, 2)), 2)]

    def dominated(p):
        return any(q[0] >= p[0] and q[1] <= p[1] and (q[0] > p[0] or q[1] < p[1]) for q in points)

    oracle = sorted({p for p in points if not dominated(p)}, key=lambda p: p[1])
    assert pareto_front(points) == oracle


def test_search_params_validation():
    with pytest.raises(SearchError):
        SearchParams(simulations=0)
    with pytest.raises(ConfigError):
        SearchParams(policy="greedy")
    with pytest.raises(ConfigError):
        SearchParams(lam=-1)


def test_evaluator_errors(toy_model, test_data):
    with pytest.raises(SearchError):
        ConfigEvaluator(toy_model, {}, test_data)
    with pytest.raises(DataError):
        ConfigEvaluator(toy_model, default_catalog(), test_data.head(0))


def test_sensitivity_table(sensitivity3, evaluator3):
    exact_row = sensitivity3.names.index(EXACT)
    assert np.all(sensitivity3.s[exact_row] == 1.0)
    assert np.all(sensitivity3.p[exact_row] == 1.0)
    assert np.all(sensitivity3.p <= 1.0)
    assert np.all(sensitivity3.s >= 0.0)
    assert sensitivity3.s.shape == (3, 3)


def test_sensitivity_varies_across_layers(toy_model3, test_data):
    catalog = default_catalog()
    aggressive = {EXACT: catalog[EXACT]}
    for spec, kind, param in (("trunc8k3", Kind.TRUNCATE, 3), ("trunc8k5", Kind.TRUNCATE, 5),
                              ("perf8r6", Kind.PERFORATE, 6)):
        aggressive[spec] = AxMultiplier(spec, 8, kind, param, power_mw=0.1, area_um2=300.0, delay_ns=1.0)
    table = profile_sensitivity(toy_model3, aggressive, probe_batch(test_data, 128))
    rows = table.s[1:]
    assert any(len(set(np.round(row, 6))) > 1 for row in rows)


def test_single_multiplier_catalog_repeats_config(toy_model, test_data, catalog, luts):
    evaluator = ConfigEvaluator(toy_model, {EXACT: catalog[EXACT]}, probe_batch(test_data, 32), {EXACT: luts[EXACT]})
    result = mcts_search(evaluator, SearchParams(simulations=20, policy="random"))
    assert {str(p.config) for p in result.points} == {f"{EXACT}|{EXACT}"}
    assert len(set(result.trace)) == 1


def test_hw_policy_requires_sensitivity(evaluator3):
    with pytest.raises(SearchError):
        mcts_search(evaluator3, SearchParams(simulations=5, policy="hw"))
    bad = SensitivityTable(("a", "b"), np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(SearchError):
        mcts_search(evaluator3, SearchParams(simulations=5, policy="hw"), bad)


def test_reward_identity_and_tree_consistency(evaluator3, sensitivity3):
    params = SearchParams(lam=1.5, simulations=120, policy="hw", seed=3)
    result = mcts_search(evaluator3, params, sensitivity3)
    assert len(result.points) == len(result.trace) == 120
    for point in result.points:
        assert point.reward == point.predicted_accuracy - 1.5 * point.normalized_power
    result.root.check_consistency()
    assert result.root.visits == 120
    assert result.root_action() in evaluator3.names
    assert result.root_trace.shape == (120, 3)


def test_search_is_deterministic(evaluator3, sensitivity3):
    params = SearchParams(simulations=80, policy="hw", seed=7)
    first = mcts_search(evaluator3, params, sensitivity3)
    second = mcts_search(evaluator3, params, sensitivity3)
    assert [str(p.config) for p in first.points] == [str(p.config) for p in second.points]
    assert first.trace == second.trace


def test_brute_force_limits(evaluator3):
    points = brute_force(evaluator3, 1.0)
    assert len(points) == 27
    assert len({str(p.config) for p in points}) == 27
    big = ConfigEvaluator(evaluator3.model, {f"m{i}": AxMultiplier(f"m{i}", 8) for i in range(20)},
                          evaluator3.probe, luts={})
    with pytest.raises(SearchError):
        brute_force(big, 1.0)


@pytest.mark.slow
def test_mcts_recovers_brute_force_pareto(evaluator3, sensitivity3):
    oracle = brute_force(evaluator3, 1.0)
    best = max(p.reward for p in oracle)
    coverages, matches = [], 0
    for seed in range(10):
        result = mcts_search(evaluator3, SearchParams(lam=1.0, simulations=500, policy="hw", seed=seed),
                             sensitivity3)
        coverages.append(pareto_coverage(result.points, oracle))
        matches += result.best().reward == pytest.approx(best)
    assert statistics.median(coverages) >= 0.9
    assert matches >= 8


@pytest.mark.slow
def test_reward_trace_settles(evaluator3, sensitivity3):
    result = mcts_search(evaluator3, SearchParams(lam=1.0, c=0.1, simulations=2000, policy="hw", seed=0),
                         sensitivity3)
    rolling = np.convolve(result.trace, np.ones(50) / 50, mode="valid")
    quarter = len(rolling) // 4
    assert np.var(rolling[-quarter:]) < np.var(rolling[:quarter])


# Model-free evaluator: accuracy is a per-multiplier factor product, power follows the catalog
class TableEvaluator:
    FACTORS = {EXACT: 1.0, "mul8s_1KV9": 0.999, "mul8s_1L2H": 0.99, "mul8s_1L2L": 0.98}

    def __init__(self, catalog, num_layers=8):
        self.catalog = catalog
        self.names = tuple(catalog)
        self.num_layers = num_layers
        self.mac_counts = MacCounts((100,) * num_layers, 0)
        self._seen = set()

    @property
    def evaluations(self):
        return len(self._seen)

    def config_of(self, indexes):
        return AxxConfig(tuple(self.names[j] for j in indexes))

    def evaluate(self, config):
        self._seen.add(config.assignment)
        accuracy = 0.9 * math.prod(self.FACTORS[name] for name in config.assignment)
        return accuracy, power_of_config(config, self.mac_counts, self.catalog)


def test_hw_policy_favours_cheapest_multiplier():
    ev = TableEvaluator(default_catalog())
    sensitivity = profile_sensitivity(None, ev.catalog, None, evaluator=ev)
    probs = rollout_policy_probs(sensitivity.s[:, 0], sensitivity.p[:, 0], 100.0)
    assert int(np.argmax(probs)) == ev.names.index("mul8s_1L2L")
    assert probs.max() > 0.9


@pytest.mark.slow
def test_hw_policy_settles_before_random():
    ev = TableEvaluator(default_catalog())
    sensitivity = profile_sensitivity(None, ev.catalog, None, evaluator=ev)

    def settle(policy, seed):
        result = mcts_search(ev, SearchParams(lam=100.0, simulations=2000, policy=policy, seed=seed), sensitivity)
        return simulations_to_settle(result.root_trace)

    hw = statistics.median(settle("hw", seed) for seed in range(5))
    rnd = statistics.median(settle("random", seed) for seed in range(5))
    assert hw < rnd


@pytest.mark.slow
def test_higher_lambda_lowers_front_power(evaluator3, sensitivity3):
    def front_power(lam, seed):
        result = mcts_search(evaluator3, SearchParams(lam=lam, simulations=300, policy="hw", seed=seed),
                             sensitivity3)
        return np.mean([p.normalized_power for p in result.pareto()])

    high = statistics.median(front_power(1.5, seed) for seed in range(5))
    low = statistics.median(front_power(0.5, seed) for seed in range(5))
    assert high <= low + 1e-12


def test_pareto_coverage():
    ref = [(0.9, 1.0), (0.8, 0.5), (0.5, 0.2)]
    assert pareto_coverage(ref, ref) == 1.0
    assert pareto_coverage([(0.9, 1.0)], ref) == pytest.approx(1 / 3)
    assert pareto_coverage([], []) == 1.0


def test_simulations_to_settle():
    assert simulations_to_settle([5.0, 1.0, 1.01, 1.0]) == 2
    assert simulations_to_settle([1.0, 1.0]) == 1
    trace = np.array([[np.nan, 2.0], [1.0, 2.0], [1.0, 2.0]])
    assert simulations_to_settle(trace) == 2


def test_surrogate_tracks_full_accuracy(toy_model, test_data, catalog, luts):
    exact = AxxConfig.uniform(EXACT, 2)
    assert evaluate_accuracy(toy_model, test_data, exact, luts) == pytest.approx(
        surrogate_rmse(toy_model, test_data, [exact], len(test_data), luts).surrogate[0])
    rng = np.random.default_rng(0)
    names = list(catalog)
    configs = [AxxConfig(tuple(rng.choice(names, 2))) for _ in range(20)]
    report = surrogate_rmse(toy_model, test_data, configs, 128, luts)
    assert report.rmse < 0.1
    assert report.surrogate.shape == report.full.shape == (20,)
