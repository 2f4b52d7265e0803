"""Design-space exploration: per-layer multiplier assignment by hardware-driven MCTS.

A search state is a partial assignment of catalog multipliers to transformer blocks.
Rewards are ``accuracy - lambda * normalized_power`` on a fixed probe batch.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr
from tqdm import tqdm

from axvit.axmul import build_luts, exact_baseline
from axvit.data import probe_batch
from axvit.errors import ConfigError, DataError, SearchError
from axvit.nn import AxxConfig, evaluate_accuracy, layer_mac_counts

logger = logging.getLogger(__name__)

POLICIES = ("random", "hw")
BRUTE_FORCE_LIMIT = 4096
COST_METRICS = ("power_mw", "area_um2", "delay_ns")


@dataclass
class SensitivityTable:
    names: tuple
    s: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.names = tuple(self.names)
        self.s = np.asarray(self.s, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.s.shape != self.p.shape or self.s.shape[0] != len(self.names):
            raise SearchError(f"sensitivity shapes {self.s.shape}/{self.p.shape} do not match {len(self.names)} names")

    @property
    def num_layers(self):
        return self.s.shape[1]


@dataclass
class MctsNode:
    depth: int
    assignment: tuple = ()
    visits: int = 0
    total: float = 0.0
    children: list = field(default_factory=list)

    @property
    def mean(self):
        return self.total / self.visits if self.visits else 0.0

    def check_consistency(self):
        if self.children and self.visits < sum(child.visits for child in self.children):
            raise SearchError(f"node {self.assignment} has fewer visits than its children")
        for child in self.children:
            child.check_consistency()


@dataclass(frozen=True)
class SearchPoint:
    simulation: int
    config: AxxConfig
    predicted_accuracy: float
    normalized_power: float
    reward: float


@dataclass(frozen=True)
class SearchParams:
    lam: float = 1.0
    c: float = math.sqrt(2.0)
    simulations: int = 1000
    policy: str = "hw"
    probe_batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.simulations < 1:
            raise SearchError(f"simulation budget must be >= 1, got {self.simulations}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}", source="--lambda")
        if not self.c > 0:
            raise ConfigError(f"exploration constant must be > 0, got {self.c}", source="--c")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got '{self.policy}'", source="--policy")
        if self.probe_batch_size < 1:
            raise ConfigError(f"probe size must be >= 1, got {self.probe_batch_size}", source="--probe")


@dataclass
class SearchResult:
    params: SearchParams
    points: list
    trace: list
    root: MctsNode
    names: tuple
    # Mean reward of every root action after each simulation (nan while unvisited)
    root_trace: np.ndarray = None

    def best(self):
        return max(self.points, key=lambda point: (point.reward, -point.simulation))

    def pareto(self):
        return pareto_front(self.points)

    # Most visited root action, ties to the lowest catalog index
    def root_action(self):
        visits = [child.visits for child in self.root.children]
        return self.names[int(np.argmax(visits))] if visits else None


class ConfigEvaluator:
    """Probe-batch accuracy and normalized power of full assignments, memoized per config."""

    def __init__(self, model, catalog, probe, luts=None, mac_counts=None):
        if not catalog:
            raise SearchError("multiplier catalog is empty")
        if len(probe) == 0:
            raise DataError("probe batch is empty")
        self.model = model
        self.catalog = catalog
        self.probe = probe
        self.luts = luts if luts is not None else build_luts(catalog)
        self.mac_counts = mac_counts or layer_mac_counts(model.config)
        self.names = tuple(catalog)
        self._memo = {}

    @property
    def num_layers(self):
        return self.model.config.num_layers

    @property
    def evaluations(self):
        return len(self._memo)

    def config_of(self, indexes):
        return AxxConfig(tuple(self.names[j] for j in indexes))

    def evaluate(self, config):
        key = config.assignment
        if key not in self._memo:
            accuracy = predict_accuracy(self.model, config, self.probe, self.luts)
            power = power_of_config(config, self.mac_counts, self.catalog)
            self._memo[key] = (accuracy, power)
            logger.debug("evaluated %s: accuracy %.4f power %.4f", config, accuracy, power)
        return self._memo[key]


def predict_accuracy(model, config, probe, luts):
    if len(probe) == 0:
        raise DataError("probe batch is empty")
    return evaluate_accuracy(model, probe, config, luts)


# Per-layer MACs on their multiplier, fixed MACs on the exact baseline, over all MACs on the baseline
def cost_of_config(config, mac_counts, catalog, metric="power_mw"):
    if metric not in COST_METRICS:
        raise ConfigError(f"cost metric must be one of {COST_METRICS}, got '{metric}'")
    config.validate(catalog, len(mac_counts.per_layer))
    base = getattr(exact_baseline(catalog), metric)
    if base <= 0:
        raise ConfigError(f"exact baseline has non-positive {metric}")
    relative = sum(macs * (getattr(catalog[name], metric) / base)
                   for macs, name in zip(mac_counts.per_layer, config.assignment))
    return (relative + mac_counts.fixed) / mac_counts.total


def power_of_config(config, mac_counts, catalog):
    return cost_of_config(config, mac_counts, catalog, "power_mw")


def profile_sensitivity(model, catalog, probe, luts=None, evaluator=None):
    evaluator = evaluator or ConfigEvaluator(model, catalog, probe, luts)
    names, layers = evaluator.names, evaluator.num_layers
    exact = exact_baseline(catalog).name
    base_accuracy, _ = evaluator.evaluate(AxxConfig.uniform(exact, layers))
    if base_accuracy == 0:
        raise SearchError("all-exact probe accuracy is zero; the model is degenerate")
    s = np.zeros((len(names), layers))
    p = np.zeros((len(names), layers))
    cells = list(itertools.product(range(len(names)), range(layers)))
    for j, i in tqdm(cells, desc="sensitivity", leave=False, disable=not logger.isEnabledFor(logging.INFO)):
        assignment = [exact] * layers
        assignment[i] = names[j]
        accuracy, power = evaluator.evaluate(AxxConfig(assignment))
        s[j, i] = accuracy / base_accuracy
        p[j, i] = power
    logger.info("profiled %d multipliers x %d layers (exact probe accuracy %.4f)", len(names), layers, base_accuracy)
    return SensitivityTable(names, s, p)


def ucb_score(mean, c, parent_visits, visits):
    if visits == 0:
        return math.inf
    if parent_visits < 1:
        raise SearchError(f"parent visits must be >= 1, got {parent_visits}")
    return mean + c * math.sqrt(math.log(parent_visits) / visits)


def rollout_policy_probs(s_col, p_col, lam):
    z = np.asarray(s_col, dtype=np.float64) - lam * np.asarray(p_col, dtype=np.float64)
    if z.size == 0:
        raise SearchError("rollout policy over an empty catalog")
    weights = np.exp(z - z.max())
    return weights / weights.sum()


# Highest UCB child; strict comparison keeps the lowest index on ties
def _select_child(node, c):
    best, best_score = None, -math.inf
    for child in node.children:
        score = ucb_score(child.mean, c, node.visits, child.visits)
        if score > best_score:
            best, best_score = child, score
    return best


def mcts_search(evaluator, params, sensitivity=None):
    names, layers = evaluator.names, evaluator.num_layers
    k = len(names)
    if params.policy == "hw":
        if sensitivity is None:
            raise SearchError("hardware-driven policy needs a sensitivity table")
        if sensitivity.names != names or sensitivity.num_layers != layers:
            raise SearchError("sensitivity table does not match the catalog and model")
        policy = [rollout_policy_probs(sensitivity.s[:, i], sensitivity.p[:, i], params.lam) for i in range(layers)]
    else:
        policy = [np.full(k, 1.0 / k)] * layers
    rng = np.random.default_rng(params.seed)

    def sample(depth):
        return int(rng.choice(k, p=policy[depth]))

    root = MctsNode(0)
    points, trace, root_trace = [], [], []
    for sim in tqdm(range(params.simulations), desc=f"mcts {params.policy}", leave=False,
                    disable=not logger.isEnabledFor(logging.INFO)):
        node, path = root, [root]
        while node.children:
            node = _select_child(node, params.c)
            path.append(node)
        if node.depth < layers:
            node.children = [MctsNode(node.depth + 1, node.assignment + (j,)) for j in range(k)]
            node = node.children[sample(node.depth)]
            path.append(node)
        indexes = list(node.assignment)
        while len(indexes) < layers:
            indexes.append(sample(len(indexes)))
        config = evaluator.config_of(indexes)
        accuracy, power = evaluator.evaluate(config)
        reward = accuracy - params.lam * power
        for visited in path:
            visited.visits += 1
            visited.total += reward
        points.append(SearchPoint(sim, config, accuracy, power, reward))
        trace.append(reward)
        root_trace.append([child.mean if child.visits else math.nan for child in root.children])
    logger.info("mcts (%s, lambda=%g, c=%g): %d simulations, %d distinct configs, best reward %.4f",
                params.policy, params.lam, params.c, params.simulations, evaluator.evaluations, max(trace))
    return SearchResult(params, points, trace, root, names, np.asarray(root_trace, dtype=np.float64))


def _objectives(point):
    if isinstance(point, SearchPoint):
        return point.predicted_accuracy, point.normalized_power
    return point[0], point[1]


# Non-dominated points (max accuracy, min power), ascending power, first of duplicates kept
def pareto_front(points):
    order = sorted(range(len(points)), key=lambda i: (_objectives(points[i])[1], -_objectives(points[i])[0], i))
    front, best = [], -math.inf
    for i in order:
        accuracy, _ = _objectives(points[i])
        if accuracy > best:
            front.append(points[i])
            best = accuracy
    return front


def brute_force(evaluator, lam):
    k, layers = len(evaluator.names), evaluator.num_layers
    if k ** layers > BRUTE_FORCE_LIMIT:
        raise SearchError(f"{k}^{layers} configs exceed the exhaustive limit of {BRUTE_FORCE_LIMIT}")
    points = []
    for index, indexes in enumerate(itertools.product(range(k), repeat=layers)):
        config = evaluator.config_of(indexes)
        accuracy, power = evaluator.evaluate(config)
        points.append(SearchPoint(index, config, accuracy, power, accuracy - lam * power))
    return points


# Fraction of the reference front's (accuracy, power) pairs present in the found front
def pareto_coverage(found, reference):
    reference = {_objectives(point) for point in pareto_front(reference)}
    if not reference:
        return 1.0
    found = {_objectives(point) for point in pareto_front(found)}
    return len(reference & found) / len(reference)


@dataclass
class SurrogateReport:
    configs: list
    surrogate: np.ndarray
    full: np.ndarray
    rmse: float
    spearman: float


def surrogate_rmse(model, dataset, configs, probe_size, luts, seed=0):
    probe = probe_batch(dataset, probe_size, seed)
    surrogate = np.array([predict_accuracy(model, config, probe, luts) for config in configs])
    full = np.array([evaluate_accuracy(model, dataset, config, luts) for config in configs])
    rmse = float(np.sqrt(np.mean((surrogate - full) ** 2)))
    rho = float(spearmanr(surrogate, full).correlation) if len(configs) > 1 else math.nan
    logger.info("surrogate over %d configs: rmse %.4f, spearman %.3f", len(configs), rmse, rho)
    return SurrogateReport(list(configs), surrogate, full, rmse, rho)


# Simulations after which every series stays within tolerance (relative) of its final value
def simulations_to_settle(trace, tolerance=0.02):
    values = np.asarray(trace, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if len(values) == 0:
        raise SearchError("empty trace")
    final = values[-1]
    with np.errstate(invalid="ignore"):
        settled = np.all(np.abs(values - final) <= tolerance * np.abs(final), axis=1)
    unsettled = np.flatnonzero(~settled)
    return 1 if unsettled.size == 0 else int(unsettled[-1]) + 2
