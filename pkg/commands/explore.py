import logging
from pathlib import Path

from axvit.dse import (ConfigEvaluator, SearchParams, brute_force, mcts_search, pareto_front, profile_sensitivity,
                       simulations_to_settle)
from commands.common import get_catalog, get_dataset, get_luts, get_model, get_probe
from utils.config import require
from utils.reporting import front_summary, pareto_frame, search_frame, sensitivity_frame, trace_frame
from utils.storage import read_table, read_table_header, write_table

logger = logging.getLogger(__name__)


def _evaluator(config):
    model = get_model(config)
    catalog = get_catalog(config)
    probe = get_probe(config, get_dataset(config))
    return ConfigEvaluator(model, catalog, probe, get_luts(catalog))


# Single-layer probe accuracy and power for every (multiplier, layer)
def cmd_sensitivity(config, args):
    evaluator = _evaluator(config)
    table = profile_sensitivity(evaluator.model, evaluator.catalog, evaluator.probe, evaluator=evaluator)
    frame = sensitivity_frame(table)
    if config.out:
        write_table(frame, config.out)
    print(frame.pivot(index="multiplier", columns="layer", values="sensitivity").to_string(float_format="%.4f"))
    return 0


def cmd_search(config, args):
    params = SearchParams(lam=config.lam, c=config.c, simulations=config.sims, policy=config.policy,
                          probe_batch_size=config.probe, seed=config.seed)
    out = Path(require(config, "out"))
    evaluator = _evaluator(config)
    header = {"lambda": params.lam, "c": params.c, "sims": params.simulations, "policy": params.policy,
              "seed": params.seed, "probe": params.probe_batch_size}
    if config.exhaustive:
        header["mode"] = "exhaustive"
        points = brute_force(evaluator, params.lam)
    else:
        sensitivity = None
        if params.policy == "hw":
            sensitivity = profile_sensitivity(evaluator.model, evaluator.catalog, evaluator.probe, evaluator=evaluator)
            write_table(sensitivity_frame(sensitivity), out / "sensitivity.csv", header)
        result = mcts_search(evaluator, params, sensitivity)
        points = result.points
        write_table(trace_frame(result), out / "trace.csv", header)
        settle = simulations_to_settle(result.root_trace)
        logger.info("visit-max root action %s; root action rewards settle after %d simulations",
                    result.root_action(), settle)
    frame = search_frame(points)
    write_table(frame, out / "search.csv", header)
    write_table(pareto_frame(points), out / "pareto.csv", header)
    print(front_summary(frame).to_string())
    return 0


# Pareto front of an existing search report
def cmd_pareto(config, args):
    frame = read_table(args.report)
    header = read_table_header(args.report)
    rows = list(zip(frame["predicted_accuracy"], frame["normalized_power"], frame.index))
    front = frame.loc[[row[2] for row in pareto_front(rows)]].copy()
    front["on_pareto"] = True
    if config.out:
        write_table(front, config.out, header or None)
    print(front.to_string(index=False))
    return 0
