import pandas as pd

from axvit.axmul import error_metrics
from axvit.dse import pareto_front

ROLLING_WINDOW = 50
SEARCH_COLUMNS = ["simulation_index", "config", "predicted_accuracy", "normalized_power", "reward", "on_pareto"]


# Error and hardware characteristics per multiplier
def metrics_frame(catalog):
    rows = []
    for m in catalog.values():
        metrics = error_metrics(m)
        rows.append({
            "name": m.name, "kind": m.kind.value, "bitwidth": m.bitwidth, "param": m.param,
            "mae_pct": metrics.mae_pct, "wce_pct": metrics.wce_pct, "mre_pct": metrics.mre_pct,
            "power_mw": m.power_mw, "area_um2": m.area_um2, "delay_ns": m.delay_ns,
        })
    return pd.DataFrame(rows)


def _point_rows(points, front):
    ids = {id(point) for point in front}
    return [{
        "simulation_index": p.simulation, "config": str(p.config), "predicted_accuracy": p.predicted_accuracy,
        "normalized_power": p.normalized_power, "reward": p.reward, "on_pareto": id(p) in ids,
    } for p in points]


# Every evaluated point; on_pareto marks the first occurrence of each front point
def search_frame(points):
    return pd.DataFrame(_point_rows(points, pareto_front(points)), columns=SEARCH_COLUMNS)


def pareto_frame(points):
    front = pareto_front(points)
    return pd.DataFrame(_point_rows(front, front), columns=SEARCH_COLUMNS)


# Per-simulation reward, its rolling mean and the mean reward of each root action
def trace_frame(result, window=ROLLING_WINDOW):
    frame = pd.DataFrame({"simulation_index": range(len(result.trace)), "reward": result.trace})
    frame["rolling_mean"] = frame["reward"].rolling(window, min_periods=1).mean()
    if result.root_trace is not None and result.root_trace.size:
        for j, name in enumerate(result.names):
            frame[f"root_{name}"] = result.root_trace[:, j]
    return frame


def sensitivity_frame(table):
    rows = [{"multiplier": name, "layer": i, "sensitivity": table.s[j, i], "normalized_power": table.p[j, i]}
            for j, name in enumerate(table.names) for i in range(table.num_layers)]
    return pd.DataFrame(rows)


def loss_frame(history, column="loss"):
    return pd.DataFrame({"step": range(len(history)), column: history})


def toy_frames(result, window=ROLLING_WINDOW, bins=50):
    losses = pd.DataFrame({"iteration": range(1, len(result.losses) + 1), "mse": result.losses,
                           "rolling_mse": result.rolling_losses(window)})
    edges, outputs, targets = result.histograms(bins)
    histogram = pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "output_count": outputs,
                              "target_count": targets})
    return losses, histogram


# One-line summary statistics of the front, as printed by search and pareto
def front_summary(frame):
    front = frame[frame["on_pareto"]] if "on_pareto" in frame else frame
    return pd.Series({
        "points": len(frame),
        "pareto_points": len(front),
        "mean_power": front["normalized_power"].mean(),
        "best_accuracy": front["predicted_accuracy"].max(),
        "best_reward": frame["reward"].max(),
    })
