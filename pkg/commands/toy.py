from pathlib import Path

from axvit.axmul import parse_multiplier_spec
from axvit.train import toy_attention_experiment
from commands.common import get_catalog
from utils.config import require
from utils.reporting import toy_frames
from utils.storage import write_table


# Single approximate attention layer regressing a real-arithmetic one
def cmd_toy(config, args):
    mult = parse_multiplier_spec(args.multiplier, get_catalog(config))
    result = toy_attention_experiment(mult, iterations=config.iterations, seed=config.seed)
    losses, histogram = toy_frames(result)
    out = Path(require(config, "out"))
    header = {"multiplier": mult.name, "iterations": config.iterations, "seed": config.seed}
    write_table(losses, out / f"toy-{mult.name}-loss.csv", header)
    write_table(histogram, out / f"toy-{mult.name}-hist.csv", header)
    print(f"{mult.name}\tinitial_mse={result.losses[0]:.6f}\tfinal_mse={result.losses[-1]:.6f}"
          f"\toutput_mean={result.outputs.mean():.4f}\ttarget_mean={result.targets.mean():.4f}"
          f"\toutput_std={result.outputs.std():.4f}\ttarget_std={result.targets.std():.4f}")
    return 0
