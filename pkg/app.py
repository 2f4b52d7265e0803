import argparse
import logging
import sys

from axvit.errors import AxxError
from commands.explore import cmd_pareto, cmd_search, cmd_sensitivity
from commands.model import cmd_calibrate, cmd_eval, cmd_finetune, cmd_gen_data, cmd_train
from commands.multipliers import cmd_error_metrics, cmd_gen_lut
from commands.toy import cmd_toy
from utils.config import configure_logging, load_run_config

logger = logging.getLogger("axvit")


def _flag(parser, *names, **kwargs):
    # Unset flags stay None so the config file can supply them
    kwargs.setdefault("default", None)
    parser.add_argument(*names, **kwargs)


def _switch(parser, name, help):
    parser.add_argument(name, dest=name.lstrip("-").replace("-", "_"), action="store_const", const=True,
                        default=None, help=help)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _flag(common, "--config", help="JSON file with defaults for any flag")
    _flag(common, "--seed", type=int)
    _flag(common, "--out", help="output file, directory or prefix, depending on the command")
    _flag(common, "--catalog", help="multiplier catalog CSV (default: built-in presets)")
    _flag(common, "--model", help="model checkpoint")
    _flag(common, "--dataset", help="IDX prefix or synthetic:<n>[:<seed>]")
    _flag(common, "--probe", type=int, help="probe batch size for the accuracy surrogate")
    common.add_argument("-v", "--verbose", dest="verbosity", action="store_const", const=1, default=None)
    common.add_argument("-q", "--quiet", dest="verbosity", action="store_const", const=-1)

    training = argparse.ArgumentParser(add_help=False)
    _flag(training, "--optimizer", choices=("adam", "sgd"))
    _flag(training, "--batch-size", dest="batch_size", type=int)
    _flag(training, "--max-steps", dest="max_steps", type=int)

    parser = argparse.ArgumentParser(prog="axvit", description="Approximate-multiplier ViT emulation and search")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-lut", parents=[common], help="write a multiplier's product LUT")
    p.add_argument("multiplier", help="catalog name or spec such as exact8, trunc8k2, perf8r3")
    p.set_defaults(handler=cmd_gen_lut)

    p = sub.add_parser("error-metrics", parents=[common], help="MAE/WCE/MRE of every catalog multiplier")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(handler=cmd_error_metrics)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic IDX dataset")
    p.add_argument("--count", type=int, default=1024)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", parents=[common, training], help="pretrain a toy ViT in full precision")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--lr", dest="pretrain_lr", type=float, default=1e-3)
    p.add_argument("--epochs", dest="pretrain_epochs", type=int, default=10)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("calibrate", parents=[common], help="histogram calibration into a scale map")
    _flag(p, "--percentile", type=float)
    _flag(p, "--bins", type=int)
    _flag(p, "--bitwidth", type=int)
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("eval", parents=[common], help="accuracy and power of one assignment")
    p.add_argument("--axx", help="per-layer multipliers 'a|b|c', or one name for every layer")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("finetune", parents=[common, training], help="approximation-aware retraining")
    p.add_argument("--axx", help="per-layer multipliers 'a|b|c', or one name for every layer")
    _flag(p, "--lr", type=float)
    _flag(p, "--epochs", type=int)
    _flag(p, "--data-fraction", dest="data_fraction", type=float)
    _switch(p, "--recalibrate", "recalibrate scales after finetuning")
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("sensitivity", parents=[common], help="single-layer sensitivity table")
    p.set_defaults(handler=cmd_sensitivity)

    p = sub.add_parser("search", parents=[common], help="hardware-driven MCTS over per-layer assignments")
    _flag(p, "--lambda", dest="lam", type=float)
    _flag(p, "--c", type=float)
    _flag(p, "--sims", type=int)
    _flag(p, "--policy", choices=("random", "hw"))
    _switch(p, "--exhaustive", "enumerate every assignment instead of searching")
    p.set_defaults(handler=cmd_search)

    p = sub.add_parser("pareto", parents=[common], help="Pareto front of a search report")
    p.add_argument("report")
    p.set_defaults(handler=cmd_pareto)

    p = sub.add_parser("toy", parents=[common], help="toy attention convergence experiment")
    p.add_argument("multiplier")
    _flag(p, "--iterations", type=int)
    p.set_defaults(handler=cmd_toy)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args)
        configure_logging(config.verbosity)
        logger.debug("running %s with %s", args.command, config)
        return args.handler(config, args)
    except AxxError as e:
        print(f"Failed to run {args.command}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"Failed to run {args.command}: {e.filename or ''}: {e.strerror or e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
