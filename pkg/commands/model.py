import logging
from pathlib import Path

import pandas as pd

from axvit.data import synthetic_dataset
from axvit.dse import cost_of_config
from axvit.nn import ModelConfig, ToyViT, calibrate_model, evaluate_accuracy, layer_mac_counts
from axvit.train import TrainHyperparams, finetune, pretrain
from commands.common import get_axx, get_catalog, get_dataset, get_luts, get_model, get_probe
from utils.config import require
from utils.reporting import loss_frame
from utils.storage import save_checkpoint, save_dataset, save_scales, write_table

logger = logging.getLogger(__name__)


def _sidecar(path, suffix):
    path = Path(path)
    return path.with_name(f"{path.stem}.{suffix}")


# Write a seeded synthetic dataset as an IDX pair
def cmd_gen_data(config, args):
    dataset = synthetic_dataset(args.count, config.seed)
    images, labels = save_dataset(dataset, require(config, "out"))
    print(f"{images}\n{labels}")
    return 0


# Full-precision training of a fresh toy ViT
def cmd_train(config, args):
    dataset = get_dataset(config)
    model = ToyViT(ModelConfig(num_layers=args.layers), seed=config.seed)
    hp = TrainHyperparams(optimizer=config.optimizer, learning_rate=args.pretrain_lr, epochs=args.pretrain_epochs,
                          batch_size=config.batch_size, data_fraction=1.0, seed=config.seed,
                          max_steps=config.max_steps)
    history = pretrain(model, dataset, hp)
    path = save_checkpoint(model, require(config, "out"))
    write_table(loss_frame(history), _sidecar(path, "loss.csv"))
    print(f"{path}\tsteps={len(history)}\tfinal_loss={history[-1]:.4f}")
    return 0


def cmd_calibrate(config, args):
    model = get_model(config, calibrated=False)
    dataset = get_dataset(config)
    scales = calibrate_model(model, dataset, config.percentile, config.bins, config.bitwidth)
    path = save_checkpoint(model, require(config, "out"))
    scale_path = save_scales(scales, _sidecar(path, "scales.csv"))
    print(f"{path}\n{scale_path}\ttensors={len(scales)}")
    return 0


def cmd_eval(config, args):
    model = get_model(config)
    catalog = get_catalog(config)
    dataset = get_dataset(config)
    if args.probe is not None:
        dataset = get_probe(config, dataset)
    axx = get_axx(args.axx, catalog, model.config.num_layers)
    accuracy = evaluate_accuracy(model, dataset, axx, get_luts(catalog))
    macs = layer_mac_counts(model.config)
    power = cost_of_config(axx, macs, catalog, "power_mw")
    row = {
        "config": str(axx),
        "samples": len(dataset),
        "accuracy": accuracy,
        "normalized_power": power,
        "power_reduction_pct": 100.0 * (1.0 - power),
        "area_reduction_pct": 100.0 * (1.0 - cost_of_config(axx, macs, catalog, "area_um2")),
        "delay_reduction_pct": 100.0 * (1.0 - cost_of_config(axx, macs, catalog, "delay_ns")),
    }
    if config.out:
        write_table(pd.DataFrame([row]), config.out)
    for key, value in row.items():
        print(f"{key}\t{value:.6f}" if isinstance(value, float) else f"{key}\t{value}")
    return 0


# Approximation-aware retraining; writes the checkpoint and its loss history
def cmd_finetune(config, args):
    model = get_model(config)
    catalog = get_catalog(config)
    dataset = get_dataset(config)
    axx = get_axx(args.axx, catalog, model.config.num_layers)
    luts = get_luts(catalog)
    hp = TrainHyperparams(optimizer=config.optimizer, learning_rate=config.lr, epochs=config.epochs,
                          batch_size=config.batch_size, data_fraction=config.data_fraction, seed=config.seed,
                          max_steps=config.max_steps)
    probe = get_probe(config, dataset)
    before = evaluate_accuracy(model, probe, axx, luts)
    model, history = finetune(model, axx, dataset, hp, luts, recalibrate=config.recalibrate)
    after = evaluate_accuracy(model, probe, axx, luts)
    path = save_checkpoint(model, require(config, "out"))
    write_table(loss_frame(history), _sidecar(path, "loss.csv"))
    logger.info("probe accuracy %.4f -> %.4f", before, after)
    print(f"{path}\tsteps={len(history)}\tprobe_accuracy_before={before:.4f}\tprobe_accuracy_after={after:.4f}")
    return 0
