import logging

from axvit.axmul import build_luts, default_catalog, exact_baseline
from axvit.data import probe_batch
from axvit.errors import CalibrationStateError, ConfigError
from axvit.nn import AxxConfig
from utils.config import require
from utils.storage import load_catalog, load_checkpoint, load_dataset

logger = logging.getLogger(__name__)


# Catalog file when given, else the built-in presets
def get_catalog(config):
    return load_catalog(config.catalog) if config.catalog else default_catalog()


def get_model(config, calibrated=True):
    model = load_checkpoint(require(config, "model"))
    if calibrated and not model.calibrated:
        raise CalibrationStateError(f"{config.model} has no scale map; run calibrate first")
    return model


def get_dataset(config):
    return load_dataset(require(config, "dataset"))


def get_probe(config, dataset):
    return probe_batch(dataset, config.probe, config.seed)


def get_luts(catalog):
    luts = build_luts(catalog)
    logger.info("prepared %d multipliers: %s", len(luts), ", ".join(luts))
    return luts


# "a|b|c" per layer, a single name for every layer, nothing for all-exact
def get_axx(text, catalog, num_layers):
    if not text:
        return AxxConfig.uniform(exact_baseline(catalog).name, num_layers)
    axx = AxxConfig.parse(text)
    if len(axx) == 1:
        axx = AxxConfig.uniform(axx.assignment[0], num_layers)
    try:
        axx.validate(catalog, num_layers)
    except ConfigError as e:
        raise ConfigError(str(e), source="--axx") from e
    return axx
