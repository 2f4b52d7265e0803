import logging

from axvit.axmul import build_lut, lut_checksum, parse_multiplier_spec
from commands.common import get_catalog
from utils.config import require
from utils.reporting import metrics_frame
from utils.storage import save_lut, write_table

logger = logging.getLogger(__name__)


# Build a multiplier's LUT and write it as an AXLUT file
def cmd_gen_lut(config, args):
    catalog = get_catalog(config)
    mult = parse_multiplier_spec(args.multiplier, catalog)
    lut = build_lut(mult)
    path = save_lut(lut, require(config, "out"))
    print(f"{path}\tbitwidth={lut.bitwidth}\tentries={lut.size * lut.size}\tsha256={lut_checksum(lut)}")
    return 0


# Error metrics next to the catalog's hardware numbers
def cmd_error_metrics(config, args):
    frame = metrics_frame(get_catalog(config))
    if args.csv:
        write_table(frame, args.csv)
        logger.info("wrote metrics for %d multipliers to %s", len(frame), args.csv)
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return 0
