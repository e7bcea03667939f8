import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from gebd import __version__
from gebd.commands import COMMANDS, set_threads
from gebd.errors import ConfigurationError, GEBDError
from gebd.model import ModelVariant

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger('gebd')

# Filter out Pillow's plugin chatter
logging.getLogger('PIL').setLevel(logging.WARNING)

# Load environment variables from .env file
load_dotenv()


class Config:
    """Environment configuration with validation."""
    def __init__(self):
        self.LOG_LEVEL = os.getenv('GEBD_LOG_LEVEL', 'INFO').upper()
        self.DATA_DIR = os.getenv('GEBD_DATA_DIR', 'data')
        self.SEED = os.getenv('GEBD_SEED', '0')
        self.NUM_THREADS = os.getenv('GEBD_NUM_THREADS', '0')  # 0 keeps the torch default
        self.SNIPPET_RATE = os.getenv('GEBD_SNIPPET_RATE', '2.0')
        self.DEFAULT_THRESHOLD = os.getenv('GEBD_DEFAULT_THRESHOLD', '0.3')

        self.validate()

    def validate(self):
        """Validate and convert configuration values."""
        if self.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ConfigurationError(f"GEBD_LOG_LEVEL must be a logging level name, got {self.LOG_LEVEL}")
        try:
            self.SEED = int(self.SEED)
            self.NUM_THREADS = int(self.NUM_THREADS)
        except ValueError:
            raise ConfigurationError("GEBD_SEED and GEBD_NUM_THREADS must be integers")
        try:
            self.SNIPPET_RATE = float(self.SNIPPET_RATE)
            self.DEFAULT_THRESHOLD = float(self.DEFAULT_THRESHOLD)
        except ValueError:
            raise ConfigurationError("GEBD_SNIPPET_RATE and GEBD_DEFAULT_THRESHOLD must be numbers")
        if self.NUM_THREADS < 0:
            raise ConfigurationError("GEBD_NUM_THREADS must be >= 0")
        if not self.SNIPPET_RATE > 0:
            raise ConfigurationError("GEBD_SNIPPET_RATE must be positive")
        if not 0.0 <= self.DEFAULT_THRESHOLD <= 1.0:
            raise ConfigurationError("GEBD_DEFAULT_THRESHOLD must lie in [0, 1]")


def _add_training_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--data', help='data directory with features/ and annotations.json')
    parser.add_argument('--config', help='JSON config file; flags override it')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--k', type=int, default=5, help='number of folds')
    parser.add_argument('--epochs', type=int)
    parser.add_argument('--lr', type=float, help='learning rate')
    parser.add_argument('--local-range', type=int, help='contrastive local range w')
    parser.add_argument('--peak-k', type=int)
    parser.add_argument('--threshold', type=float)
    parser.add_argument('--rel', help='comma-separated Rel.Dis. thresholds for validation')
    parser.add_argument('--variant', choices=[v.value for v in ModelVariant])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='detector', description='Dual-pass generic event boundary detection')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    synth = sub.add_parser('synth', help='generate a synthetic dataset')
    synth.add_argument('--out', help='output data directory')
    synth.add_argument('--num-videos', type=int, default=200)
    synth.add_argument('--seed', type=int)
    synth.add_argument('--config', help='JSON config with a "synth" section')
    synth.add_argument('--length-min', type=int)
    synth.add_argument('--length-max', type=int)
    synth.add_argument('--feature-dim', type=int)
    synth.add_argument('--noise', type=float)

    train = sub.add_parser('train', help='train one fold')
    _add_training_flags(train)
    train.add_argument('--fold', type=int, default=0)
    train.add_argument('--out', help='checkpoint path')

    predict = sub.add_parser('predict', help='predict boundaries with one or more checkpoints')
    predict.add_argument('--ckpt', nargs='+', action='extend', required=True)
    predict.add_argument('--data', help='data or features directory')
    predict.add_argument('--out', help='predictions JSON path')
    predict.add_argument('--peak-k', type=int)
    predict.add_argument('--threshold', type=float)

    evaluate = sub.add_parser('eval', help='score predictions with F1@Rel.Dis.')
    evaluate.add_argument('--pred', required=True)
    evaluate.add_argument('--ann', required=True)
    evaluate.add_argument('--rel', default='0.05')
    evaluate.add_argument('--class', dest='boundary_class', default='whole')
    evaluate.add_argument('--out', help='report JSON path')

    crossval = sub.add_parser('crossval', help='train all folds and report held-out and ensemble F1')
    _add_training_flags(crossval)
    crossval.add_argument('--test', help='optional test data directory')
    crossval.add_argument('--out', help='output directory')

    ablate = sub.add_parser('ablate', help='compare model variants over several seeds')
    _add_training_flags(ablate)
    ablate.add_argument('--fold', type=int, default=0)
    ablate.add_argument('--variants', default=','.join(v.value for v in ModelVariant))
    ablate.add_argument('--seeds', default='0,1,2')
    ablate.add_argument('--out', help='output directory')

    render = sub.add_parser('render', help='write TSM and mask images for one video')
    render.add_argument('--ckpt', required=True)
    render.add_argument('--data')
    render.add_argument('--video', help='video id (default: first)')
    render.add_argument('--local-range', type=int)
    render.add_argument('--out', help='output directory')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = Config()
        logging.getLogger().setLevel(config.LOG_LEVEL)
        set_threads(config.NUM_THREADS)
        COMMANDS[args.command](args, config)
        return 0
    except GEBDError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted, shutting down...")
        return 4
    except Exception:
        logger.error(f"Unexpected error in {args.command}:", exc_info=True)
        return 4


if __name__ == "__main__":
    sys.exit(main())
