"""
gearfault

Vibration fault detection for planetary gearboxes: MiniRocket + ridge, a
multi-scale 1D ResNet and an LSTM-FCN, combined by probability averaging.
"""

__version__ = "0.1.0"

from .config import RunConfig, load_config  # noqa: E402
from .dataset import Dataset, load_csv, make_split_plan, save_csv  # noqa: E402
from .errors import GearfaultError  # noqa: E402

__all__ = ["Dataset", "GearfaultError", "RunConfig", "load_config", "load_csv", "make_split_plan", "save_csv"]
