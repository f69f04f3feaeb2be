# -*- coding: utf-8 -*-
from .version import __version__, version
from .config import HarnessConfig, default_config, load_config, load_preset
from .errors import (ConfigError, DivergenceError, FormatError, NumericalCheckError, OceanError,
                     ShapeError)
