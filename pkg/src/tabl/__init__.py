"""Bilinear (BL) and temporal-attention bilinear (TABL) layers with hand-written gradients,
the FI-2010 mid-price training protocol and complexity benchmarks."""

from .errors import DataError, NumericalError, ShapeError, TablError, ValidationError
from .layers import (Activation, BlParams, TablParams, apply_constraints, bl_backward, bl_forward,
                     init_bl, init_tabl, tabl_backward, tabl_forward)
from .model import NetworkSpec, TrainConfig, evaluate, net_forward, train

__version__ = "0.1.0"
