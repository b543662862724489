"""Mixed-quantization inference engine and imaging toolkit for
single-image inverse tone mapping."""

from .config import MqnConfig
from .graph import (build_mqn, count_params_macs, forward_float, forward_mixed,
                    init_weights, run_model)
from .quant import (CalibrationRecord, QuantParams, QuantScheme,
                    calibrate_activations, quantize_model)
from .weights_io import load_weights, save_weights

__all__ = [
    "MqnConfig", "build_mqn", "count_params_macs", "forward_float",
    "forward_mixed", "init_weights", "run_model", "CalibrationRecord",
    "QuantParams", "QuantScheme", "calibrate_activations", "quantize_model",
    "load_weights", "save_weights",
]

__version__ = "0.1.0"
