"""Damped linear oscillatory state-space models (D-LinOSS) and the undamped
LinOSS-IM / LinOSS-IMEX baselines, in numpy."""

from .core import (
    DiscreteSystem,
    OscillatorParams,
    Variant,
    apply_recurrence_sequential,
    discretize,
    discretize_dlinoss,
    discretize_linoss_im,
    discretize_linoss_imex,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DLinOSSError,
    DomainError,
    MissingTargetError,
    NonFiniteError,
    NonNumericCellError,
    RaggedRowsError,
    SingularTargetError,
)
from .model import ModelConfig, count_params, forward, init_weights, load_checkpoint, save_checkpoint
from .param_init import InitSpec, UnconstrainedParams, clamp_bounds, constrain, init_param_uniform, init_ring
from .scan import ScanElement, compose, scan_inclusive, scan_work_depth_report
from .spectral import SpectrumReport, baseline_spectral_curve, check_stability, eigenvalues, phi_inverse
from .train import Adam, TrainRun, backward, loss_and_grad, train_loop

__version__ = "0.1.0"
