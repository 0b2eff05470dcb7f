"""Spiking CNNs with normalized membrane potentials: training, threshold
re-parameterization for deployment, online threshold adaptation under
distribution shift, and synaptic-operation energy accounting."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward, set_debug, zero_grad  # noqa: F401
from .kernels import backend as kernel_backend  # noqa: F401
