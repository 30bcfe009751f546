"""peftlab: a desk-scale lab for choosing and combining PEFT modules on a
frozen transformer backbone."""

from .autodiff import Tape, Tensor, backward, tensor
from .kernels import IMPLEMENTATION as KERNEL_IMPLEMENTATION

__version__ = "0.1.0"

__all__ = ["Tape", "Tensor", "backward", "tensor", "KERNEL_IMPLEMENTATION", "__version__"]
