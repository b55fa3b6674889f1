"""Local binary convolution (LBC) layers in numpy.

An LBC layer replaces a dense convolution by a fixed sparse +-1 anchor
convolution, a pointwise nonlinearity and a learnable 1x1 convolution.
"""

from .analysis import (ApproxExperimentConfig, filter_decorrelation, nmse_curve, solve_v_least_squares,
                       theorem1_montecarlo)
from .anchors import SparseBinaryFilterBank, densify, generate_bank, load_bank, save_bank
from .conv import (ConvGeometry, OpCounter, conv2d_1x1, conv2d_dense, conv2d_sparse_binary,
                   conv2d_sparse_binary_backward)
from .data import Dataset, load_mnist_idx, load_mnist_split, synthetic_gaussian, synthetic_natural
from .errors import (BoundsError, DataError, FormatError, LbcError, ParameterError, ShapeError, StateError,
                     TrainingError)
from .lbp import LbpConfig, lbp_encode_classic, lbp_encode_conv
from .network import Network, NetworkSpec, count_params, desk_spec, parse_spec
from .train import TrainConfig, grad_check, load_model, save_model, train

__version__ = "0.1.0"
