"""L-product tensor algebra and the tensorized Transformer encoder built on it."""

from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import (
    Model,
    ModelConfig,
    decoder_layer,
    encoder_layer,
    l_cross_attention,
    l_mha,
    l_mha_masked,
    slice_batched_forward,
    tffn,
)
from .estimator import LTransformerClassifier
from .exceptions import (
    ConfigError,
    DivisibilityError,
    NumericalError,
    ShapeError,
    SliceIndexError,
    TrainingError,
    TransformError,
)
from .gradients import finite_difference_check, grad, loss_and_grad
from .harness import bench, count_params, flop_model, verify_equivalence
from .lsvd import average_rank, l_svd, matrix_svd, truncated_l_svd, tubal_rank
from .ltransform import (
    TransformOp,
    dct_matrix,
    facewise_product,
    identity_transform,
    invertible_transform,
    l_forward,
    l_identity,
    l_inverse,
    l_product,
    l_transpose,
    make_transform,
    orthogonal_transform,
)
from .tensor3 import fold, frontal_slice, matricize, mode_n_product, tensorize, unfold
from .trainer import Dataset, TrainConfig, synth_dataset, train

__version__ = "0.1.0"
