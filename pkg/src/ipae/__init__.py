"""Mutual-information regularized autoencoders, from scratch.

The package trains Gaussian stochastic encoder/decoder pairs under a
rate-distortion objective: reconstruction distortion plus ``beta`` times
an upper bound on the input/code mutual information. Two bounds are
provided, the closed-form KL-to-standard-normal used by variational
autoencoders and a non-parametric pairwise bound that acts like
attractive potentials between encoded samples. Everything (dense layers,
backprop, Adam, PCA, the linear probe) is implemented here in float64
numpy with hand-derived gradients, and every run is a deterministic
function of its seed.
"""

__version__ = "0.1.0"

from .codec import (CodecSpec, Codec, GaussianCode, codec_preset, decode,
                    draw_noise, encode, init_codec, load_checkpoint,
                    reparameterize, save_checkpoint)
from .data import LabeledDataset, batches, gen_gmm, load_mnist_subset, read_idx, split, write_idx
from .errors import (ConfigError, ContractError, FormatError, IpaeError,
                     NumericError, ShapeError, TrainingDiverged)
from .math_nn import AdamState, DenseLayer, adam_step, dense_backward, dense_forward, grad_check
from .objectives import (LossBreakdown, RegularizerKind, bernoulli_distortion,
                         conditional_entropy, ip_mi_bound, mse_distortion,
                         nonparametric_entropy_bound, parametric_mi_bound,
                         partner_indices, total_loss, total_loss_with_grads)
from .rng import RunRng
from .train_eval import (EvalResult, MetricsRow, TrainConfig, evaluate,
                         linear_probe, mean_distance_to_centers, pca_project,
                         sweep, train)
