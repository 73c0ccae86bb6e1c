"""Task-oriented MIMO precoding for cooperative edge classification.

Library layout:

- numerics: complex linear-algebra kernels (Cholesky log-det, Hermitian
  solves, Kronecker/vec utilities, PSD square roots).
- model: system configuration, Gaussian-mixture feature source, Rician
  channel sampling, and the transmission model r = H V z + n.
- mcr2: coding-rate-reduction objectives on features and received signals.
- bca: exact block-coordinate-ascent precoding solver.
- mm: majorize-minimize device update and the matching solver.
- unfolded: learnable unfolded precoder networks and their
  perturbation-based trainer.
- inference: MAP classification, end-to-end loss, Monte-Carlo accuracy.
- cli: config-driven experiment pipelines (`taskcomm` entry point).
"""

from .model import (ChannelState, FeatureBatch, GMModel, RicianParams,
                    SystemConfig, make_gm_model, sample_channel,
                    sample_features, transmit)
from .mcr2 import (channel_mcr2, channel_mcr2_batch, empirical_gm,
                   feature_mcr2, feature_mcr2_grad, optimize_features)
from .bca import (BcaState, PrecoderSet, bca_solve, scaled_identity_precoder,
                  v_step_bisection)
from .mm import bca_mm_solve, eta_bound, mm_v_step
from .unfolded import (TrainerConfig, UnfoldedNet, du_forward, e2e_finetune,
                       init_anchored, inv_approx, train_unfolded)
from .inference import (class_log_posteriors, e2e_loss, evaluate_accuracy,
                        map_classify)

__version__ = "0.1.0"
