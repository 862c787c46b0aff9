"""Few-shot metric learning with temperature-scaled similarity, task-
conditioned feature extraction, and auxiliary co-training, backed by a
self-contained reverse-mode gradient engine with a finite-difference
oracle.
"""

from .autodiff import NumericalError
from .embedding import ExtractorConfig, TaskConditioner, build_extractor, film_apply
from .episodes import (Episode, EpisodeResult, PrototypeSet, classify_query,
                       compute_prototypes, run_episode, sample_episode)
from .estimator import EpisodicMetricClassifier
from .gradcheck import check_grad, finite_diff_grad, value_and_grad
from .metric import (COSINE, SQUARED_EUCLIDEAN, ScaledMetricHead,
                     TiedDistancesError, classwise_grad, distance,
                     episode_loss, limit_grad_large_alpha,
                     limit_grad_small_alpha, scaled_class_probabilities)
from .model import FewShotModel
from .params import GradientVector, Layout, LayoutBuilder, ParameterVector
from .training import (MetricsLog, TrainConfig, TrainingDivergedError,
                       aux_probability, evaluate, learning_rate, sweep_alpha,
                       train)

__version__ = "0.1.0"
