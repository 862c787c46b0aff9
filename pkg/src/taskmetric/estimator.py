"""Scikit-learn style wrapper around the episodic metric learner.

``EpisodicMetricClassifier.fit(X, y)`` meta-trains the embedding on
episodes drawn from the labeled data, then stores one prototype per class;
``predict`` assigns the nearest prototype in the learned space. This keeps
the few-shot machinery composable with pipelines and model selection.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import DatasetSplit, LabeledStore
from .embedding import ExtractorConfig
from .episodes import class_means
from .metric import ScaledMetricHead, distance_matrix, scaled_class_probabilities
from .model import FewShotModel
from .training import TrainConfig, train


class EpisodicMetricClassifier(BaseEstimator, ClassifierMixin):
    """Nearest-prototype classifier with an episodically trained embedding.

    Parameters follow scikit-learn conventions: everything is set in
    ``__init__`` and learned state carries a trailing underscore.
    """

    def __init__(self, extractor="mlp", hidden=(32,), embed_dim=8,
                 distance="squared-euclidean", alpha=1.0,
                 alpha_trainable=False, k_ways=5, m_shots=5,
                 queries_per_task=16, episodes=400, learning_rate=0.05,
                 momentum=0.9, weight_decay=0.0, random_state=0):
        self.extractor = extractor
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.distance = distance
        self.alpha = alpha
        self.alpha_trainable = alpha_trainable
        self.k_ways = k_ways
        self.m_shots = m_shots
        self.queries_per_task = queries_per_task
        self.episodes = episodes
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        k_ways = min(self.k_ways, len(self.classes_))
        if k_ways < 2:
            raise ValueError("need at least two classes")
        store = LabeledStore(data=X, fine=y_idx, coarse=np.zeros_like(y_idx))
        split = DatasetSplit("train", np.arange(len(self.classes_)), store)
        config = ExtractorConfig(
            kind=self.extractor, input_shape=(X.shape[1],),
            out_dim=self.embed_dim, hidden=tuple(self.hidden),
            weight_decay=self.weight_decay)
        head = ScaledMetricHead(kind=self.distance, alpha=self.alpha,
                                trainable=self.alpha_trainable)
        model = FewShotModel.build(config, head=head, seed=self.random_state)
        tc = TrainConfig(
            k_ways=k_ways, m_shots=self.m_shots,
            tasks_per_batch=1, queries_per_task=self.queries_per_task,
            total_episodes=self.episodes, learning_rate=self.learning_rate,
            momentum=self.momentum, eval_every=max(1, self.episodes // 5),
            eval_tasks=20, seed=self.random_state)
        self.model_, self.log_ = train(model, tc, split, split)
        z = self.model_.embed(self.model_.view(), X)
        self.prototypes_ = class_means(z, y_idx, len(self.classes_))
        return self

    def _distances(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        z = self.model_.embed(self.model_.view(), X)
        return distance_matrix(self.model_.head.kind, z, self.prototypes_)

    def predict(self, X):
        D = self._distances(X)
        return self.classes_[np.argmin(D, axis=1)]

    def predict_proba(self, X):
        D = self._distances(X)
        alpha = self.model_.alpha_value()
        return np.stack([scaled_class_probabilities(row, alpha) for row in D])

    def transform(self, X):
        """Embed inputs into the learned metric space."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return np.asarray(self.model_.embed(self.model_.view(), X))
