"""Episode sampling, prototype computation, and the two-pass conditioned
inference pipeline: embed the sample set, form class prototypes and the
task representation, predict conditioning parameters from it, then
re-embed everything under that conditioning and classify the queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import metric
from .metric import ScaledMetricHead


@dataclass
class Episode:
    """One M-shot K-way task: labeled sample set plus query set."""

    sample_X: np.ndarray
    sample_labels: np.ndarray      # in 0..K-1
    query_X: np.ndarray
    query_labels: np.ndarray
    class_ids: np.ndarray          # dataset-level labels, index = episode label

    def __post_init__(self):
        self.sample_labels = np.asarray(self.sample_labels)
        self.query_labels = np.asarray(self.query_labels)
        K = len(self.class_ids)
        counts = np.bincount(self.sample_labels, minlength=K)
        if not np.all(counts == counts[0]) or counts[0] == 0:
            raise ValueError("sample set must hold M examples for each class")
        for labels in (self.sample_labels, self.query_labels):
            if labels.size and (labels.min() < 0 or labels.max() >= K):
                raise ValueError("label out of range")

    @property
    def n_ways(self) -> int:
        return len(self.class_ids)

    @property
    def n_shots(self) -> int:
        return len(self.sample_labels) // self.n_ways


@dataclass
class PrototypeSet:
    """Per-class centroids plus their mean, the task representation."""

    prototypes: np.ndarray   # (K, D_z)
    task_repr: np.ndarray    # (D_z,)


@dataclass
class EpisodeResult:
    loss: float
    probabilities: np.ndarray
    predictions: np.ndarray
    accuracy: float


def sample_episode(split, K: int, M: int, q_per_class: int,
                   rng: np.random.Generator) -> Episode:
    """Draw K distinct classes uniformly, then M + q distinct examples each."""
    class_ids = np.asarray(split.class_ids)
    if len(class_ids) < K:
        raise ValueError(f"split has {len(class_ids)} classes, need {K}")
    chosen = rng.choice(class_ids, size=K, replace=False)
    sample_ids, query_ids = [], []
    sample_labels, query_labels = [], []
    for k, cid in enumerate(chosen):
        pool = split.store.ids_for_class(int(cid))
        need = M + q_per_class
        if len(pool) < need:
            raise ValueError(f"class {cid} has {len(pool)} examples, need {need}")
        picked = rng.choice(pool, size=need, replace=False)
        sample_ids.extend(picked[:M])
        query_ids.extend(picked[M:])
        sample_labels.extend([k] * M)
        query_labels.extend([k] * q_per_class)
    return Episode(
        sample_X=split.store.batch(sample_ids),
        sample_labels=np.asarray(sample_labels),
        query_X=split.store.batch(query_ids),
        query_labels=np.asarray(query_labels),
        class_ids=chosen,
    )


def class_means(Z, labels: np.ndarray, K: int):
    """Per-class mean embeddings as a (K, D_z) matrix; graph-friendly."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError("every class needs at least one embedding")
    weights = np.eye(K)[labels].T / counts[:, None]   # (K, n), rows sum to 1
    return weights @ Z


def compute_prototypes(Z, labels: np.ndarray, K: int) -> PrototypeSet:
    protos = class_means(Z, labels, K)
    return PrototypeSet(prototypes=protos, task_repr=ad.vmean(protos, axis=0))


def episode_forward(model, view, episode: Episode):
    """Returns (prototypes, query embeddings, task representation).

    With a task conditioner: pass one embeds the sample set under identity
    conditioning to obtain the task representation, pass two re-embeds the
    combined sample and query batch under the predicted conditioning and
    recomputes the prototypes. Without one, a single combined pass is made;
    batch-normalization statistics never leak across separate calls.
    """
    K = episode.n_ways
    film = None
    if model.ten is not None:
        z_sample = model.embed(view, episode.sample_X)
        first = compute_prototypes(z_sample, episode.sample_labels, K)
        c_bar = first.task_repr
        film = model.ten.predict(view, c_bar)
    combined = np.concatenate([episode.sample_X, episode.query_X])
    z_all = model.embed(view, combined, film=film)
    n_sample = len(episode.sample_labels)
    z_s, z_q = z_all[:n_sample], z_all[n_sample:]
    protos = class_means(z_s, episode.sample_labels, K)
    c_bar = ad.vmean(protos, axis=0)
    return protos, z_q, c_bar


def episode_distances(model, episode: Episode) -> np.ndarray:
    """Query-to-prototype distance matrix under the current parameters."""
    protos, z_q, _ = episode_forward(model, model.view(), episode)
    return metric.distance_matrix(model.head.kind, z_q, protos)


def episode_loss_node(model, view, episode: Episode, include_penalty: bool = True):
    """Graph node for the episodic loss (plus penalties) of one episode."""
    protos, z_q, _ = episode_forward(model, view, episode)
    loss = metric.episode_loss(z_q, episode.query_labels, protos, model.head,
                               alpha=model.alpha_node(view))
    if include_penalty:
        loss = loss + model.penalty(view)
    return loss


def run_episode(model, episode: Episode) -> EpisodeResult:
    """Classify the episode's queries and report loss and accuracy."""
    view = model.view()
    protos, z_q, _ = episode_forward(model, view, episode)
    D = metric.distance_matrix(model.head.kind, z_q, protos)
    alpha = model.alpha_value()
    probs = np.stack([metric.scaled_class_probabilities(row, alpha) for row in D])
    preds = np.argmin(D, axis=1)
    loss = metric.episode_loss(z_q, episode.query_labels, protos, model.head,
                               alpha=alpha)
    loss = float(loss + model.penalty(view))
    accuracy = float(np.mean(preds == episode.query_labels))
    return EpisodeResult(loss=loss, probabilities=probs, predictions=preds,
                         accuracy=accuracy)


def classify_query(prototypes: PrototypeSet, z: np.ndarray,
                   head: ScaledMetricHead):
    """Nearest-prototype prediction; ties go to the lowest class index."""
    row = np.array([metric.distance(head.kind, z, c)
                    for c in prototypes.prototypes])
    probs = metric.scaled_class_probabilities(row, head.alpha)
    return int(np.argmin(row)), probs
