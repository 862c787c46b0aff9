"""Similarity measures, temperature-scaled class probabilities, and the
episodic cross-entropy loss, together with the closed-form small- and
large-temperature gradient limits used to verify the scaling analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .gradcheck import value_and_grad
from .params import GradientVector

SQUARED_EUCLIDEAN = "squared-euclidean"
COSINE = "cosine-distance"
KINDS = (SQUARED_EUCLIDEAN, COSINE)

# Ties in the nearest-prototype argmin violate assumption A1 of the
# large-temperature limit; they are a precondition failure, not a branch.
TIE_TOLERANCE = 1e-9


class TiedDistancesError(ValueError):
    """Two prototypes are equidistant from a query within TIE_TOLERANCE."""


@dataclass
class ScaledMetricHead:
    """Similarity kind plus the softmax temperature applied to it."""

    kind: str = SQUARED_EUCLIDEAN
    alpha: float = 1.0
    trainable: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown similarity kind {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def _values(x):
    return x.value if ad.is_node(x) else np.asarray(x)


def distance(kind: str, z, c):
    """Distance between two embeddings; differentiable when given nodes."""
    if _values(z).shape != _values(c).shape:
        raise ValueError("embedding dimensions differ")
    if kind == SQUARED_EUCLIDEAN:
        return ad.vsum((z - c) ** 2)
    if kind == COSINE:
        zn, cn = np.linalg.norm(_values(z)), np.linalg.norm(_values(c))
        if zn == 0.0 or cn == 0.0:
            raise ValueError("cosine distance is undefined for zero vectors")
        return -ad.dot(z, c) / (ad.sqrt(ad.dot(z, z)) * ad.sqrt(ad.dot(c, c)))
    raise ValueError(f"unknown similarity kind {kind!r}")


def distance_matrix(kind: str, Z, C):
    """Pairwise distances, rows = queries, columns = prototypes."""
    if kind == SQUARED_EUCLIDEAN:
        zz = ad.vsum(Z * Z, axis=1, keepdims=True)
        cc = ad.vsum(C * C, axis=1, keepdims=True)
        cross = Z @ (C.T if ad.is_node(C) else C.T)
        return zz + cc.T - 2.0 * cross
    if kind == COSINE:
        if np.any(np.linalg.norm(_values(Z), axis=1) == 0.0) or \
           np.any(np.linalg.norm(_values(C), axis=1) == 0.0):
            raise ValueError("cosine distance is undefined for zero vectors")
        Zn = Z / ad.sqrt(ad.vsum(Z * Z, axis=1, keepdims=True))
        Cn = C / ad.sqrt(ad.vsum(C * C, axis=1, keepdims=True))
        return -(Zn @ Cn.T)
    raise ValueError(f"unknown similarity kind {kind!r}")


def scaled_class_probabilities(row: np.ndarray, alpha: float) -> np.ndarray:
    """softmax(-alpha * d) over a row of per-class distances."""
    row = np.asarray(row, dtype=np.float64)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if row.ndim != 1 or row.size < 2:
        raise ValueError("distance row must be 1-d with at least two classes")
    if not np.all(np.isfinite(row)):
        raise ValueError("distance row contains non-finite values")
    logits = -alpha * row
    logits = logits - logits.max()
    p = np.exp(logits)
    return p / p.sum()


def episode_loss(query_Z, query_labels, prototype_Z, head: ScaledMetricHead,
                 alpha=None):
    """Sum over queries of alpha*d(z, c_y) + log sum_j exp(-alpha*d(z, c_j)).

    ``alpha`` may be a node when the temperature is trainable; otherwise the
    head's fixed value is used.
    """
    labels = np.asarray(query_labels)
    K = _values(prototype_Z).shape[0]
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError("query label out of range")
    a = head.alpha if alpha is None else alpha
    D = distance_matrix(head.kind, query_Z, prototype_Z)
    onehot = np.eye(K)[labels]
    correct = ad.vsum(D * onehot, axis=1)
    lse = ad.logsumexp(-(a * D), axis=1)
    return ad.vsum(a * correct + lse)


def classwise_loss(query_Z, query_labels, prototype_Z, head, k: int, alpha=None):
    """The class-k share of the episode loss (queries labeled k only)."""
    labels = np.asarray(query_labels)
    mask = labels == k
    if not np.any(mask):
        raise ValueError(f"no queries labeled {k}")
    idx = np.flatnonzero(mask)
    Zk = query_Z[idx] if ad.is_node(query_Z) else np.asarray(query_Z)[idx]
    return episode_loss(Zk, labels[idx], prototype_Z, head, alpha=alpha)


# ---- gradient evaluators over a model pipeline ----

def classwise_grad(model, episode, k: int) -> GradientVector:
    """Gradient of the class-k loss with respect to all model parameters."""
    from . import episodes as ep

    def program(sv):
        protos, qz, _ = ep.episode_forward(model, sv, episode)
        return classwise_loss(qz, episode.query_labels, protos, model.head,
                              k, alpha=model.alpha_node(sv))

    _, grad = value_and_grad(program, model.params)
    return grad


def _distance_grad(model, episode, query_index: int, proto_index: int):
    """Gradient of d(z_i, c_j); prototypes keep their parameter dependence."""
    from . import episodes as ep

    def program(sv):
        protos, qz, _ = ep.episode_forward(model, sv, episode)
        return distance(model.head.kind, qz[query_index], protos[proto_index])

    _, grad = value_and_grad(program, model.params)
    return grad.values


def limit_grad_small_alpha(model, episode, k: int) -> GradientVector:
    """Closed-form limit of the alpha-normalized class-k gradient as alpha -> 0."""
    from . import episodes as ep

    K = episode.n_ways
    total = np.zeros(len(model.params))
    for i in np.flatnonzero(np.asarray(episode.query_labels) == k):
        gk = _distance_grad(model, episode, int(i), k)
        total += (K - 1) / K * gk
        for j in range(K):
            if j != k:
                total -= _distance_grad(model, episode, int(i), j) / K
    return GradientVector(total, model.params.layout)


def limit_grad_large_alpha(model, episode, k: int) -> GradientVector:
    """Closed-form limit as alpha -> inf: only misassigned queries contribute."""
    from . import episodes as ep

    D = ep.episode_distances(model, episode)
    total = np.zeros(len(model.params))
    for i in np.flatnonzero(np.asarray(episode.query_labels) == k):
        row = D[int(i)]
        order = np.argsort(row)
        if row[order[1]] - row[order[0]] <= TIE_TOLERANCE:
            raise TiedDistancesError(
                f"query {i}: nearest prototypes tied within {TIE_TOLERANCE}")
        j_star = int(order[0])
        if j_star == k:
            continue  # correctly assigned query contributes exactly zero
        total += _distance_grad(model, episode, int(i), k)
        total -= _distance_grad(model, episode, int(i), j_star)
    return GradientVector(total, model.params.layout)
