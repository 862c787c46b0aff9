"""Numerical verification harness for the temperature-limit analysis:
randomized instances with a linear embedder, and the relative error
between the temperature-normalized class gradient and its closed-form
small/large-temperature limits.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from . import metric
from .embedding import ExtractorConfig
from .episodes import Episode, episode_distances
from .model import FewShotModel

SMALL_ALPHAS = (1e-2, 1e-3, 1e-4)
LARGE_ALPHAS = (10.0, 100.0, 1000.0)


def random_linear_instance(seed: int, k_ways: int = 3, dim: int = 4,
                           m_shots: int = 2, q_per_class: int = 3
                           ) -> Tuple[FewShotModel, Episode]:
    """A linear-embedder model and a random episode on raw vectors."""
    rng = np.random.default_rng(seed)
    model = FewShotModel.build(
        ExtractorConfig(kind="linear", input_shape=(dim,), out_dim=dim,
                        bias=False, weight_decay=0.0),
        seed=seed)
    model.params.values[:] = rng.uniform(-1.0, 1.0, size=len(model.params))
    sample_X = rng.uniform(-1.0, 1.0, size=(k_ways * m_shots, dim))
    query_X = rng.uniform(-1.0, 1.0, size=(k_ways * q_per_class, dim))
    episode = Episode(
        sample_X=sample_X,
        sample_labels=np.repeat(np.arange(k_ways), m_shots),
        query_X=query_X,
        query_labels=np.repeat(np.arange(k_ways), q_per_class),
        class_ids=np.arange(k_ways),
    )
    return model, episode


def min_query_gap(model: FewShotModel, episode: Episode) -> float:
    """Smallest margin between a query's two nearest prototypes."""
    D = episode_distances(model, episode)
    D_sorted = np.sort(D, axis=1)
    return float(np.min(D_sorted[:, 1] - D_sorted[:, 0]))


def normalized_classwise_grad(model: FewShotModel, episode: Episode,
                              k: int, alpha: float) -> np.ndarray:
    saved = model.head.alpha
    try:
        model.head.alpha = alpha
        grad = metric.classwise_grad(model, episode, k)
    finally:
        model.head.alpha = saved
    return grad.values / alpha


def limit_rel_errors(model: FewShotModel, episode: Episode, k: int,
                     alphas: Sequence[float], side: str) -> List[float]:
    """L2 relative error against the closed-form limit, one per alpha."""
    if side == "small":
        limit = metric.limit_grad_small_alpha(model, episode, k).values
    elif side == "large":
        limit = metric.limit_grad_large_alpha(model, episode, k).values
    else:
        raise ValueError(f"unknown side {side!r}")
    scale = np.linalg.norm(limit)
    if scale == 0.0:
        scale = 1.0
    out = []
    for alpha in alphas:
        g = normalized_classwise_grad(model, episode, k, alpha)
        out.append(float(np.linalg.norm(g - limit) / scale))
    return out


def lemma_report(n_trials: int, seed: int, gap: float = 0.1,
                 small_alphas: Sequence[float] = SMALL_ALPHAS,
                 large_alphas: Sequence[float] = LARGE_ALPHAS):
    """Per-trial relative-error rows (trial, alpha, side, rel_error).

    Small-side rows use every instance; large-side rows only instances
    whose per-query distance gaps meet the margin assumption.
    """
    rows = []
    trial = 0
    attempts = 0
    while trial < n_trials:
        model, episode = random_linear_instance(seed + attempts)
        attempts += 1
        if min_query_gap(model, episode) < gap:
            if attempts > 50 * n_trials:
                raise RuntimeError("could not find instances with the "
                                   "required distance gaps")
            continue
        k = trial % episode.n_ways
        for side, alphas in (("small", small_alphas), ("large", large_alphas)):
            for alpha, err in zip(alphas,
                                  limit_rel_errors(model, episode, k,
                                                   alphas, side)):
                rows.append((trial, alpha, side, err))
        trial += 1
    return rows
