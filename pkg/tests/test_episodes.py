"""Episode sampling, prototypes, and the two-pass conditioned pipeline."""

import numpy as np
import pytest

from taskmetric.data import SynthConfig, synth_dataset
from taskmetric.embedding import ExtractorConfig
from taskmetric.episodes import (Episode, PrototypeSet, classify_query,
                                 compute_prototypes, run_episode,
                                 sample_episode)
from taskmetric.metric import ScaledMetricHead, distance
from taskmetric.model import FewShotModel
from tests.conftest import make_episode, make_linear_model


@pytest.fixture(scope="module")
def synth_splits():
    _, splits = synth_dataset(SynthConfig(n_classes=20, n_superclasses=4,
                                          d_x=8, within_scale=0.3,
                                          samples_per_class=30, seed=0))
    return splits


# ---- sampling ----

def test_sample_episode_counts(synth_splits):
    rng = np.random.default_rng(0)
    ep = sample_episode(synth_splits["train"], 5, 5, 2, rng)
    assert len(ep.sample_labels) == 25
    assert len(ep.query_labels) == 10
    assert len(np.unique(ep.class_ids)) == 5
    assert ep.n_ways == 5 and ep.n_shots == 5


def test_sample_episode_deterministic(synth_splits):
    a = sample_episode(synth_splits["train"], 3, 2, 2,
                       np.random.default_rng(7))
    b = sample_episode(synth_splits["train"], 3, 2, 2,
                       np.random.default_rng(7))
    np.testing.assert_array_equal(a.sample_X, b.sample_X)
    np.testing.assert_array_equal(a.class_ids, b.class_ids)


def test_sample_episode_sample_query_disjoint(synth_splits):
    split = synth_splits["train"]
    ep = sample_episode(split, 4, 3, 3, np.random.default_rng(1))
    # per class, the M + q drawn rows must be pairwise distinct records
    for k, cid in enumerate(ep.class_ids):
        rows_s = ep.sample_X[ep.sample_labels == k]
        rows_q = ep.query_X[ep.query_labels == k]
        rows = np.concatenate([rows_s, rows_q])
        assert len(np.unique(rows, axis=0)) == len(rows)


def test_sample_episode_insufficient_data(synth_splits):
    with pytest.raises(ValueError):
        sample_episode(synth_splits["val"], 6, 1, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_episode(synth_splits["val"], 2, 25, 25, np.random.default_rng(0))


def test_sample_episode_class_frequencies_uniform():
    _, splits = synth_dataset(SynthConfig(n_classes=60, n_superclasses=6,
                                          d_x=4, samples_per_class=6, seed=1))
    split = splits["train"]
    n_classes = len(split.class_ids)
    rng = np.random.default_rng(2)
    counts = np.zeros(100, dtype=int)
    n_eps, k = 10_000, 5
    for _ in range(n_eps):
        ep = sample_episode(split, k, 1, 1, rng)
        counts[ep.class_ids] += 1
    freq = counts[np.asarray(split.class_ids)]
    expect = n_eps * k / n_classes
    sigma = np.sqrt(n_eps * k * (1 / n_classes) * (1 - 1 / n_classes))
    assert np.all(np.abs(freq - expect) <= 3 * sigma)


def test_episode_validation():
    with pytest.raises(ValueError):
        Episode(sample_X=np.zeros((3, 2)), sample_labels=[0, 0, 1],
                query_X=np.zeros((1, 2)), query_labels=[0],
                class_ids=np.arange(2))
    with pytest.raises(ValueError):
        Episode(sample_X=np.zeros((2, 2)), sample_labels=[0, 1],
                query_X=np.zeros((1, 2)), query_labels=[5],
                class_ids=np.arange(2))


# ---- prototypes ----

def test_prototype_is_class_mean():
    Z = np.array([[0.0, 0.0], [2.0, 2.0], [4.0, 0.0]])
    ps = compute_prototypes(Z, np.array([0, 0, 1]), 2)
    np.testing.assert_array_equal(ps.prototypes[0], [1.0, 1.0])
    np.testing.assert_array_equal(ps.prototypes[1], [4.0, 0.0])


def test_task_repr_is_mean_of_prototypes():
    Z = np.array([[1.0, 1.0], [3.0, 3.0]])
    ps = compute_prototypes(Z, np.array([0, 1]), 2)
    np.testing.assert_array_equal(ps.task_repr, [2.0, 2.0])


def test_prototypes_order_invariant():
    rng = np.random.default_rng(3)
    Z = rng.normal(size=(6, 3))
    labels = np.array([0, 1, 2, 0, 1, 2])
    perm = rng.permutation(6)
    a = compute_prototypes(Z, labels, 3)
    b = compute_prototypes(Z[perm], labels[perm], 3)
    np.testing.assert_allclose(a.prototypes, b.prototypes, atol=1e-12)


def test_prototypes_reject_empty_class():
    with pytest.raises(ValueError):
        compute_prototypes(np.zeros((2, 2)), np.array([0, 0]), 2)


# ---- the conditioned pipeline ----

def test_no_conditioner_equals_plain_prototype_classification():
    model = make_linear_model(dim=4, out_dim=3, seed=1)
    episode = make_episode(k_ways=3, m_shots=2, q_per_class=2, dim=4, seed=1)
    result = run_episode(model, episode)
    # independent single-pass reference
    W = model.params.get("ext.w")
    zs, zq = episode.sample_X @ W.T, episode.query_X @ W.T
    protos = compute_prototypes(zs, episode.sample_labels, 3).prototypes
    D = np.array([[float(distance(model.head.kind, z, c)) for c in protos]
                  for z in zq])
    np.testing.assert_array_equal(result.predictions, np.argmin(D, axis=1))


def test_closed_gate_conditioner_matches_plain_model_exactly():
    cfg = ExtractorConfig(kind="mlp", input_shape=(4,), hidden=(5,),
                          out_dim=3, weight_decay=0.0)
    plain = FewShotModel.build(cfg, use_ten=False, seed=9)
    gated = FewShotModel.build(cfg, use_ten=True, seed=9)
    episode = make_episode(k_ways=3, m_shots=2, q_per_class=2, dim=4, seed=9)
    a, b = run_episode(plain, episode), run_episode(gated, episode)
    assert a.loss == b.loss
    np.testing.assert_array_equal(a.probabilities, b.probabilities)
    np.testing.assert_array_equal(a.predictions, b.predictions)


def test_trained_model_solves_separable_episode():
    # classes separated far beyond the within-class noise: nearest-prototype
    # classification under the identity map is already perfect
    model = make_linear_model(dim=2, out_dim=2, seed=0)
    model.params.set("ext.w", np.eye(2))
    rng = np.random.default_rng(0)
    centers = np.array([[0.0, 0.0], [10.0, 10.0]])
    sample = np.repeat(centers, 2, axis=0) + rng.normal(0, 0.1, size=(4, 2))
    query = np.repeat(centers, 3, axis=0) + rng.normal(0, 0.1, size=(6, 2))
    episode = Episode(sample_X=sample, sample_labels=[0, 0, 1, 1],
                      query_X=query, query_labels=[0, 0, 0, 1, 1, 1],
                      class_ids=np.arange(2))
    assert run_episode(model, episode).accuracy == 1.0


def test_class_relabeling_permutes_predictions():
    model = make_linear_model(dim=4, out_dim=3, seed=12)
    episode = make_episode(k_ways=3, m_shots=2, q_per_class=2, dim=4, seed=12)
    perm = np.array([2, 0, 1])      # new label of old class k is perm[k]
    permuted = Episode(sample_X=episode.sample_X,
                       sample_labels=perm[episode.sample_labels],
                       query_X=episode.query_X,
                       query_labels=perm[episode.query_labels],
                       class_ids=episode.class_ids[np.argsort(perm)])
    a, b = run_episode(model, episode), run_episode(model, permuted)
    np.testing.assert_array_equal(perm[a.predictions], b.predictions)
    assert a.loss == pytest.approx(b.loss, rel=1e-12)


def test_predictions_invariant_to_temperature():
    episode = make_episode(k_ways=3, m_shots=2, q_per_class=3, dim=4, seed=13)
    preds = []
    for alpha in (0.05, 1.0, 50.0):
        model = make_linear_model(dim=4, out_dim=3, seed=13, alpha=alpha)
        preds.append(run_episode(model, episode).predictions)
    np.testing.assert_array_equal(preds[0], preds[1])
    np.testing.assert_array_equal(preds[1], preds[2])


# ---- query classification ----

def test_classify_query_picks_nearest_prototype():
    protos = PrototypeSet(prototypes=np.array([[0.0, 0.0], [5.0, 5.0],
                                               [9.0, 0.0]]),
                          task_repr=np.zeros(2))
    pred, probs = classify_query(protos, np.array([5.1, 4.9]),
                                 ScaledMetricHead(alpha=1.0))
    assert pred == 1
    assert probs.argmax() == 1


def test_classify_query_tie_breaks_to_lowest_index():
    protos = PrototypeSet(prototypes=np.array([[1.0, 0.0], [-1.0, 0.0]]),
                          task_repr=np.zeros(2))
    pred, probs = classify_query(protos, np.array([0.0, 3.0]),
                                 ScaledMetricHead(alpha=1.0))
    assert pred == 0
    np.testing.assert_allclose(probs, [0.5, 0.5])


def test_classify_query_matches_linear_scan():
    rng = np.random.default_rng(4)
    head = ScaledMetricHead(alpha=2.0)
    for _ in range(50):
        protos = PrototypeSet(prototypes=rng.normal(size=(4, 3)),
                              task_repr=np.zeros(3))
        z = rng.normal(size=3)
        pred, _ = classify_query(protos, z, head)
        dists = [float(distance(head.kind, z, c)) for c in protos.prototypes]
        assert pred == int(np.argmin(dists))
