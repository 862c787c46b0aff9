"""Shared fixtures: toy episodes, small models, and an on-disk image
dataset in the standard binary format (synthetic stand-in unless a real
directory is supplied via the TASKMETRIC_DATA environment variable).
"""

import os

import numpy as np
import pytest

from taskmetric.data import write_synthetic_cifar100
from taskmetric.embedding import ExtractorConfig
from taskmetric.episodes import Episode
from taskmetric.metric import ScaledMetricHead
from taskmetric.model import FewShotModel


def make_episode(k_ways=2, m_shots=1, q_per_class=2, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    return Episode(
        sample_X=rng.uniform(-1.0, 1.0, size=(k_ways * m_shots, dim)),
        sample_labels=np.repeat(np.arange(k_ways), m_shots),
        query_X=rng.uniform(-1.0, 1.0, size=(k_ways * q_per_class, dim)),
        query_labels=np.repeat(np.arange(k_ways), q_per_class),
        class_ids=np.arange(k_ways),
    )


def make_linear_model(dim=3, out_dim=3, seed=0, alpha=1.0,
                      kind="squared-euclidean", bias=False, weight_decay=0.0,
                      trainable=False):
    config = ExtractorConfig(kind="linear", input_shape=(dim,),
                             out_dim=out_dim, bias=bias,
                             weight_decay=weight_decay)
    model = FewShotModel.build(
        config, head=ScaledMetricHead(kind=kind, alpha=alpha,
                                      trainable=trainable), seed=seed)
    rng = np.random.default_rng(seed + 1)
    model.params.values[:] = rng.uniform(-1.0, 1.0, size=len(model.params))
    return model


@pytest.fixture(scope="session")
def cifar_dir(tmp_path_factory):
    """Directory holding train.bin/test.bin in the standard binary format."""
    override = os.environ.get("TASKMETRIC_DATA")
    if override and os.path.isfile(os.path.join(override, "train.bin")):
        return override
    path = tmp_path_factory.mktemp("cifar100")
    write_synthetic_cifar100(str(path), seed=0)
    return str(path)
