"""Episodic SGD training with auxiliary-task co-training, the annealing
schedules that govern it, the evaluation protocol, and the temperature
sweep used for cross-validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .data import DatasetSplit, atomic_write_text
from .episodes import episode_loss_node, episode_forward, sample_episode
from .gradcheck import value_and_grad
from .metric import distance_matrix
from .model import FewShotModel


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


# Supplementary defaults: tasks per batch and query images per task are
# cross-validated per shot count.
SHOT_DEFAULTS = {1: (5, 12), 5: (2, 32), 10: (1, 64)}


@dataclass
class TrainConfig:
    k_ways: int = 5
    m_shots: int = 5
    tasks_per_batch: int = 2
    queries_per_task: int = 32
    total_episodes: int = 10000
    learning_rate: float = 0.1
    momentum: float = 0.9
    aux_enabled: bool = False
    aux_p0: float = 0.9
    aux_decay_steps: int = 20
    aux_batch_size: int = 64
    eval_every: int = 200
    eval_tasks: int = 50
    patience: int = 0             # eval points without improvement; 0 = off
    seed: int = 0

    def __post_init__(self):
        if self.total_episodes <= 0:
            raise ValueError("total_episodes must be positive")
        if not (0.0 < self.aux_p0 <= 1.0):
            raise ValueError("aux_p0 must be in (0, 1]")
        if self.tasks_per_batch < 1:
            raise ValueError("tasks_per_batch must be >= 1")
        if self.k_ways < 2:
            raise ValueError("k_ways must be >= 2")
        if self.m_shots < 1:
            raise ValueError("m_shots must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")

    @property
    def q_per_class(self) -> int:
        return max(1, self.queries_per_task // self.k_ways)

    @classmethod
    def for_shots(cls, m_shots: int, **kwargs) -> "TrainConfig":
        tasks, queries = SHOT_DEFAULTS.get(m_shots, (2, 32))
        kwargs.setdefault("tasks_per_batch", tasks)
        kwargs.setdefault("queries_per_task", queries)
        return cls(m_shots=m_shots, **kwargs)


@dataclass
class LogRow:
    t: int
    train_loss: float
    val_acc: float
    val_ci: float
    lr: float
    aux_p: float


@dataclass
class MetricsLog:
    rows: List[LogRow] = field(default_factory=list)

    def append(self, row: LogRow) -> None:
        if self.rows and row.t <= self.rows[-1].t:
            raise ValueError("episode indices must be increasing")
        self.rows.append(row)

    def to_csv(self, path: str) -> None:
        lines = ["t,train_loss,val_acc,val_ci,lr,aux_p"]
        for r in self.rows:
            lines.append(f"{r.t},{r.train_loss:.6f},{r.val_acc:.6f},"
                         f"{r.val_ci:.6f},{r.lr:.6g},{r.aux_p:.6g}")
        atomic_write_text(path, "\n".join(lines) + "\n")


def aux_probability(t: int, total: int, p0: float = 0.9,
                    decay_steps: int = 20) -> float:
    """Auxiliary-task selection probability p0 * 0.9^floor(decay_steps*t/T)."""
    if not 0 <= t < total:
        raise ValueError("episode index out of range")
    return p0 * 0.9 ** math.floor(decay_steps * t / total)


def learning_rate(t: int, total: int, lr0: float) -> float:
    """Annealed by 10x halfway through, then twice more every 2500 episodes."""
    if not 0 <= t < total:
        raise ValueError("episode index out of range")
    half = total // 2
    if t < half:
        return lr0
    if t < half + 2500:
        return lr0 / 10.0
    if t < half + 5000:
        return lr0 / 100.0
    return lr0 / 1000.0


class SgdMomentum:
    def __init__(self, size: int, momentum: float):
        self.momentum = momentum
        self.velocity = np.zeros(size)

    def step(self, params, grad: np.ndarray, lr: float) -> None:
        self.velocity = self.momentum * self.velocity + grad
        params.values -= lr * self.velocity


def _aux_loss_program(model: FewShotModel, X: np.ndarray, y: np.ndarray):
    onehot = np.eye(model.aux_classes)[y]

    def program(sv):
        z = model.embed(sv, X)   # identity conditioning: no task exists yet
        logits = model.aux_logits(sv, z)
        lse = ad.logsumexp(logits, axis=1)
        correct = ad.vsum(logits * onehot, axis=1)
        return ad.vmean(lse - correct) + model.penalty(sv)

    return program


def _episodic_loss_program(model: FewShotModel, batch):
    def program(sv):
        loss = 0.0
        for episode in batch:
            loss = loss + episode_loss_node(model, sv, episode,
                                            include_penalty=False)
        return loss / float(len(batch)) + model.penalty(sv)

    return program


def evaluate(model: FewShotModel, split: DatasetSplit, k_ways: int,
             m_shots: int, n_tasks: int = 500, n_queries: int = 100,
             restarts: int = 1, rng: Optional[np.random.Generator] = None
             ) -> Tuple[float, float, np.ndarray]:
    """Mean task accuracy with a 95% confidence interval (1.96 * stderr)."""
    rng = rng or np.random.default_rng(0)
    q_per_class = max(1, n_queries // k_ways)
    accs = []
    for _ in range(restarts):
        for _ in range(n_tasks):
            episode = sample_episode(split, k_ways, m_shots, q_per_class, rng)
            protos, z_q, _ = episode_forward(model, model.view(), episode)
            preds = np.argmin(distance_matrix(model.head.kind, z_q, protos),
                              axis=1)
            accs.append(float(np.mean(preds == episode.query_labels)))
    accs = np.asarray(accs)
    ci = 1.96 * accs.std(ddof=1) / np.sqrt(len(accs)) if len(accs) > 1 else 0.0
    return float(accs.mean()), float(ci), accs


def train(model: FewShotModel, config: TrainConfig, train_split: DatasetSplit,
          val_split: DatasetSplit,
          rng: Optional[np.random.Generator] = None,
          progress: Optional[Callable[[int, float], None]] = None
          ) -> Tuple[FewShotModel, MetricsLog]:
    """Run the episodic/auxiliary co-training loop.

    Returns the model carrying the best-validation parameters seen
    (early stopping) and the metrics log.
    """
    rng = rng or np.random.default_rng(config.seed)
    if config.aux_enabled:
        if model.aux_classes is None:
            raise ValueError("aux co-training needs a model with an aux head")
        aux_class_ids = np.asarray(sorted(int(c) for c in train_split.class_ids))
        if model.aux_classes != len(aux_class_ids):
            raise ValueError("aux head width does not cover the train classes")
        aux_remap = {int(c): i for i, c in enumerate(aux_class_ids)}
        aux_pool = np.concatenate(
            [train_split.store.ids_for_class(int(c)) for c in aux_class_ids])
    optimizer = SgdMomentum(len(model.params), config.momentum)
    log = MetricsLog()
    best_acc, best_params = -1.0, model.params.copy()
    stale = 0
    for t in range(config.total_episodes):
        lr = learning_rate(t, config.total_episodes, config.learning_rate)
        aux_p = (aux_probability(t, config.total_episodes, config.aux_p0,
                                 config.aux_decay_steps)
                 if config.aux_enabled else 0.0)
        if config.aux_enabled and rng.random() < aux_p:
            ids = rng.choice(aux_pool, size=config.aux_batch_size, replace=False)
            X = train_split.store.batch(ids)
            y = np.asarray([aux_remap[int(f)] for f in train_split.store.fine[ids]])
            program = _aux_loss_program(model, X, y)
        else:
            batch = [sample_episode(train_split, config.k_ways, config.m_shots,
                                    config.q_per_class, rng)
                     for _ in range(config.tasks_per_batch)]
            program = _episodic_loss_program(model, batch)
        try:
            loss, grad = value_and_grad(program, model.params)
        except ad.NumericalError as err:
            raise TrainingDivergedError(t, str(err)) from err
        if not np.isfinite(loss):
            raise TrainingDivergedError(t, "non-finite loss")
        optimizer.step(model.params, grad.values, lr)
        if progress is not None:
            progress(t, loss)
        last = t == config.total_episodes - 1
        if t % config.eval_every == config.eval_every - 1 or last:
            val_rng = np.random.default_rng((config.seed, t))
            acc, ci, _ = evaluate(model, val_split, config.k_ways,
                                  config.m_shots, n_tasks=config.eval_tasks,
                                  n_queries=config.queries_per_task,
                                  rng=val_rng)
            log.append(LogRow(t=t, train_loss=float(loss), val_acc=acc,
                              val_ci=ci, lr=lr, aux_p=aux_p))
            if acc > best_acc:
                best_acc, best_params = acc, model.params.copy()
                stale = 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    break
    model.params = best_params
    return model, log


def sweep_alpha(make_model: Callable[[float], FewShotModel],
                config: TrainConfig, train_split: DatasetSplit,
                val_split: DatasetSplit, grid: Sequence[float],
                n_eval_tasks: int = 500,
                train_each: bool = True) -> List[Tuple[float, float, float]]:
    """Validation accuracy per temperature; returns (alpha, acc, ci) rows.

    With ``train_each`` a fresh model is trained per grid point under the
    same config and seed; otherwise the freshly built model is evaluated
    as-is (cheap mode).
    """
    if not grid or any(a <= 0 for a in grid):
        raise ValueError("grid must be nonempty with positive temperatures")
    rows = []
    for alpha in grid:
        model = make_model(alpha)
        if train_each:
            model, _ = train(model, config, train_split, val_split)
        acc, ci, _ = evaluate(model, val_split, config.k_ways, config.m_shots,
                              n_tasks=n_eval_tasks,
                              n_queries=config.queries_per_task,
                              rng=np.random.default_rng(config.seed))
        rows.append((float(alpha), acc, ci))
    return rows


def sweep_argmax(rows: Sequence[Tuple[float, float, float]]) -> Tuple[float, float, float]:
    return max(rows, key=lambda r: r[1])
