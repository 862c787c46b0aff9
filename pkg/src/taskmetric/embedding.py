"""Feature extractors with optional per-layer feature-wise affine
conditioning, and the task-conditioning network that predicts the
conditioning parameters from a task representation.

Three extractor kinds are provided: a linear map and an MLP for synthetic
vector data, and a miniature residual convolutional stack (blocks of three
3x3 conv layers with batch norm and swish, a 1x1 shortcut, 2x2 max-pool
after each block, filters doubling per block, global average pool at the
end) for image data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad


@dataclass
class ExtractorConfig:
    kind: str = "linear"                      # linear | mlp | mini-resnet
    input_shape: Tuple[int, ...] = (4,)
    out_dim: int = 4                          # linear / mlp output width
    hidden: Tuple[int, ...] = (16,)           # mlp hidden widths
    blocks: int = 2                           # mini-resnet
    depth: int = 3
    base_filters: int = 8
    bias: bool = True
    conditioned: Optional[Tuple[bool, ...]] = None  # None = condition all
    weight_decay: float = 5e-4

    def __post_init__(self):
        if self.kind not in ("linear", "mlp", "mini-resnet"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        if self.kind == "mini-resnet":
            if len(self.input_shape) != 3:
                raise ValueError("mini-resnet expects a (C, H, W) input shape")
            _, h, w = self.input_shape
            if h % (2 ** self.blocks) or w % (2 ** self.blocks):
                raise ValueError("input size must be divisible by 2**blocks")
        elif len(self.input_shape) != 1:
            raise ValueError(f"{self.kind} expects a flat input shape")


def film_apply(h, gamma, beta):
    """Channel-wise affine transform; broadcasts over spatial positions."""
    width = h.shape[1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ValueError("conditioning vectors do not match channel count")
    if len(h.shape) == 4:
        gamma = gamma.reshape(1, width, 1, 1)
        beta = beta.reshape(1, width, 1, 1)
    return gamma * h + beta


def identity_film(widths: Sequence[int]) -> List[Tuple[np.ndarray, np.ndarray]]:
    return [(np.ones(w), np.zeros(w)) for w in widths]


class Extractor:
    """Common surface: parameter init, conditioned widths, forward pass."""

    config: ExtractorConfig
    out_dim: int
    conditioned_widths: List[int]
    weight_names: List[str]       # segments subject to weight decay

    def init_params(self, rng: np.random.Generator):
        raise NotImplementedError

    def forward(self, seg, X: np.ndarray, film=None, bn_stats=None):
        raise NotImplementedError

    def _check_film(self, film):
        if film is None:
            return identity_film(self.conditioned_widths)
        if len(film) != len(self.conditioned_widths):
            raise ValueError("conditioning list does not match layer count")
        return film


class LinearExtractor(Extractor):
    def __init__(self, config: ExtractorConfig):
        self.config = config
        self.out_dim = config.out_dim
        self.conditioned_widths = []
        self.weight_names = ["w"]

    def init_params(self, rng):
        d_in, = self.config.input_shape
        scale = 1.0 / np.sqrt(d_in)
        out = [("w", rng.normal(0.0, scale, size=(self.out_dim, d_in)))]
        if self.config.bias:
            out.append(("b", np.zeros(self.out_dim)))
        return out

    def forward(self, seg, X, film=None, bn_stats=None):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1:] != self.config.input_shape:
            raise ValueError("input shape mismatch")
        self._check_film(film)
        z = X @ seg("w").T
        if self.config.bias:
            z = z + seg("b")
        return z


class MLPExtractor(Extractor):
    """Fully connected stack; hidden layers may be conditioned."""

    def __init__(self, config: ExtractorConfig):
        self.config = config
        self.out_dim = config.out_dim
        flags = config.conditioned or tuple(True for _ in config.hidden)
        if len(flags) != len(config.hidden):
            raise ValueError("conditioned flags do not match hidden layers")
        self.flags = flags
        self.conditioned_widths = [w for w, f in zip(config.hidden, flags) if f]
        dims = [config.input_shape[0], *config.hidden, config.out_dim]
        self.dims = dims
        self.weight_names = [f"l{i}_w" for i in range(len(dims) - 1)]

    def init_params(self, rng):
        out = []
        for i, (d_in, d_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            out.append((f"l{i}_w", rng.normal(0.0, np.sqrt(2.0 / d_in),
                                              size=(d_out, d_in))))
            if self.config.bias:
                out.append((f"l{i}_b", np.zeros(d_out)))
        return out

    def forward(self, seg, X, film=None, bn_stats=None):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1:] != self.config.input_shape:
            raise ValueError("input shape mismatch")
        film = self._check_film(film)
        h = X
        fi = 0
        n_hidden = len(self.dims) - 2
        for i in range(len(self.dims) - 1):
            h = h @ seg(f"l{i}_w").T
            if self.config.bias:
                h = h + seg(f"l{i}_b")
            if i < n_hidden:
                if self.flags[i]:
                    h = film_apply(h, *film[fi])
                    fi += 1
                h = ad.swish(h)
        return h


class MiniResNetExtractor(Extractor):
    """Residual conv stack at reduced width/depth; see module docstring."""

    BN_EPS = 1e-5

    def __init__(self, config: ExtractorConfig):
        self.config = config
        c_in, h, w = config.input_shape
        self.filters = [config.base_filters * 2 ** b for b in range(config.blocks)]
        self.out_dim = self.filters[-1]
        n_layers = config.blocks * config.depth
        flags = config.conditioned or tuple(True for _ in range(n_layers))
        if len(flags) != n_layers:
            raise ValueError("conditioned flags do not match conv layer count")
        self.flags = flags
        widths = []
        for b, f in enumerate(self.filters):
            widths.extend([f] * config.depth)
        self.conditioned_widths = [w_ for w_, fl in zip(widths, flags) if fl]
        self.weight_names = []
        for b in range(config.blocks):
            self.weight_names.extend(
                [f"b{b}c{i}_w" for i in range(config.depth)] + [f"b{b}sc_w"])

    def init_params(self, rng):
        cfg = self.config
        out = []
        c_in = cfg.input_shape[0]
        for b, f in enumerate(self.filters):
            prev = c_in
            for i in range(cfg.depth):
                fan_in = prev * 9
                out.append((f"b{b}c{i}_w",
                            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(f, prev, 3, 3))))
                out.append((f"b{b}c{i}_g", np.ones(f)))
                out.append((f"b{b}c{i}_b", np.zeros(f)))
                prev = f
            out.append((f"b{b}sc_w",
                        rng.normal(0.0, np.sqrt(2.0 / c_in), size=(f, c_in, 1, 1))))
            c_in = f
        return out

    def forward(self, seg, X, film=None, bn_stats=None):
        cfg = self.config
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1:] != cfg.input_shape:
            raise ValueError("input shape mismatch")
        film = self._check_film(film)
        h = X
        fi = 0
        li = 0
        for b in range(cfg.blocks):
            block_in = h
            for i in range(cfg.depth):
                h = ad.conv2d(h, seg(f"b{b}c{i}_w"), pad=1)
                stats = None if bn_stats is None else bn_stats[li]
                h = ad.batch_norm(h, seg(f"b{b}c{i}_g"), seg(f"b{b}c{i}_b"),
                                  eps=self.BN_EPS, stats=stats)
                if self.flags[li]:
                    h = film_apply(h, *film[fi])
                    fi += 1
                li += 1
                if i < cfg.depth - 1:
                    h = ad.swish(h)
            h = h + ad.conv2d(block_in, seg(f"b{b}sc_w"), pad=0)
            h = ad.swish(h)
            h = ad.maxpool2(h)
        return ad.global_avg_pool(h)


def build_extractor(config: ExtractorConfig) -> Extractor:
    cls = {"linear": LinearExtractor,
           "mlp": MLPExtractor,
           "mini-resnet": MiniResNetExtractor}[config.kind]
    return cls(config)


class TaskConditioner:
    """Predicts per-layer conditioning vectors from the task representation.

    Each conditioned layer gets two fully connected residual predictors
    (one for the scale vector, one for the shift): a projection from the
    task representation to the layer width, a residual layer at that
    width, and a zero-initialized linear output layer. Scalar
    post-multipliers gate each layer's conditioning:

        gamma = gamma0 * predictor_g(c) + 1
        beta  = beta0  * predictor_b(c)

    so gamma0 = beta0 = 0 forces exact identity conditioning.
    """

    def __init__(self, in_dim: int, widths: Sequence[int], l2_post: float = 0.01):
        self.in_dim = in_dim
        self.widths = list(widths)
        self.l2_post = l2_post

    def init_params(self, rng):
        out = []
        for i, w in enumerate(self.widths):
            for p in ("g", "b"):
                out.append((f"ten{i}{p}0_w",
                            rng.normal(0.0, np.sqrt(2.0 / self.in_dim),
                                       size=(w, self.in_dim))))
                out.append((f"ten{i}{p}0_b", np.zeros(w)))
                out.append((f"ten{i}{p}1_w",
                            rng.normal(0.0, np.sqrt(2.0 / w), size=(w, w))))
                out.append((f"ten{i}{p}1_b", np.zeros(w)))
                # zero-initialized output layer keeps early training in the
                # exact-identity regime
                out.append((f"ten{i}{p}2_w", np.zeros((w, w))))
                out.append((f"ten{i}{p}2_b", np.zeros(w)))
            out.append((f"ten{i}_g0", np.zeros(())))
            out.append((f"ten{i}_b0", np.zeros(())))
        return out

    def _predict(self, seg, i: int, p: str, c_bar):
        h = ad.swish(seg(f"ten{i}{p}0_w") @ c_bar + seg(f"ten{i}{p}0_b"))
        h = h + ad.swish(seg(f"ten{i}{p}1_w") @ h + seg(f"ten{i}{p}1_b"))
        return seg(f"ten{i}{p}2_w") @ h + seg(f"ten{i}{p}2_b")

    def predict(self, seg, c_bar):
        """FILM parameters for every conditioned layer, shallowest first."""
        if c_bar.shape != (self.in_dim,):
            raise ValueError("task representation width mismatch")
        out = []
        for i, w in enumerate(self.widths):
            gamma = seg(f"ten{i}_g0") * self._predict(seg, i, "g", c_bar) + 1.0
            beta = seg(f"ten{i}_b0") * self._predict(seg, i, "b", c_bar)
            out.append((gamma, beta))
        return out

    def post_multiplier_penalty(self, seg):
        total = 0.0
        for i in range(len(self.widths)):
            total = total + self.l2_post * (seg(f"ten{i}_g0") ** 2
                                            + seg(f"ten{i}_b0") ** 2)
        return total
