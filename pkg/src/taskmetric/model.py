"""Bundles an extractor, optional task conditioner, metric head, and
optional auxiliary classification head behind one flat parameter vector.
"""

from __future__ import annotations

from dataclasses import asdict
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .embedding import ExtractorConfig, TaskConditioner, build_extractor
from .metric import ScaledMetricHead
from .params import LayoutBuilder, NumpyView, ParameterVector, SegmentView


class FewShotModel:
    def __init__(self, extractor, head: ScaledMetricHead,
                 ten: Optional[TaskConditioner], params: ParameterVector,
                 aux_classes: Optional[int], seed: int):
        self.extractor = extractor
        self.head = head
        self.ten = ten
        self.params = params
        self.aux_classes = aux_classes
        self.seed = seed

    # ---- construction ----

    @classmethod
    def build(cls, extractor_config: ExtractorConfig,
              head: Optional[ScaledMetricHead] = None,
              use_ten: bool = False,
              aux_classes: Optional[int] = None,
              ten_l2: float = 0.01,
              seed: int = 0) -> "FewShotModel":
        head = head or ScaledMetricHead()
        rng = np.random.default_rng(seed)
        extractor = build_extractor(extractor_config)
        builder = LayoutBuilder()
        for name, values in extractor.init_params(rng):
            builder.add(f"ext.{name}", values)
        ten = None
        if use_ten:
            ten = TaskConditioner(extractor.out_dim,
                                  extractor.conditioned_widths, l2_post=ten_l2)
            for name, values in ten.init_params(rng):
                builder.add(name, values)
        if head.trainable:
            builder.add("log_alpha", np.log(head.alpha) * np.ones(()))
        if aux_classes is not None:
            d = extractor.out_dim
            builder.add("aux_w", rng.normal(0.0, 1.0 / np.sqrt(d),
                                            size=(aux_classes, d)))
            builder.add("aux_b", np.zeros(aux_classes))
        return cls(extractor, head, ten, builder.build(), aux_classes, seed)

    # ---- segment access ----

    def view(self, leaf: Optional[ad.Node] = None):
        if leaf is None:
            return NumpyView(self.params)
        return SegmentView(leaf, self.params.layout)

    def _ext_seg(self, view):
        return lambda name: view(f"ext.{name}")

    # ---- forward pieces ----

    def embed(self, view, X, film=None, bn_stats=None):
        return self.extractor.forward(self._ext_seg(view), X, film=film,
                                      bn_stats=bn_stats)

    def alpha_node(self, view):
        if self.head.trainable:
            return ad.exp(view("log_alpha"))
        return self.head.alpha

    def alpha_value(self) -> float:
        if self.head.trainable:
            return float(np.exp(self.params.get("log_alpha")))
        return self.head.alpha

    def set_alpha(self, alpha: float) -> None:
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.head.trainable:
            self.params.set("log_alpha", np.log(alpha))
        else:
            self.head.alpha = alpha

    def aux_logits(self, view, Z):
        if self.aux_classes is None:
            raise ValueError("model has no auxiliary head")
        return Z @ view("aux_w").T + view("aux_b")

    def penalty(self, view):
        """Weight decay on extractor weights plus post-multiplier penalties."""
        total = 0.0
        wd = self.extractor.config.weight_decay
        if wd:
            for name in self.extractor.weight_names:
                w = view(f"ext.{name}")
                total = total + wd * ad.vsum(w * w)
        if self.ten is not None:
            total = total + self.ten.post_multiplier_penalty(view)
        return total

    # ---- reporting ----

    def ten_magnitude_report(self) -> List[Tuple[float, float]]:
        """Per conditioned layer (|gamma0|, |beta0|), shallowest first."""
        if self.ten is None:
            raise ValueError("model has no task conditioner")
        out = []
        for i in range(len(self.ten.widths)):
            out.append((abs(float(self.params.get(f"ten{i}_g0"))),
                        abs(float(self.params.get(f"ten{i}_b0")))))
        return out

    # ---- serialization ----

    def config_dict(self) -> dict:
        return {
            "extractor": asdict(self.extractor.config),
            "head": {"kind": self.head.kind, "alpha": self.head.alpha,
                     "trainable": self.head.trainable},
            "use_ten": self.ten is not None,
            "ten_l2": self.ten.l2_post if self.ten is not None else 0.01,
            "aux_classes": self.aux_classes,
            "seed": self.seed,
        }

    @classmethod
    def from_config_dict(cls, cfg: dict) -> "FewShotModel":
        ext = dict(cfg["extractor"])
        for key in ("input_shape", "hidden"):
            if ext.get(key) is not None:
                ext[key] = tuple(ext[key])
        if ext.get("conditioned") is not None:
            ext["conditioned"] = tuple(bool(x) for x in ext["conditioned"])
        return cls.build(ExtractorConfig(**ext),
                         head=ScaledMetricHead(**cfg["head"]),
                         use_ten=cfg["use_ten"],
                         aux_classes=cfg["aux_classes"],
                         ten_l2=cfg.get("ten_l2", 0.01),
                         seed=cfg["seed"])
