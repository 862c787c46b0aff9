"""Dataset ingestion and persistence: the CIFAR-100 binary format, the
superclass-disjoint split used for few-shot evaluation, a synthetic
hierarchical-Gaussian benchmark with the same disjoint-superclass
structure, and model checkpoints.
"""

from __future__ import annotations

import json
import os
import tempfile
import zlib
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .model import FewShotModel
from .params import ParameterVector

RECORD_BYTES = 3074  # 1 coarse byte + 1 fine byte + 3*1024 pixel bytes

# Superclass membership of the 100 fine classes. Fine label indices follow
# the alphabetical order of the fine class names, as in the distributed
# binary files.
SUPERCLASS_MEMBERS: Dict[int, Tuple[str, ...]] = {
    0: ("beaver", "dolphin", "otter", "seal", "whale"),
    1: ("aquarium_fish", "flatfish", "ray", "shark", "trout"),
    2: ("orchid", "poppy", "rose", "sunflower", "tulip"),
    3: ("bottle", "bowl", "can", "cup", "plate"),
    4: ("apple", "mushroom", "orange", "pear", "sweet_pepper"),
    5: ("clock", "keyboard", "lamp", "telephone", "television"),
    6: ("bed", "chair", "couch", "table", "wardrobe"),
    7: ("bee", "beetle", "butterfly", "caterpillar", "cockroach"),
    8: ("bear", "leopard", "lion", "tiger", "wolf"),
    9: ("bridge", "castle", "house", "road", "skyscraper"),
    10: ("cloud", "forest", "mountain", "plain", "sea"),
    11: ("camel", "cattle", "chimpanzee", "elephant", "kangaroo"),
    12: ("fox", "porcupine", "possum", "raccoon", "skunk"),
    13: ("crab", "lobster", "snail", "spider", "worm"),
    14: ("baby", "boy", "girl", "man", "woman"),
    15: ("crocodile", "dinosaur", "lizard", "snake", "turtle"),
    16: ("hamster", "mouse", "rabbit", "shrew", "squirrel"),
    17: ("maple_tree", "oak_tree", "palm_tree", "pine_tree", "willow_tree"),
    18: ("bicycle", "bus", "motorcycle", "pickup_truck", "train"),
    19: ("lawn_mower", "rocket", "streetcar", "tank", "tractor"),
}

FINE_CLASS_NAMES: Tuple[str, ...] = tuple(sorted(
    name for members in SUPERCLASS_MEMBERS.values() for name in members))

FINE_TO_COARSE: np.ndarray = np.array([
    next(c for c, members in SUPERCLASS_MEMBERS.items() if name in members)
    for name in FINE_CLASS_NAMES])

TRAIN_SUPERCLASSES = frozenset({1, 2, 3, 4, 5, 6, 9, 10, 15, 17, 18, 19})
VAL_SUPERCLASSES = frozenset({8, 11, 13, 16})
TEST_SUPERCLASSES = frozenset({0, 7, 12, 14})


class FormatError(ValueError):
    """Malformed dataset file."""


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint."""


@dataclass
class LabeledStore:
    """Immutable labeled examples plus a fine-label index."""

    data: np.ndarray              # (N, ...) float32/float64
    fine: np.ndarray              # (N,) int
    coarse: np.ndarray            # (N,) int
    meta: dict = field(default_factory=dict)
    _index: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for label in np.unique(self.fine):
            self._index[int(label)] = np.flatnonzero(self.fine == label)

    @property
    def n_examples(self) -> int:
        return len(self.fine)

    def classes(self) -> np.ndarray:
        return np.asarray(sorted(self._index))

    def ids_for_class(self, fine_label: int) -> np.ndarray:
        return self._index[int(fine_label)]

    def batch(self, ids) -> np.ndarray:
        return np.asarray(self.data[np.asarray(ids)], dtype=np.float64)


@dataclass
class DatasetSplit:
    name: str
    class_ids: np.ndarray
    store: LabeledStore


def read_cifar_records(path: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode one CIFAR-100 binary file into (pixels, fine, coarse).

    Pixels come back as float32 in [0, 1], shaped (N, 3, 32, 32).
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % RECORD_BYTES:
        offset = raw.size - raw.size % RECORD_BYTES
        raise FormatError(
            f"{path}: size {raw.size} is not a multiple of {RECORD_BYTES} "
            f"(trailing bytes start at offset {offset})")
    records = raw.reshape(-1, RECORD_BYTES)
    coarse = records[:, 0].astype(np.int64)
    fine = records[:, 1].astype(np.int64)
    bad = np.flatnonzero(fine >= 100)
    if bad.size:
        raise FormatError(f"{path}: fine label {fine[bad[0]]} >= 100 at record {bad[0]}")
    bad = np.flatnonzero(coarse >= 20)
    if bad.size:
        raise FormatError(f"{path}: coarse label {coarse[bad[0]]} >= 20 at record {bad[0]}")
    pixels = records[:, 2:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return pixels, fine, coarse


def _area_downsample(x: np.ndarray, size: int) -> np.ndarray:
    n, c, h, w = x.shape
    f = h // size
    return x.reshape(n, c, size, f, size, f).mean(axis=(3, 5))


def load_cifar100(path: str, downsample_to: Optional[int] = None) -> LabeledStore:
    """Load train.bin + test.bin from a directory of CIFAR-100 binaries.

    Pixels are scaled to [0, 1] and standardized per channel with
    statistics computed over the train file only. ``downsample_to`` selects
    the desk-scale area-averaged variant (e.g. 8 for 8x8 images).
    """
    train = read_cifar_records(os.path.join(path, "train.bin"))
    test = read_cifar_records(os.path.join(path, "test.bin"))
    pixels = np.concatenate([train[0], test[0]])
    fine = np.concatenate([train[1], test[1]])
    coarse = np.concatenate([train[2], test[2]])
    mean = train[0].mean(axis=(0, 2, 3), keepdims=True)
    std = train[0].std(axis=(0, 2, 3), keepdims=True)
    pixels = (pixels - mean) / std
    if downsample_to is not None:
        pixels = _area_downsample(pixels, downsample_to)
    return LabeledStore(
        data=pixels.astype(np.float32), fine=fine, coarse=coarse,
        meta={"channel_mean": mean.ravel().tolist(),
              "channel_std": std.ravel().tolist(),
              "downsample_to": downsample_to})


def split_by_superclass(store: LabeledStore,
                        groups: Dict[str, frozenset]) -> Dict[str, DatasetSplit]:
    present = np.unique(store.coarse)
    needed = sorted(set().union(*groups.values()))
    missing = sorted(set(needed) - set(present.tolist()))
    if missing:
        raise ValueError(f"store is missing superclasses {missing}")
    fine_to_coarse = {}
    for f, c in zip(store.fine, store.coarse):
        prev = fine_to_coarse.setdefault(int(f), int(c))
        if prev != int(c):
            raise ValueError(f"fine label {f} maps to several superclasses")
    out = {}
    for name, supers in groups.items():
        class_ids = np.asarray(sorted(
            f for f, c in fine_to_coarse.items() if c in supers))
        out[name] = DatasetSplit(name=name, class_ids=class_ids, store=store)
    return out


def fc100_split(store: LabeledStore) -> Dict[str, DatasetSplit]:
    """Superclass-disjoint train/val/test splits of CIFAR-100 fine classes."""
    return split_by_superclass(store, {"train": TRAIN_SUPERCLASSES,
                                       "val": VAL_SUPERCLASSES,
                                       "test": TEST_SUPERCLASSES})


def export_split_manifest(splits: Dict[str, DatasetSplit], path: str) -> None:
    """One line per fine class: split_name,coarse_label,fine_label."""
    lines = []
    for name in ("train", "val", "test"):
        split = splits[name]
        for fine in split.class_ids:
            ids = split.store.ids_for_class(int(fine))
            coarse = int(split.store.coarse[ids[0]])
            lines.append(f"{name},{coarse},{int(fine)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---- synthetic benchmark ----

@dataclass
class SynthConfig:
    n_classes: int = 20
    n_superclasses: int = 4
    d_x: int = 16
    mean_scale: float = 1.0
    within_scale: float = 0.5
    samples_per_class: int = 50
    pre_scale: float = 1.0        # multiplies every example after sampling
    offset_scale: float = 0.0     # shared translation added to every example
    seed: int = 0

    def __post_init__(self):
        if self.n_classes <= 0 or self.n_superclasses <= 0 or self.d_x <= 0:
            raise ValueError("dimensions and counts must be positive")
        if self.samples_per_class <= 0:
            raise ValueError("samples_per_class must be positive")
        if self.n_classes % self.n_superclasses:
            raise ValueError("superclass count must divide class count")


def synth_dataset(config: SynthConfig,
                  rng: Optional[np.random.Generator] = None):
    """Hierarchical Gaussian classes, split superclass-disjointly.

    Class means are a superclass center plus a class offset; examples are
    isotropic Gaussians around the class mean. Returns (store, splits).
    """
    rng = rng or np.random.default_rng(config.seed)
    per_super = config.n_classes // config.n_superclasses
    offset = config.offset_scale * rng.normal(0.0, 1.0, size=config.d_x)
    centers = offset + rng.normal(0.0, config.mean_scale,
                                  size=(config.n_superclasses, config.d_x))
    X, fine, coarse = [], [], []
    for c in range(config.n_classes):
        s = c // per_super
        mean = centers[s] + rng.normal(0.0, config.mean_scale / 2, size=config.d_x)
        pts = mean + rng.normal(0.0, config.within_scale,
                                size=(config.samples_per_class, config.d_x))
        X.append(pts)
        fine.extend([c] * config.samples_per_class)
        coarse.extend([s] * config.samples_per_class)
    store = LabeledStore(
        data=(np.concatenate(X) * config.pre_scale).astype(np.float64),
        fine=np.asarray(fine), coarse=np.asarray(coarse),
        meta={"synth": True, "config": config.__dict__.copy()})
    s = config.n_superclasses
    n_val = max(1, s // 4)
    n_test = max(1, s // 4)
    n_train = s - n_val - n_test
    if n_train <= 0:
        raise ValueError("too few superclasses to split")
    supers = list(range(s))
    groups = {"train": frozenset(supers[:n_train]),
              "val": frozenset(supers[n_train:n_train + n_val]),
              "test": frozenset(supers[n_train + n_val:])}
    return store, split_by_superclass(store, groups)


def write_synthetic_cifar100(path: str, per_class_train: int = 20,
                             per_class_test: int = 4, seed: int = 0) -> None:
    """Write CIFAR-100-format binaries with synthetic, learnable pixels.

    Records are bit-exact format-wise (coarse byte, fine byte, 3072 pixel
    bytes) and use the real fine-to-superclass mapping; each fine class
    gets a random mean image so nearest-centroid structure exists.
    """
    rng = np.random.default_rng(seed)
    means = rng.integers(40, 216, size=(100, 3072))
    os.makedirs(path, exist_ok=True)
    for fname, per_class in (("train.bin", per_class_train),
                             ("test.bin", per_class_test)):
        records = []
        for fine in range(100):
            noise = rng.normal(0.0, 40.0, size=(per_class, 3072))
            pix = np.clip(means[fine] + noise, 0, 255).astype(np.uint8)
            head = np.tile(np.array([[FINE_TO_COARSE[fine], fine]],
                                    dtype=np.uint8), (per_class, 1))
            records.append(np.concatenate([head, pix], axis=1))
        all_records = np.concatenate(records)
        rng.shuffle(all_records, axis=0)
        atomic_write_bytes(os.path.join(path, fname), all_records.tobytes())


# ---- checkpoints ----

CHECKPOINT_MAGIC = b"TMCK"
CHECKPOINT_VERSION = 1


def atomic_write_bytes(path: str, payload: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def save_checkpoint(model: FewShotModel, path: str,
                    train_config: Optional[dict] = None) -> None:
    header = {
        "model": model.config_dict(),
        "segments": {name: [off, length, list(shape)]
                     for name, (off, length, shape)
                     in model.params.layout.segments.items()},
        "n_values": len(model.params),
        "train_config": train_config,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    body = (CHECKPOINT_MAGIC + bytes([CHECKPOINT_VERSION])
            + len(header_bytes).to_bytes(8, "little") + header_bytes
            + model.params.values.astype("<f8").tobytes())
    crc = zlib.crc32(body).to_bytes(4, "little")
    atomic_write_bytes(path, body + crc)


def load_checkpoint(path: str,
                    expect: Optional[FewShotModel] = None) -> FewShotModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 17 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if blob[4] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {blob[4]}")
    if zlib.crc32(blob[:-4]).to_bytes(4, "little") != blob[-4:]:
        raise CheckpointError(f"{path}: checksum mismatch")
    hlen = int.from_bytes(blob[5:13], "little")
    header = json.loads(blob[13:13 + hlen].decode())
    values = np.frombuffer(blob[13 + hlen:-4], dtype="<f8").astype(np.float64)
    if values.size != header["n_values"]:
        raise CheckpointError(f"{path}: value count mismatch")
    model = FewShotModel.from_config_dict(header["model"])
    if expect is not None and expect.config_dict() != header["model"]:
        raise CheckpointError(f"{path}: checkpoint config does not match model")
    model.params = ParameterVector(values.copy(), model.params.layout)
    return model


def checkpoint_train_config(path: str) -> Optional[dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    hlen = int.from_bytes(blob[5:13], "little")
    return json.loads(blob[13:13 + hlen].decode()).get("train_config")
