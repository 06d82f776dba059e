"""Synthetic distribution-classification images built from a texture bank.

Each class is a mixture of Dirichlet distributions over the M textures.
An image starts as a mid-gray canvas; repeatedly a location is chosen, a
blend vector ``pi`` is drawn from the class mixture, one random crop is
taken from every texture, and the blended patch ``sum_j pi_j * crop_j``
replaces the canvas pixels at that location.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import gaussian_filter

from .tensor import F32, F64, Rng, derive_seed, load_tensor, save_tensor


class DataError(Exception):
    """Missing or malformed dataset / texture input."""


@dataclass
class TextureBank:
    textures: np.ndarray  # (M, 3, H, W), values in [0, 1]
    source: str = "procedural"

    def __post_init__(self):
        t = np.asarray(self.textures)
        if t.ndim != 4 or t.shape[1] != 3:
            raise ValueError(f"textures must be (M, 3, H, W), got {t.shape}")
        if t.shape[0] < 2:
            raise ValueError("a texture bank needs at least two textures")
        if t.min() < 0 or t.max() > 1:
            raise ValueError("texture values must lie in [0, 1]")
        self.textures = t

    @property
    def M(self) -> int:
        return self.textures.shape[0]


def _hsv_to_rgb(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return np.array([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i])


def _procedural_texture(rng: Rng, size: int, hue: float) -> np.ndarray:
    gen = rng.generator
    yy, xx = np.mgrid[0:size, 0:size] / size
    field_ = np.zeros((size, size))
    for _ in range(2):
        theta = gen.uniform(0, np.pi)
        freq = gen.uniform(2, 10)
        phase = gen.uniform(0, 2 * np.pi)
        field_ += gen.uniform(0.3, 1.0) * np.sin(
            2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    noise = gaussian_filter(gen.standard_normal((size, size)), gen.uniform(0.7, 3.0), mode="wrap")
    field_ += gen.uniform(0.5, 1.5) * noise / (noise.std() + 1e-12)
    field_ = (field_ - field_.min()) / (np.ptp(field_) + 1e-12)

    # colour map: dark and light tone of a texture-specific hue
    sat = gen.uniform(0.5, 0.95)
    lo = gen.uniform(0.35, 0.6)
    c0 = _hsv_to_rgb(hue % 1.0, sat, lo)
    c1 = _hsv_to_rgb((hue + gen.uniform(-0.03, 0.03)) % 1.0, sat * gen.uniform(0.6, 1.0),
                     lo + gen.uniform(0.25, 0.4))
    rgb = c0[:, None, None] * (1 - field_)[None] + c1[:, None, None] * field_[None]
    return np.clip(rgb, 0.0, 1.0)


def procedural_bank(rng: Rng, M: int, size: int = 64) -> TextureBank:
    """M textures of oriented gratings plus filtered noise under random colour maps.

    Hues are spread over the colour wheel (with jitter) so textures stay
    visually distinct; each texture uses its own derived stream.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    gen = rng.generator
    hues = (np.arange(M) + gen.uniform(0, 0.5, M)) / M
    hues = hues[gen.permutation(M)]
    textures = np.stack([_procedural_texture(rng.spawn("texture", i), size, hues[i])
                         for i in range(M)])
    return TextureBank(textures, "procedural")


def load_bank_dir(directory) -> TextureBank:
    """Load every ``*.dmmt`` RGB tensor (3 x H x W, values in [0,1]) in a directory."""
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"texture directory not found: {d}")
    files = sorted(d.glob("*.dmmt"))
    if len(files) < 2:
        raise DataError(f"texture directory {d} holds fewer than two .dmmt textures")
    try:
        textures = [load_tensor(f).astype(F64) for f in files]
        return TextureBank(np.stack(textures), f"dir:{d}")
    except (ValueError, OSError) as err:
        raise DataError(f"unreadable texture bank {d}: {err}") from err


@dataclass
class ClassSpec:
    weights: np.ndarray          # (K_mix,) on the simplex
    concentrations: np.ndarray   # (K_mix, M), all > 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=F64)
        self.concentrations = np.asarray(self.concentrations, dtype=F64)
        if abs(self.weights.sum() - 1) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.concentrations <= 0):
            raise ValueError("Dirichlet concentrations must be positive")

    def mean_proportions(self) -> np.ndarray:
        """Expected texture proportions: sum_k w_k * alpha_k / |alpha_k|_1."""
        a = self.concentrations
        return self.weights @ (a / a.sum(axis=1, keepdims=True))

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(), "concentrations": self.concentrations.tolist()}


def sample_class_specs(rng: Rng, class_count: int, M: int, K_mix: int,
                       support: int | None = None, min_l1: float = 0.1,
                       max_tries: int = 1000) -> list[ClassSpec]:
    """Random sparse Dirichlet mixtures, redrawn until every pair of classes
    differs by more than ``min_l1`` in expected texture proportions."""
    if min(class_count, M, K_mix) < 1:
        raise ValueError("class_count, M and K_mix must be >= 1")
    support = support or int(np.ceil(M / 10))
    gen = rng.generator
    for _ in range(max_tries):
        specs = []
        for _c in range(class_count):
            weights = gen.dirichlet(np.ones(K_mix))
            weights = weights / weights.sum()
            conc = np.full((K_mix, M), 0.01)
            for k in range(K_mix):
                conc[k, gen.choice(M, support, replace=False)] = 1.0
            specs.append(ClassSpec(weights, conc))
        means = [s.mean_proportions() for s in specs]
        if all(np.abs(means[i] - means[j]).sum() > min_l1
               for i in range(class_count) for j in range(i + 1, class_count)):
            return specs
    raise RuntimeError(f"could not separate {class_count} classes in {max_tries} draws")


@dataclass
class SynthConfig:
    image_size: int = 60
    patch_size: int = 12
    patches_per_image: int = 400
    classes: int = 4
    train_per_class: int = 10
    val_per_class: int = 0
    test_per_class: int = 100
    textures: int = 16
    mixture_components: int = 8
    texture_size: int = 64
    master_seed: int = 0
    bank: str = "procedural"

    def __post_init__(self):
        if self.patch_size > self.image_size:
            raise ValueError("patch size exceeds image size")
        if self.patch_size > self.texture_size:
            raise ValueError("patch size exceeds texture size")
        for name in ("image_size", "patch_size", "classes", "train_per_class",
                     "test_per_class", "textures", "mixture_components", "texture_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.patches_per_image < 0 or self.val_per_class < 0:
            raise ValueError("counts must be non-negative")

    @classmethod
    def desk(cls, **kw) -> "SynthConfig":
        return cls(**kw)

    @classmethod
    def paper(cls, **kw) -> "SynthConfig":
        base = dict(image_size=120, patch_size=12, patches_per_image=1500, classes=8,
                    train_per_class=100, test_per_class=500, textures=112,
                    mixture_components=30, texture_size=128)
        base.update(kw)
        return cls(**base)


def draw_blend(rng: Rng, spec: ClassSpec) -> np.ndarray:
    """One blend vector ``pi`` from the class mixture."""
    gen = rng.generator
    k = gen.choice(spec.weights.size, p=spec.weights)
    pi = gen.dirichlet(spec.concentrations[k])
    return pi / pi.sum()


def render_image(rng: Rng, bank: TextureBank, spec: ClassSpec, config: SynthConfig,
                 chunk: int = 128) -> np.ndarray:
    s, p = config.image_size, config.patch_size
    t = bank.textures
    if p > t.shape[2] or p > t.shape[3]:
        raise ValueError("textures are smaller than the patch size")
    gen = rng.generator
    canvas = np.full((3, s, s), 0.5)
    crops = sliding_window_view(t, (p, p), axis=(2, 3))  # (M, 3, H-p+1, W-p+1, p, p)
    M = bank.M
    remaining = config.patches_per_image
    while remaining > 0:
        n = min(chunk, remaining)
        remaining -= n
        locs = gen.integers(0, s - p + 1, size=(n, 2))
        comps = gen.choice(spec.weights.size, size=n, p=spec.weights)
        pis = np.stack([gen.dirichlet(spec.concentrations[k]) for k in comps])
        pis /= pis.sum(axis=1, keepdims=True)
        cy = gen.integers(0, t.shape[2] - p + 1, size=(n, M))
        cx = gen.integers(0, t.shape[3] - p + 1, size=(n, M))
        picked = crops[np.arange(M)[None, :], :, cy, cx]  # (n, M, 3, p, p)
        blends = np.einsum("nm,nmcij->ncij", pis, picked)
        for (y, x), patch in zip(locs, blends):
            canvas[:, y:y + p, x:x + p] = patch
    return np.clip(canvas, 0.0, 1.0)


@dataclass
class Split:
    images: np.ndarray   # (N, 3, s, s) float32
    labels: np.ndarray   # (N,) int64 class ids, or (N, K) regression targets

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset_per_class(self, count: int) -> "Split":
        """First ``count`` images of every class, original order kept."""
        keep = np.concatenate([np.flatnonzero(self.labels == c)[:count]
                               for c in np.unique(self.labels)])
        keep.sort()
        return Split(self.images[keep], self.labels[keep])


@dataclass
class Dataset:
    config: SynthConfig
    train: Split
    test: Split
    val: Split | None = None
    class_specs: list[ClassSpec] = field(default_factory=list)
    bank_source: str = "procedural"

    def manifest(self) -> dict:
        return {
            "config": asdict(self.config),
            "master_seed": self.config.master_seed,
            "bank_source": self.bank_source,
            "class_specs": [s.to_json() for s in self.class_specs],
            "counts": {name: np.bincount(split.labels, minlength=self.config.classes).tolist()
                       for name, split in self.splits().items()},
        }

    def splits(self) -> dict[str, Split]:
        out = {"train": self.train}
        if self.val is not None:
            out["val"] = self.val
        out["test"] = self.test
        return out


def make_bank(config: SynthConfig) -> TextureBank:
    if config.bank == "procedural":
        return procedural_bank(Rng(derive_seed(config.master_seed, "bank")),
                               config.textures, config.texture_size)
    return load_bank_dir(config.bank)


def generate_dataset(config: SynthConfig, bank: TextureBank | None = None) -> Dataset:
    """Render every split. Image ``i`` of split ``name`` uses its own derived
    stream, so the result does not depend on generation order."""
    bank = bank if bank is not None else make_bank(config)
    specs = sample_class_specs(Rng(derive_seed(config.master_seed, "classes")),
                               config.classes, bank.M, config.mixture_components)
    counts = {"train": config.train_per_class, "val": config.val_per_class,
              "test": config.test_per_class}
    splits = {}
    for name, per_class in counts.items():
        if per_class == 0:
            continue
        labels = np.tile(np.arange(config.classes), per_class)
        images = np.empty((labels.size, 3, config.image_size, config.image_size), dtype=F32)
        for i, label in enumerate(labels):
            rng = Rng(derive_seed(config.master_seed, "image", name, i))
            images[i] = render_image(rng, bank, specs[label], config)
        splits[name] = Split(images, labels.astype(np.int64))
    return Dataset(config, splits["train"], splits["test"], splits.get("val"), specs, bank.source)


def save_dataset(directory, dataset: Dataset) -> Path:
    """Write one tensor file per image plus ``manifest.txt`` (path, class id)
    and ``manifest.json`` (config, seed, class specs). Returns the manifest path."""
    d = Path(directory)
    lines = []
    for name, split in dataset.splits().items():
        (d / name).mkdir(parents=True, exist_ok=True)
        for i, (img, label) in enumerate(zip(split.images, split.labels)):
            rel = f"{name}/{i:06d}.dmmt"
            save_tensor(d / rel, img)
            lines.append(f"{rel} {int(label)}")
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    (d / "manifest.json").write_text(json.dumps(dataset.manifest(), indent=2, sort_keys=True) + "\n")
    return d / "manifest.txt"


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    if not (d / "manifest.txt").is_file() or not (d / "manifest.json").is_file():
        raise DataError(f"no dataset manifest in {d}")
    meta = json.loads((d / "manifest.json").read_text())
    grouped: dict[str, tuple[list, list]] = {}
    for line in (d / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        rel, label = line.rsplit(" ", 1)
        split = rel.split("/", 1)[0]
        imgs, labels = grouped.setdefault(split, ([], []))
        try:
            imgs.append(load_tensor(d / rel))
        except (OSError, ValueError) as err:
            raise DataError(f"cannot read {d / rel}: {err}") from err
        labels.append(int(label))
    splits = {k: Split(np.stack(v[0]), np.array(v[1], dtype=np.int64)) for k, v in grouped.items()}
    if "train" not in splits or "test" not in splits:
        raise DataError(f"dataset {d} lacks a train or test split")
    specs = [ClassSpec(np.array(s["weights"]), np.array(s["concentrations"]))
             for s in meta["class_specs"]]
    return Dataset(SynthConfig(**meta["config"]), splits["train"], splits["test"],
                   splits.get("val"), specs, meta["bank_source"])


def color_histograms(images, levels: int = 4) -> np.ndarray:
    """Normalised joint RGB histograms with ``levels**3`` bins per image."""
    images = np.asarray(images)
    q = np.minimum((images * levels).astype(np.int64), levels - 1)
    codes = (q[:, 0] * levels + q[:, 1]) * levels + q[:, 2]
    codes = codes.reshape(images.shape[0], -1)
    hist = np.stack([np.bincount(c, minlength=levels**3) for c in codes]).astype(F64)
    return hist / hist.sum(axis=1, keepdims=True)
