"""Image augmentation strategies that mix pixels and labels together.

Four strategies: standard crop/flip, cutout (regional fill), mixup (convex
blend of two images and their labels), and cutmix (rectangular paste with
labels mixed by the exact retained-pixel fraction).  Every operation takes an
explicit numpy Generator, so a fixed seed gives a bitwise-fixed output.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LabeledImage:
    """Pixels [channels, H, W] in [0,1] plus a label distribution over classes."""

    pixels: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        self.label = np.asarray(self.label)
        if self.pixels.ndim != 3:
            raise ValueError(f"pixels must be [channels, H, W], got shape {self.pixels.shape}")
        if self.label.ndim != 1:
            raise ValueError(f"label must be a flat distribution, got shape {self.label.shape}")


@dataclass
class MixSpec:
    """Record of one mixing event: the mixing weight toward the first image,
    the partner drawn from the batch, and (for cutmix) the binary [H, W] mask
    of pixels taken from the partner."""

    lam: float
    partner_index: int = -1
    mask: np.ndarray | None = None


STRATEGY_KINDS = ("none", "standard", "cutout", "mixup", "cutmix")

# fill=None means "use the per-channel dataset mean if the caller knows it,
# else 0.5"; size_jitter draws each hole side from [hole_size/2, hole_size].
_STRATEGY_DEFAULTS: dict[str, dict] = {
    "none": {},
    "standard": {"pad": 2},
    "cutout": {"n_holes": 16, "hole_size": 3, "fill": None, "size_jitter": True},
    "mixup": {"beta_alpha": 1.0},
    "cutmix": {"beta_a": 1.0, "beta_b": 1.0},
}


@dataclass
class AugmentStrategy:
    """A strategy kind plus its (fully defaulted) parameter set."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}; choose from {STRATEGY_KINDS}")
        defaults = _STRATEGY_DEFAULTS[self.kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"strategy {self.kind!r} does not take params {sorted(unknown)}")
        merged = dict(defaults)
        merged.update(self.params)
        self.params = merged

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentStrategy":
        return cls(kind=d["kind"], params=dict(d.get("params", {})))


def standard_transform(img: LabeledImage, pad: int, rng: np.random.Generator) -> LabeledImage:
    """Reflect-pad, random crop back to the original size, random horizontal flip.

    The label passes through untouched.  The generator is always consulted in
    the same order (row offset, column offset, flip coin), so pad=0 still
    consumes the same number of draws.
    """
    if pad < 0:
        raise ValueError(f"pad must be >= 0, got {pad}")
    _, h, w = img.pixels.shape
    top = int(rng.integers(0, 2 * pad + 1))
    left = int(rng.integers(0, 2 * pad + 1))
    flip = rng.random() < 0.5
    out = img.pixels
    if pad:
        padded = np.pad(out, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
        out = padded[:, top:top + h, left:left + w]
    if flip:
        out = out[:, :, ::-1]
    return LabeledImage(np.ascontiguousarray(out), img.label.copy())


def cutout(img: LabeledImage, n_holes: int, hole_size: int, rng: np.random.Generator,
           fill=None, size_jitter: bool = True) -> LabeledImage:
    """Fill `n_holes` square regions with a constant; the label is untouched.

    Hole centers are uniform over the image and boxes are clipped at the
    borders.  With size_jitter (default) each hole side is drawn uniformly
    from [hole_size/2, hole_size]; without it every hole has side hole_size
    exactly.  `fill` is a scalar or per-channel value; None means 0.5.
    """
    if n_holes < 1:
        raise ValueError(f"n_holes must be >= 1, got {n_holes}")
    if hole_size < 1:
        raise ValueError(f"hole_size must be >= 1, got {hole_size}")
    ch, h, w = img.pixels.shape
    if hole_size > min(h, w):
        warnings.warn(f"hole_size {hole_size} exceeds image side {min(h, w)}; "
                      "holes can blanket the whole image", stacklevel=2)
    if fill is None:
        fill_arr = np.full(ch, 0.5, dtype=img.pixels.dtype)
    else:
        fill_arr = np.broadcast_to(np.asarray(fill, dtype=img.pixels.dtype), (ch,))
    out = img.pixels.copy()
    lo_side = max(1, (hole_size + 1) // 2)
    for _ in range(n_holes):
        side = int(rng.integers(lo_side, hole_size + 1)) if size_jitter else hole_size
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        y0 = max(0, cy - side // 2)
        x0 = max(0, cx - side // 2)
        y1 = min(h, y0 + side)
        x1 = min(w, x0 + side)
        out[:, y0:y1, x0:x1] = fill_arr[:, None, None]
    return LabeledImage(out, img.label.copy())


def _check_pair(a: LabeledImage, b: LabeledImage) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    if a.label.shape != b.label.shape:
        raise ValueError(f"label lengths differ: {a.label.shape} vs {b.label.shape}")


def mixup(a: LabeledImage, b: LabeledImage, alpha: float,
          rng: np.random.Generator) -> tuple[LabeledImage, MixSpec]:
    """Convex blend of two images and their labels with lam ~ Beta(alpha, alpha)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    _check_pair(a, b)
    lam = float(rng.beta(alpha, alpha))
    pixels = lam * a.pixels + (1.0 - lam) * b.pixels
    label = lam * a.label + (1.0 - lam) * b.label
    return LabeledImage(pixels, label), MixSpec(lam=lam)


def cutmix(a: LabeledImage, b: LabeledImage, rng: np.random.Generator,
           beta_a: float = 1.0, beta_b: float = 1.0) -> tuple[LabeledImage, MixSpec]:
    """Paste a rectangle of b into a; labels mix by the exact retained fraction.

    A target area ratio (1 - lam) with lam ~ Beta(beta_a, beta_b) fixes the
    rectangle's aspect-preserving size; its center is uniform and the box is
    clipped at the borders.  lam is then recomputed as the exact fraction of
    a's pixels that survived, and that value mixes the labels, so the label
    algebra matches the pixel content no matter how much clipping happened.
    The returned mask marks the pixels taken from b.
    """
    if beta_a <= 0 or beta_b <= 0:
        raise ValueError(f"Beta parameters must be positive, got ({beta_a}, {beta_b})")
    _check_pair(a, b)
    _, h, w = a.pixels.shape
    lam0 = float(rng.beta(beta_a, beta_b))
    ratio = np.sqrt(1.0 - lam0)
    cut_h = int(h * ratio)
    cut_w = int(w * ratio)
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y0 = max(0, cy - cut_h // 2)
    x0 = max(0, cx - cut_w // 2)
    y1 = min(h, y0 + cut_h)
    x1 = min(w, x0 + cut_w)
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[y0:y1, x0:x1] = 1
    pixels = a.pixels.copy()
    pixels[:, y0:y1, x0:x1] = b.pixels[:, y0:y1, x0:x1]
    lam = 1.0 - float(mask.sum()) / (h * w)
    label = lam * a.label + (1.0 - lam) * b.label
    return LabeledImage(pixels, label), MixSpec(lam=lam, mask=mask)


def apply_strategy(batch: list[LabeledImage], strategy: AugmentStrategy,
                   rng: np.random.Generator, fill=None) -> list[LabeledImage]:
    """Apply one strategy across a batch.

    Mixing strategies pair each element with a partner from one uniform
    in-batch permutation (fixed points allowed).  `fill` supplies the
    dataset's per-channel mean for cutout when the strategy itself does not
    pin a fill value.
    """
    if not batch:
        raise ValueError("batch is empty")
    p = strategy.params
    if strategy.kind == "none":
        return batch
    if strategy.kind == "standard":
        return [standard_transform(img, p["pad"], rng) for img in batch]
    if strategy.kind == "cutout":
        hole_fill = p["fill"] if p["fill"] is not None else fill
        return [cutout(img, p["n_holes"], p["hole_size"], rng,
                       fill=hole_fill, size_jitter=p["size_jitter"]) for img in batch]
    if strategy.kind in ("mixup", "cutmix"):
        partners = rng.permutation(len(batch))
        out = []
        for i, img in enumerate(batch):
            j = int(partners[i])
            if strategy.kind == "mixup":
                mixed, spec = mixup(img, batch[j], p["beta_alpha"], rng)
            else:
                mixed, spec = cutmix(img, batch[j], rng, p["beta_a"], p["beta_b"])
            spec.partner_index = j
            out.append(mixed)
        return out
    raise ValueError(f"unknown strategy kind {strategy.kind!r}")


def dataset_fill_value(images: np.ndarray) -> np.ndarray:
    """Per-channel mean over a [N, channels, H, W] image stack (cutout fill)."""
    if images.ndim != 4 or images.shape[0] == 0:
        return np.asarray(0.5, dtype=np.float32)
    return images.mean(axis=(0, 2, 3))