import numpy as np
import pytest

from distillab.augment import (AugmentStrategy, LabeledImage, apply_strategy, cutmix, cutout,
                               mixup, standard_transform)


class ForcedRng:
    """Duck-typed generator returning scripted values for beta/integers/random."""

    def __init__(self, beta=0.5, integers=(), random=1.0):
        self._beta = beta
        self._integers = list(integers)
        self._random = random

    def beta(self, a, b):
        return self._beta

    def integers(self, lo, hi=None):
        if self._integers:
            return self._integers.pop(0)
        return lo if hi is None else lo

    def random(self):
        return self._random

    def permutation(self, n):
        return np.arange(n)


def _img(rng, ch=1, side=6, n_classes=4, cls=0, dtype=np.float64):
    pix = rng.random((ch, side, side)).astype(dtype)
    label = np.zeros(n_classes, dtype=dtype)
    label[cls] = 1.0
    return LabeledImage(pix, label)


def test_strategy_params_defaulted_and_validated():
    s = AugmentStrategy("cutout")
    assert s.params["n_holes"] == 16 and s.params["hole_size"] == 3
    assert AugmentStrategy("mixup").params == {"beta_alpha": 1.0}
    with pytest.raises(ValueError):
        AugmentStrategy("blur")
    with pytest.raises(ValueError):
        AugmentStrategy("mixup", {"pad": 2})


def test_standard_pad_zero_no_flip_is_identity():
    rng = np.random.default_rng(0)
    img = _img(rng)
    out = standard_transform(img, 0, ForcedRng(random=0.9))  # 0.9 >= 0.5: no flip
    assert np.array_equal(out.pixels, img.pixels)
    assert np.array_equal(out.label, img.label)


def test_standard_forced_flip_reverses_columns():
    pix = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    img = LabeledImage(pix, np.array([1.0, 0.0]))
    out = standard_transform(img, 0, ForcedRng(random=0.0))  # 0.0 < 0.5: flip
    assert np.array_equal(out.pixels, np.array([[[2.0, 1.0], [4.0, 3.0]]]))


def test_standard_crop_shifts_window():
    # pad=1 reflect, offsets (0,0) select the top-left window of the padded image
    pix = np.arange(9, dtype=np.float64).reshape(1, 3, 3)
    img = LabeledImage(pix, np.array([1.0]))
    out = standard_transform(img, 1, ForcedRng(integers=[0, 0], random=0.9))
    padded = np.pad(pix, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    assert np.array_equal(out.pixels, padded[:, 0:3, 0:3])


def test_standard_label_untouched_any_rng():
    rng = np.random.default_rng(33)
    img = _img(rng, cls=2)
    for _ in range(20):
        out = standard_transform(img, 2, rng)
        assert np.array_equal(out.label, img.label)
        assert out.pixels.shape == img.pixels.shape


def test_cutout_whole_image_hole_gives_constant_image():
    rng = np.random.default_rng(1)
    img = _img(rng, side=4)
    with pytest.warns(UserWarning):
        out = cutout(img, 1, 8, np.random.default_rng(2), fill=0.25, size_jitter=False)
    assert np.all(out.pixels == 0.25)
    assert np.array_equal(out.label, img.label)


def test_cutout_interior_hole_changes_exactly_size_squared_pixels():
    rng = np.random.default_rng(5)
    base = np.zeros((2, 9, 9))  # zero image, nonzero fill -> changed = filled
    img = LabeledImage(base, np.array([1.0, 0.0]))
    out = cutout(img, 1, 3, ForcedRng(integers=[4, 4]), fill=1.0, size_jitter=False)
    changed = np.count_nonzero(out.pixels[0] != 0)
    assert changed == 9
    assert np.count_nonzero(out.pixels[1] != 0) == 9


def test_cutout_default_fill_is_half():
    img = LabeledImage(np.ones((1, 4, 4)), np.array([1.0]))
    with pytest.warns(UserWarning):
        out = cutout(img, 1, 8, ForcedRng(integers=[8, 2, 2]), size_jitter=True)
    assert 0.5 in out.pixels


def test_cutout_validates_arguments():
    img = LabeledImage(np.ones((1, 4, 4)), np.array([1.0]))
    with pytest.raises(ValueError):
        cutout(img, 0, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        cutout(img, 1, 0, np.random.default_rng(0))


def test_mixup_lambda_one_returns_first_image_exactly():
    rng = np.random.default_rng(7)
    a, b = _img(rng, cls=1), _img(rng, cls=3)
    out, spec = mixup(a, b, 1.0, ForcedRng(beta=1.0))
    assert spec.lam == 1.0
    assert np.array_equal(out.pixels, a.pixels)
    assert np.array_equal(out.label, a.label)


def test_mixup_midpoint_splits_one_hot_labels():
    rng = np.random.default_rng(8)
    a, b = _img(rng, n_classes=8, cls=2), _img(rng, n_classes=8, cls=7)
    out, spec = mixup(a, b, 1.0, ForcedRng(beta=0.5))
    assert out.label[2] == 0.5 and out.label[7] == 0.5
    assert out.label.sum() == 1.0


def test_mixup_pixels_are_exact_convex_combination():
    rng = np.random.default_rng(9)
    for _ in range(25):
        a, b = _img(rng), _img(rng, cls=1)
        out, spec = mixup(a, b, 1.0, rng)
        lam = spec.lam
        assert np.array_equal(out.pixels, lam * a.pixels + (1.0 - lam) * b.pixels)


def test_mixup_rejects_bad_alpha_and_shape_mismatch():
    rng = np.random.default_rng(0)
    a = _img(rng)
    with pytest.raises(ValueError):
        mixup(a, a, 0.0, rng)
    b = LabeledImage(np.ones((1, 3, 3)), np.array([1.0, 0.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        mixup(a, b, 1.0, rng)


def test_mixup_linearity_swap_identity():
    rng = np.random.default_rng(10)
    a, b = _img(rng), _img(rng, cls=2)
    lam = 0.3125  # exactly representable
    out_ab, _ = mixup(a, b, 1.0, ForcedRng(beta=lam))
    out_ba, _ = mixup(b, a, 1.0, ForcedRng(beta=1.0 - lam))
    assert np.array_equal(out_ab.pixels, out_ba.pixels)


def test_cutmix_zero_area_is_first_image():
    rng = np.random.default_rng(11)
    a, b = _img(rng), _img(rng, cls=1)
    out, spec = cutmix(a, b, ForcedRng(beta=1.0))  # lam0=1 -> zero cut
    assert spec.lam == 1.0
    assert np.array_equal(out.pixels, a.pixels)
    assert np.array_equal(out.label, a.label)
    assert spec.mask.sum() == 0


def test_cutmix_full_cover_is_second_image():
    rng = np.random.default_rng(12)
    a, b = _img(rng, side=4), _img(rng, side=4, cls=2)
    # lam0=0 -> cut 4x4; center (2,2) -> box rows/cols [0,4)
    out, spec = cutmix(a, b, ForcedRng(beta=0.0, integers=[2, 2]))
    assert spec.lam == 0.0
    assert np.array_equal(out.pixels, b.pixels)
    assert np.array_equal(out.label, b.label)


def test_cutmix_lambda_is_exact_retained_fraction():
    rng = np.random.default_rng(13)
    for _ in range(50):
        a, b = _img(rng, side=8), _img(rng, side=8, cls=3)
        out, spec = cutmix(a, b, rng)
        retained = 1.0 - spec.mask.sum() / 64.0
        assert spec.lam == retained
        expected_label = spec.lam * a.label + (1.0 - spec.lam) * b.label
        assert np.array_equal(out.label, expected_label)
        # pixels inside the mask come from b, outside from a
        m = spec.mask.astype(bool)
        assert np.array_equal(out.pixels[:, m], b.pixels[:, m])
        assert np.array_equal(out.pixels[:, ~m], a.pixels[:, ~m])


def test_apply_none_returns_batch_unchanged():
    rng = np.random.default_rng(14)
    batch = [_img(rng, cls=i % 4) for i in range(5)]
    out = apply_strategy(batch, AugmentStrategy("none"), rng)
    assert out is batch


def test_apply_mixup_pairs_with_permutation_partner():
    rng = np.random.default_rng(15)
    batch = [_img(rng, cls=0), _img(rng, cls=1)]
    out = apply_strategy(batch, AugmentStrategy("mixup"), np.random.default_rng(4))
    for mixed in out:
        support = np.flatnonzero(mixed.label)
        assert set(support) <= {0, 1}
        assert abs(mixed.label.sum() - 1.0) < 1e-6


def test_apply_strategy_fixed_seed_is_bitwise_reproducible():
    rng = np.random.default_rng(16)
    batch = [_img(rng, cls=i % 4) for i in range(6)]
    for kind in ("standard", "cutout", "mixup", "cutmix"):
        out1 = apply_strategy(batch, AugmentStrategy(kind), np.random.default_rng(99))
        out2 = apply_strategy(batch, AugmentStrategy(kind), np.random.default_rng(99))
        for u, v in zip(out1, out2):
            assert np.array_equal(u.pixels, v.pixels)
            assert np.array_equal(u.label, v.label)


def test_apply_rejects_empty_batch():
    with pytest.raises(ValueError):
        apply_strategy([], AugmentStrategy("none"), np.random.default_rng(0))


def test_all_strategies_preserve_range_and_label_algebra():
    rng = np.random.default_rng(17)
    for trial in range(200):
        batch = [_img(rng, cls=int(rng.integers(4))) for _ in range(4)]
        kind = ("standard", "cutout", "mixup", "cutmix")[trial % 4]
        out = apply_strategy(batch, AugmentStrategy(kind), rng)
        for mixed in out:
            assert mixed.pixels.min() >= 0.0 and mixed.pixels.max() <= 1.0
            assert abs(mixed.label.sum() - 1.0) < 1e-6
            assert np.count_nonzero(mixed.label) <= 2