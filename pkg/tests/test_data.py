import numpy as np
import pytest

from cascademat.data import (
    AugmentSpec, CompositeSample, SynthSpec, augment, composite, load_image,
    load_record, manifest_hash, read_manifest, save_image, synthesize,
    write_corpus,
)
from cascademat.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def _random_sample(rng, size=16):
    fg = Tensor(rng.uniform(size=(3, size, size)))
    bg = Tensor(rng.uniform(size=(3, size, size)))
    alpha = Tensor(rng.uniform(size=(1, size, size)))
    return composite(fg, bg, alpha)


class TestComposite:
    def test_opaque_foreground(self, rng):
        fg = Tensor(rng.uniform(size=(3, 4, 4)))
        bg = Tensor(rng.uniform(size=(3, 4, 4)))
        s = composite(fg, bg, Tensor(np.ones((1, 4, 4))))
        assert np.array_equal(s.image.data, fg.data)

    def test_pure_background(self, rng):
        fg = Tensor(rng.uniform(size=(3, 4, 4)))
        bg = Tensor(rng.uniform(size=(3, 4, 4)))
        s = composite(fg, bg, Tensor(np.zeros((1, 4, 4))))
        assert np.array_equal(s.image.data, bg.data)

    def test_linear_blend_arithmetic(self):
        fg = Tensor(np.array([1.0, 0.8, 0.6]).reshape(3, 1, 1))
        bg = Tensor(np.array([0.0, 0.2, 0.4]).reshape(3, 1, 1))
        s = composite(fg, bg, Tensor(np.full((1, 1, 1), 0.5)))
        assert np.allclose(s.image.data.ravel(), [0.5, 0.5, 0.5])

    def test_shape_violation(self, rng):
        with pytest.raises(ValueError):
            composite(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((3, 5, 5))),
                      Tensor(np.zeros((1, 4, 4))))
        with pytest.raises(ValueError):
            composite(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((3, 4, 4))),
                      Tensor(np.zeros((2, 4, 4))))

    def test_range_violation(self):
        with pytest.raises(ValueError):
            composite(Tensor(np.full((3, 2, 2), 1.5)), Tensor(np.zeros((3, 2, 2))),
                      Tensor(np.zeros((1, 2, 2))))

    def test_invariant_enforced_on_direct_construction(self, rng):
        fg = Tensor(rng.uniform(size=(3, 4, 4)))
        bg = Tensor(rng.uniform(size=(3, 4, 4)))
        alpha = Tensor(rng.uniform(size=(1, 4, 4)))
        with pytest.raises(ValueError):
            CompositeSample(image=bg, fg=fg, bg=bg, alpha=alpha)


class TestAugment:
    def test_identity_pipeline(self, rng):
        s = _random_sample(rng, size=16)
        spec = AugmentSpec(size=16, crop_lo=16, crop_hi=16, flip_prob=0.0,
                           jitter_lo=1.0, jitter_hi=1.0)
        out = augment(s, spec, rng)
        assert np.array_equal(out.image.data, s.image.data)
        assert np.array_equal(out.alpha.data, s.alpha.data)

    def test_flip_is_involution(self, rng):
        s = _random_sample(rng, size=16)
        spec = AugmentSpec(size=16, crop_lo=16, crop_hi=16, flip_prob=1.0,
                           jitter_lo=1.0, jitter_hi=1.0)
        once = augment(s, spec, np.random.default_rng(0))
        twice = augment(once, spec, np.random.default_rng(1))
        assert np.array_equal(twice.image.data, s.image.data)
        assert not np.array_equal(once.image.data, s.image.data)

    def test_blend_identity_over_random_draws(self, rng):
        spec = AugmentSpec.for_resolution(16)
        for _ in range(100):
            s = _random_sample(rng, size=int(rng.integers(16, 25)))
            out = augment(s, spec, rng)
            recomposed = (out.alpha.data * out.fg.data
                          + (1 - out.alpha.data) * out.bg.data)
            assert np.max(np.abs(out.image.data - recomposed)) <= 1e-3
            assert out.image.shape == (3, 16, 16)

    def test_alpha_untouched_by_photometric_jitter(self, rng):
        s = _random_sample(rng, size=20)
        base = dict(size=16, crop_lo=16, crop_hi=20, flip_prob=0.5)
        jitter = AugmentSpec(**base, jitter_lo=0.8, jitter_hi=1.2)
        unit = AugmentSpec(**base, jitter_lo=1.0, jitter_hi=1.0)
        a = augment(s, jitter, np.random.default_rng(5))
        b = augment(s, unit, np.random.default_rng(5))
        assert np.array_equal(a.alpha.data, b.alpha.data)
        assert not np.array_equal(a.image.data, b.image.data)
        assert a.alpha.data.min() >= 0.0 and a.alpha.data.max() <= 1.0

    def test_source_too_small(self, rng):
        s = _random_sample(rng, size=10)
        with pytest.raises(ValueError):
            augment(s, AugmentSpec.for_resolution(16), rng)

    def test_spec_invariants(self):
        with pytest.raises(ValueError):
            AugmentSpec(size=64, crop_lo=30, crop_hi=80)  # below 0.64x
        with pytest.raises(ValueError):
            AugmentSpec(size=64, crop_lo=80, crop_hi=70)
        spec = AugmentSpec.for_resolution(64)
        assert (spec.crop_lo, spec.crop_hi) == (64, 100)


class TestSynthesize:
    def test_seed_determinism(self):
        spec = SynthSpec(count=6, size=32, seed=123)
        a = synthesize(spec)
        b = synthesize(spec)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.image.data, sb.image.data)

    def test_soft_transition_fraction(self):
        for s in synthesize(SynthSpec(count=8, size=64, seed=7)):
            a = s.alpha.data
            soft = ((a > 0.05) & (a < 0.95)).mean()
            assert soft >= 0.02
            # binary regions on both ends
            assert (a == 0.0).any() and (a == 1.0).any()

    def test_foreground_reuse_ratio(self):
        spec = SynthSpec(count=16, size=32, seed=1, backgrounds_per_foreground=8)
        samples = synthesize(spec)
        assert np.array_equal(samples[0].fg.data, samples[7].fg.data)
        assert not np.array_equal(samples[7].fg.data, samples[8].fg.data)
        assert not np.array_equal(samples[0].bg.data, samples[1].bg.data)


class TestImageIO:
    def test_8bit_alpha_roundtrip(self, rng, tmp_path):
        alpha = rng.uniform(size=(1, 9, 7))
        save_image(alpha, tmp_path / "a.png", bit_depth=8)
        back = load_image(tmp_path / "a.png")
        assert back.shape == (1, 9, 7)
        assert np.max(np.abs(back.data - alpha)) <= 1.0 / 255

    def test_16bit_roundtrip(self, rng, tmp_path):
        alpha = rng.uniform(size=(1, 5, 5))
        save_image(alpha, tmp_path / "a16.png", bit_depth=16)
        back = load_image(tmp_path / "a16.png")
        assert np.max(np.abs(back.data - alpha)) <= 1.0 / 65535

    def test_rgb_roundtrip_preserves_layout(self, rng, tmp_path):
        img = rng.uniform(size=(3, 6, 11))
        save_image(img, tmp_path / "rgb.png", bit_depth=8)
        back = load_image(tmp_path / "rgb.png")
        assert back.shape == (3, 6, 11)
        assert np.max(np.abs(back.data - img)) <= 1.0 / 255

    def test_16bit_rgb_roundtrip(self, rng, tmp_path):
        img = rng.uniform(size=(3, 4, 4))
        save_image(img, tmp_path / "rgb16.png", bit_depth=16)
        assert np.max(np.abs(load_image(tmp_path / "rgb16.png").data - img)) \
            <= 1.0 / 65535

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(IOError):
            load_image(tmp_path / "missing.png")

    def test_unsupported_format(self, tmp_path):
        bogus = tmp_path / "bogus.png"
        bogus.write_text("not a png")
        with pytest.raises(IOError):
            load_image(bogus)


class TestCorpus:
    def test_roundtrip_and_blend_invariant(self, tmp_path):
        spec = SynthSpec(count=5, size=32, seed=3, backgrounds_per_foreground=2)
        write_corpus(spec, tmp_path)
        records = read_manifest(tmp_path)
        assert len(records) == 5
        for rec in records:
            sample = load_record(tmp_path, rec)  # construction re-checks Eq
            assert sample.image.shape == (3, 32, 32)

    def test_manifest_hash_reproducible(self, tmp_path):
        spec = SynthSpec(count=4, size=16, seed=11)
        write_corpus(spec, tmp_path / "a")
        write_corpus(spec, tmp_path / "b")
        assert manifest_hash(tmp_path / "a") == manifest_hash(tmp_path / "b")

    def test_empty_corpus(self, tmp_path):
        write_corpus(SynthSpec(count=0, size=16, seed=0), tmp_path)
        assert read_manifest(tmp_path) == []
