import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cemlab import data


class TestGenerators:
    def test_deterministic(self):
        for name in data.DATASET_NAMES:
            a = data.generate(name, n=200, seed=3)
            b = data.generate(name, n=200, seed=3)
            np.testing.assert_array_equal(a.features, b.features)
            np.testing.assert_array_equal(a.concepts, b.concepts)
            np.testing.assert_array_equal(a.labels, b.labels)
            np.testing.assert_array_equal(a.split, b.split)

    def test_seeds_differ(self):
        a = data.generate("xor", n=200, seed=3)
        b = data.generate("xor", n=200, seed=4)
        assert not np.array_equal(a.features, b.features)

    def test_split_sizes(self):
        ds = data.generate("xor", n=3000, seed=0)
        assert len(ds.rows("train")) == 2100
        assert len(ds.rows("val")) == 300
        assert len(ds.rows("test")) == 600

    def test_shapes(self):
        for name, (d, k, L) in data.DATASET_SHAPES.items():
            ds = data.generate(name, n=100, seed=0)
            assert ds.features.shape == (100, d)
            assert ds.concepts.shape == (100, k)
            assert ds.n_classes == L

    def test_xor_semantics(self):
        ds = data.generate("xor", n=500, seed=1)
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0
        np.testing.assert_array_equal(ds.concepts, (ds.features > 0.5).astype(float))
        np.testing.assert_array_equal(
            ds.labels, (ds.concepts[:, 0] != ds.concepts[:, 1]).astype(int)
        )

    def test_trig_semantics(self):
        ds = data.generate("trig", n=500, seed=1)
        h = ds.latents
        np.testing.assert_allclose(ds.features[:, :3], np.sin(h) + h, atol=1e-12)
        np.testing.assert_allclose(ds.features[:, 3:6], np.cos(h) + h, atol=1e-12)
        np.testing.assert_allclose(ds.features[:, 6], (h**2).sum(axis=1), atol=1e-12)
        np.testing.assert_array_equal(ds.concepts, (h > 0).astype(float))
        np.testing.assert_array_equal(ds.labels, ((h[:, 0] + h[:, 1]) > 0).astype(int))

    def test_trig_latent_scale(self):
        var = data.generate("trig", n=20000, seed=2).latents.var()
        std = data.generate("trig", n=20000, seed=2, latent_scale="std").latents.var()
        assert abs(var - 2.0) < 0.1
        assert abs(std - 4.0) < 0.2

    def test_dot_semantics(self):
        ds = data.generate("dot", n=500, seed=1)
        v = ds.latents.reshape(-1, 2, 2)
        v1, v2 = v[:, 0, :], v[:, 1, :]
        np.testing.assert_allclose(ds.features[:, :2], v1 + v2, atol=1e-12)
        np.testing.assert_allclose(ds.features[:, 2:], v1 - v2, atol=1e-12)
        np.testing.assert_array_equal(ds.labels, ((v1 * v2).sum(axis=1) > 0).astype(int))
        np.testing.assert_array_equal(ds.concepts[:, 0], (v1.sum(axis=1) > 0).astype(float))
        np.testing.assert_array_equal(ds.concepts[:, 1], (v2.sum(axis=1) < 0).astype(float))

    def test_too_small_n_raises(self):
        with pytest.raises(ValueError):
            data.generate("xor", n=5)

    def test_unknown_name_raises(self):
        with pytest.raises(ValueError):
            data.generate("mnist")

    @given(
        name=st.sampled_from(data.DATASET_NAMES),
        n=st.integers(10, 80),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=25, deadline=None)
    def test_invariants(self, name, n, seed):
        ds = data.generate(name, n=n, seed=seed)
        assert set(np.unique(ds.concepts)) <= {0.0, 1.0}
        assert ds.labels.min() >= 0 and ds.labels.max() <= 1
        assert len(ds.rows("train")) + len(ds.rows("val")) + len(ds.rows("test")) == n
        assert np.isfinite(ds.features).all()


class TestSubsample:
    def test_fraction_rounds_up(self):
        ds = data.generate("trig", n=50, seed=0)
        assert data.subsample_concepts(ds, 0.4).n_concepts == 2  # ceil(1.2)
        assert data.subsample_concepts(ds, 1.0).n_concepts == 3

    def test_deterministic_and_valid(self):
        ds = data.generate("trig", n=50, seed=0)
        a = data.subsample_concepts(ds, 0.5, seed=3)
        b = data.subsample_concepts(ds, 0.5, seed=3)
        np.testing.assert_array_equal(a.concepts, b.concepts)
        kept = a.meta["kept_concepts"]
        np.testing.assert_array_equal(a.concepts, ds.concepts[:, kept])

    def test_bad_fraction_raises(self):
        ds = data.generate("xor", n=50, seed=0)
        for frac in (0.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                data.subsample_concepts(ds, frac)


class TestTextRoundTrip:
    def test_round_trip(self, tmp_path):
        ds = data.generate("dot", n=40, seed=9)
        path = tmp_path / "dot.csv"
        data.save_text(ds, path)
        back = data.load_text(path)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.concepts, ds.concepts)
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.split, ds.split)
