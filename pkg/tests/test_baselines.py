import numpy as np
import pytest

from protoagg.baselines import (
    PcaModel,
    load_pca,
    pca_fit,
    pca_fit_words,
    pca_project,
    pca_prototype,
    quantized_mean,
    quantized_mean_words,
    random_sample_prototype,
    save_pca,
)
from protoagg.descriptor import BinaryDescriptor, pack_bits, unpack_bits
from protoagg.errors import DegenerateDataError, DimensionMismatchError, FormatError


def _random_descriptors(n, width, rng):
    return [BinaryDescriptor.random(width, rng) for _ in range(n)]


class TestQuantizedMean:
    def test_single_descriptor_is_itself(self):
        rng = np.random.default_rng(0)
        d = BinaryDescriptor.random(128, rng)
        assert quantized_mean([d]) == d

    def test_exact_tie_rounds_up(self):
        zeros = BinaryDescriptor.zeros(64)
        ones = BinaryDescriptor.ones(64)
        assert quantized_mean([zeros, ones]) == ones

    def test_matches_bit_counting_oracle(self):
        rng = np.random.default_rng(1)
        descs = _random_descriptors(9, 512, rng)
        qm = quantized_mean(descs)
        bits = np.stack([d.to_bits() for d in descs])
        for j in range(512):
            expected = 1 if bits[:, j].mean() >= 0.5 else 0
            assert qm.bit(j) == expected

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        descs = _random_descriptors(7, 128, rng)
        base = quantized_mean(descs)
        for _ in range(5):
            perm = rng.permutation(7)
            assert quantized_mean([descs[i] for i in perm]) == base

    def test_odd_count_is_majority_vote(self):
        rng = np.random.default_rng(3)
        descs = _random_descriptors(5, 64, rng)
        qm = quantized_mean(descs)
        bits = np.stack([d.to_bits() for d in descs])
        majority = (bits.sum(axis=0) * 2 > 5).astype(np.uint8)
        assert np.array_equal(qm.to_bits(), majority)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            quantized_mean([])

    def test_incremental_update_is_impossible(self):
        # two multisets with the same quantized mean diverge after the
        # same new descriptor is appended: the per-bit tallies that
        # would be needed to update are not recoverable from the mean
        zeros = BinaryDescriptor.zeros(64)
        ones = BinaryDescriptor.ones(64)
        set_a = [zeros, ones]
        set_b = [ones]
        assert quantized_mean(set_a) == quantized_mean(set_b)
        appended = zeros
        updated_a = quantized_mean(set_a + [appended])
        updated_b = quantized_mean(set_b + [appended])
        assert updated_a != updated_b


class TestPcaFit:
    def test_single_varying_bit_recovered(self):
        # only bit 1 varies: the sole component must align with axis 1
        bits = np.zeros((20, 64), dtype=np.uint8)
        bits[::2, 1] = 1
        model = pca_fit_words(pack_bits(bits), 64, m=1, seed=0)
        comp = model.components[0]
        assert abs(abs(comp[1]) - 1.0) < 1e-8
        assert np.abs(np.delete(comp, 1)).max() < 1e-8
        assert abs(model.explained_variance[0] - bits[:, 1].var()) < 1e-8

    def test_complete_basis_reconstructs(self):
        rng = np.random.default_rng(4)
        bits = (rng.random((200, 64)) < 0.5).astype(np.uint8)
        model = pca_fit_words(pack_bits(bits), 64, m=64, seed=5)
        X = bits.astype(np.float64)
        projected = (X - model.mean) @ model.components.T
        reconstructed = projected @ model.components + model.mean
        assert np.abs(reconstructed - X).max() < 1e-6

    def test_components_orthonormal(self):
        rng = np.random.default_rng(6)
        bits = (rng.random((300, 128)) < 0.5).astype(np.uint8)
        model = pca_fit_words(pack_bits(bits), 128, m=16, seed=7)
        gram = model.components @ model.components.T
        assert np.abs(gram - np.eye(16)).max() < 1e-8

    def test_explained_variance_non_increasing(self):
        rng = np.random.default_rng(8)
        bits = (rng.random((300, 128)) < 0.3).astype(np.uint8)
        model = pca_fit_words(pack_bits(bits), 128, m=8, seed=9)
        ev = model.explained_variance
        assert np.all(np.diff(ev) <= 1e-12)

    def test_seeds_agree_on_well_conditioned_subspace(self):
        # planted structure: samples cluster around 4 patterns, so the
        # top-3 between-pattern subspace is well separated from noise
        rng = np.random.default_rng(10)
        patterns = (rng.random((4, 256)) < 0.5).astype(np.uint8)
        rows = []
        for i in range(400):
            noise = rng.random(256) < 0.02
            rows.append(np.bitwise_xor(patterns[i % 4], noise.astype(np.uint8)))
        words = pack_bits(np.stack(rows))
        m1 = pca_fit_words(words, 256, m=3, seed=11)
        m2 = pca_fit_words(words, 256, m=3, seed=12)
        s = np.linalg.svd(m1.components @ m2.components.T, compute_uv=False)
        max_angle_sine = np.sqrt(max(0.0, 1.0 - min(s) ** 2))
        assert max_angle_sine < 1e-6

    def test_degenerate_sample_rejected(self):
        words = pack_bits(np.ones((10, 64), dtype=np.uint8))
        with pytest.raises(DegenerateDataError, match="zero variance"):
            pca_fit_words(words, 64, m=2, seed=13)

    def test_sample_not_larger_than_m_rejected(self):
        rng = np.random.default_rng(14)
        words = np.stack([d.words for d in _random_descriptors(4, 64, rng)])
        with pytest.raises(ValueError):
            pca_fit_words(words, 64, m=4, seed=15)


class TestPcaPrototype:
    def _model(self, width=128):
        rng = np.random.default_rng(16)
        bits = (rng.random((200, width)) < 0.5).astype(np.uint8)
        return pca_fit_words(pack_bits(bits), width, m=8, seed=17)

    def test_single_descriptor_is_own_projection(self):
        model = self._model()
        rng = np.random.default_rng(18)
        d = BinaryDescriptor.random(128, rng)
        proto = pca_prototype(model, [d])
        expected = pca_project(model, d.words[None, :])[0]
        np.testing.assert_allclose(proto, expected, atol=1e-12)

    def test_linearity_identity(self):
        # projection is affine, so the prototype equals the projection
        # of the raw bit-mean
        model = self._model()
        rng = np.random.default_rng(19)
        descs = _random_descriptors(9, 128, rng)
        proto = pca_prototype(model, descs)
        bit_mean = np.stack([d.to_real() for d in descs]).mean(axis=0)
        expected = (bit_mean - model.mean) @ model.components.T
        np.testing.assert_allclose(proto, expected, atol=1e-10)

    def test_identical_descriptors(self):
        model = self._model()
        rng = np.random.default_rng(20)
        d = BinaryDescriptor.random(128, rng)
        proto = pca_prototype(model, [d, d, d])
        np.testing.assert_allclose(proto, pca_project(model, d.words[None, :])[0], atol=1e-12)

    def test_width_mismatch_rejected(self):
        model = self._model()
        with pytest.raises(DimensionMismatchError):
            pca_prototype(model, [BinaryDescriptor.zeros(64)])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pca_prototype(self._model(), [])


class TestRandomSamplePrototype:
    def test_singleton(self):
        d = BinaryDescriptor.zeros(64)
        assert random_sample_prototype([d], np.random.default_rng(21)) == d

    def test_deterministic(self):
        rng1 = np.random.default_rng(22)
        rng2 = np.random.default_rng(22)
        descs = _random_descriptors(10, 64, np.random.default_rng(23))
        assert random_sample_prototype(descs, rng1) == random_sample_prototype(descs, rng2)

    def test_uniform_choice(self):
        descs = _random_descriptors(5, 64, np.random.default_rng(24))
        rng = np.random.default_rng(25)
        counts = {d: 0 for d in descs}
        for _ in range(10_000):
            counts[random_sample_prototype(descs, rng)] += 1
        sigma = np.sqrt(10_000 * 0.2 * 0.8)
        for d in descs:
            assert abs(counts[d] - 2000) <= 3 * sigma

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            random_sample_prototype([], np.random.default_rng(26))


class TestPcaFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(27)
        model = pca_fit(_random_descriptors(100, 128, rng), m=8, seed=28)
        path = tmp_path / "model.ppca"
        save_pca(model, path)
        loaded = load_pca(path)
        np.testing.assert_array_equal(loaded.mean, model.mean)
        np.testing.assert_array_equal(loaded.components, model.components)
        assert loaded.explained_variance is None  # not part of the file format
        save_pca(loaded, path)
        second = load_pca(path)
        np.testing.assert_array_equal(second.components, model.components)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ppca"
        path.write_bytes(b"JUNK" + b"\x00" * 40)
        with pytest.raises(FormatError):
            load_pca(path)

    def test_size_mismatch(self, tmp_path):
        rng = np.random.default_rng(29)
        model = pca_fit(_random_descriptors(50, 64, rng), m=4, seed=30)
        path = tmp_path / "x.ppca"
        save_pca(model, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_pca(path)
