import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopgp import SpectralPrior, Spectrum, reparameterize, sample_spectrum


def conj_closed(eig):
    a = np.sort_complex(eig)
    b = np.sort_complex(np.conj(eig))
    return np.allclose(a, b, atol=0.0)


class TestSample:
    def test_degenerate_box_gives_zeros(self):
        for d in (1, 2, 7, 64):
            spec = sample_spectrum(SpectralPrior(0, 0, 0, 0), d, seed=3)
            assert np.all(spec.eigenvalues == 0)

    def test_default_box_membership(self):
        spec = sample_spectrum(SpectralPrior(1, 0, 15, 0), 64, seed=5)
        eig = spec.eigenvalues
        assert len(eig) == 64
        assert np.all(np.abs(eig.real) <= 1.0) and np.all(np.abs(eig.imag) <= 15.0)
        # 32 conjugate pairs
        pos = np.sum(eig.imag > 0)
        assert pos == 32 or np.sum(eig.imag == 0) > 0

    def test_determinism(self):
        a = sample_spectrum(SpectralPrior(1, 0, 15, 0), 16, seed=7)
        b = sample_spectrum(SpectralPrior(1, 0, 15, 0), 16, seed=7)
        assert np.array_equal(a.eigenvalues, b.eigenvalues)

    def test_odd_d_has_real_point(self):
        spec = sample_spectrum(SpectralPrior(1, 0, 15, 0), 7, seed=2)
        assert spec.eigenvalues[-1].imag == 0.0
        assert conj_closed(spec.eigenvalues)

    @given(st.integers(1, 33), st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_conjugate_closure_property(self, d, seed):
        spec = sample_spectrum(SpectralPrior(2.0, -0.3, 9.0, 0.0), d, seed)
        assert conj_closed(spec.eigenvalues)


class TestReparameterize:
    def test_identity(self):
        prior = SpectralPrior(1, 0, 15, 0)
        spec = sample_spectrum(prior, 12, seed=1)
        again = reparameterize(spec, prior)
        assert np.array_equal(spec.eigenvalues, again.eigenvalues)

    def test_doubling_imag_scale(self):
        prior = SpectralPrior(1, 0, 15, 0)
        spec = sample_spectrum(prior, 12, seed=1)
        doubled = reparameterize(spec, SpectralPrior(1, 0, 30, 0))
        assert np.allclose(doubled.eigenvalues.imag, 2.0 * spec.eigenvalues.imag)
        assert conj_closed(doubled.eigenvalues)

    def test_real_bias_shift(self):
        prior = SpectralPrior(1, 0.0, 15, 0)
        spec = sample_spectrum(prior, 9, seed=6)
        shifted = reparameterize(spec, SpectralPrior(1, 0.5, 15, 0))
        assert np.allclose(shifted.eigenvalues.real, spec.eigenvalues.real + 0.5)

    @given(
        st.integers(1, 17),
        st.integers(0, 10_000),
        st.floats(0, 3),
        st.floats(-1, 1),
        st.floats(0, 20),
        st.floats(-2, 2),
    )
    @settings(max_examples=40, deadline=None)
    def test_outsourcing_consistency(self, d, seed, sr, br, si, bi):
        start = SpectralPrior(1, 0, 15, 0)
        new = SpectralPrior(sr, br, si, bi)
        direct = sample_spectrum(new, d, seed)
        moved = reparameterize(sample_spectrum(start, d, seed), new)
        assert np.allclose(direct.eigenvalues, moved.eigenvalues, atol=0.0)
        assert conj_closed(moved.eigenvalues)

    def test_four_degrees_of_freedom(self):
        # the optimizer sees exactly the 4 box parameters, not D
        assert len(SpectralPrior(1, 0, 15, 0).as_tuple()) == 4


def test_serialization_roundtrip():
    spec = sample_spectrum(SpectralPrior(1.5, -0.2, 7.0, 0.5), 10, seed=42)
    back = Spectrum.from_dict(spec.to_dict())
    assert np.array_equal(spec.eigenvalues, back.eigenvalues)
    assert np.array_equal(spec.base_draws, back.base_draws)
    assert back.prior == spec.prior
    assert back.seed == 42


def test_invalid_prior_rejected():
    with pytest.raises(ValueError):
        SpectralPrior(-1.0, 0, 1, 0)
    with pytest.raises(ValueError):
        SpectralPrior(1.0, np.nan, 1, 0)
