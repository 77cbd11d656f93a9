"""Spectral hyperprior and conjugate-closed eigenvalue sampling.

The prior is a uniform distribution over a box in the complex plane with
four parameters: real scale/bias and imaginary scale/bias.  A spectrum is a
finite draw of D eigenvalues from it, kept closed under conjugation so the
induced covariances are real.  The underlying uniform draws are stored with
the spectrum, so changing the four box parameters is a deterministic affine
reparameterization of the same draws; the marginal-likelihood optimizer
differentiates through exactly that map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SpectralPrior", "Spectrum", "sample_spectrum", "reparameterize"]

DEFAULT_PRIOR_PARAMS = (1.0, 0.0, 15.0, 0.0)


@dataclass(frozen=True)
class SpectralPrior:
    """Uniform box {s + i*w : s in [-scale_real, scale_real] + bias_real,
    w in [-scale_imag, scale_imag] + bias_imag}."""

    scale_real: float
    bias_real: float
    scale_imag: float
    bias_imag: float

    def __post_init__(self):
        vals = (self.scale_real, self.bias_real, self.scale_imag, self.bias_imag)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("prior parameters must be finite")
        if self.scale_real < 0 or self.scale_imag < 0:
            raise ValueError("prior scales must be nonnegative")

    def as_tuple(self):
        return (self.scale_real, self.bias_real, self.scale_imag, self.bias_imag)


def default_prior() -> SpectralPrior:
    return SpectralPrior(*DEFAULT_PRIOR_PARAMS)


def _pair_signs(d: int) -> np.ndarray:
    """Conjugation signs by position: +1 for pair leads, -1 for partners,
    0 for the forced-real eigenvalue of an odd-sized spectrum."""
    signs = np.where(np.arange(d) % 2 == 0, 1.0, -1.0)
    if d % 2 == 1:
        signs[d - 1] = 0.0
    return signs


def _eigenvalues_from_draws(draws: np.ndarray, prior: SpectralPrior) -> np.ndarray:
    """Affine image of stored draws under the box parameters.

    draws[:, 0] in [0, 1] maps to the real part.  Pair leads carry a signed
    uniform draws[:, 1] in [-1, 1] covering the full imaginary extent of
    the box, omega = scale*u + bias; their partners store -u and take
    omega = -scale*u - bias, so the pair stays conjugate under every box.
    A forced-real eigenvalue has u = 0 and sign 0, pinning omega to 0.
    """
    u_s = draws[:, 0]
    u_w = draws[:, 1]
    signs = _pair_signs(len(draws))
    s = prior.scale_real * (2.0 * u_s - 1.0) + prior.bias_real
    w = prior.scale_imag * u_w + signs * prior.bias_imag
    return s + 1j * w


@dataclass(frozen=True)
class Spectrum:
    """D eigenvalues, conjugate-closed, plus the uniform draws behind them.

    The box parameters that produced the eigenvalues ride along so the
    optimizer can read the current box and reparameterize the frozen draws.
    """

    eigenvalues: np.ndarray
    base_draws: np.ndarray
    seed: int
    prior: SpectralPrior

    def __post_init__(self):
        eig = np.asarray(self.eigenvalues, dtype=complex)
        draws = np.asarray(self.base_draws, dtype=float)
        if eig.ndim != 1 or len(eig) < 1:
            raise ValueError("spectrum needs at least one eigenvalue")
        if draws.shape != (len(eig), 2):
            raise ValueError("base_draws must be (D, 2)")
        object.__setattr__(self, "eigenvalues", eig)
        object.__setattr__(self, "base_draws", draws)
        if not _conjugate_closed(eig):
            raise ValueError("spectrum is not closed under conjugation")

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "real": self.eigenvalues.real.tolist(),
            "imag": self.eigenvalues.imag.tolist(),
            "base_draws": self.base_draws.tolist(),
            "seed": self.seed,
            "prior": list(self.prior.as_tuple()),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Spectrum":
        eig = np.array(d["real"], dtype=float) + 1j * np.array(d["imag"], dtype=float)
        return cls(
            eig,
            np.array(d["base_draws"], dtype=float),
            int(d["seed"]),
            SpectralPrior(*d["prior"]),
        )


def _conjugate_closed(eig: np.ndarray, tol: float = 0.0) -> bool:
    key = lambda a: np.lexsort((a.imag, a.real))
    a = eig[key(eig)]
    b = np.conj(eig)[key(np.conj(eig))]
    return np.allclose(a, b, rtol=0.0, atol=tol)


def sample_spectrum(prior: SpectralPrior, D: int, seed: int) -> Spectrum:
    """Draw D eigenvalues: floor(D/2) points uniform over the full box,
    each paired with its conjugate, plus one forced-real eigenvalue when D
    is odd."""
    if D < 1:
        raise ValueError("D must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_gen = (D + 1) // 2
    u = rng.random((n_gen, 2))
    draws = np.empty((D, 2))
    n_pairs = D // 2
    for k in range(n_pairs):
        u_w = 2.0 * u[k, 1] - 1.0
        draws[2 * k] = (u[k, 0], u_w)
        draws[2 * k + 1] = (u[k, 0], -u_w)
    if D % 2 == 1:
        draws[D - 1] = (u[n_gen - 1, 0], 0.0)
    return Spectrum(_eigenvalues_from_draws(draws, prior), draws, seed, prior)


def reparameterize(spectrum: Spectrum, prior: SpectralPrior) -> Spectrum:
    """Recompute eigenvalues from the stored draws under a new box."""
    return Spectrum(
        _eigenvalues_from_draws(spectrum.base_draws, prior),
        spectrum.base_draws,
        spectrum.seed,
        prior,
    )


def generator_view(spectrum: Spectrum):
    """Half-spectrum view for kernel evaluation.

    Conjugate pairs contribute 2*Re(term of the generator), so only one
    member per pair needs evaluating.  Falls back to the full spectrum with
    unit multiplicities when the pair-adjacent layout of
    :func:`sample_spectrum` is not detected.  Returns (lambdas,
    multiplicity, partials) where partials[:, k] are d(s)/d(scale_real,
    bias_real) and d(omega)/d(scale_imag, bias_imag).
    """
    D = spectrum.size
    eig = spectrum.eigenvalues
    idx = list(range(0, D - 1, 2))
    adjacent = all(eig[k + 1] == np.conj(eig[k]) for k in idx)
    if adjacent:
        mult = [2.0] * len(idx)
        if D % 2 == 1:
            idx.append(D - 1)
            mult.append(1.0)
    else:
        idx = list(range(D))
        mult = [1.0] * D
    idx = np.array(idx, dtype=np.int64)
    draws = spectrum.base_draws[idx]
    signs = _pair_signs(D)[idx]
    partials = np.column_stack(
        [
            2.0 * draws[:, 0] - 1.0,          # ds / d scale_real
            np.ones(len(idx)),                # ds / d bias_real
            draws[:, 1],                      # domega / d scale_imag
            signs,                            # domega / d bias_imag
        ]
    )
    return eig[idx], np.array(mult), partials
