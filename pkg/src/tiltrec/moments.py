"""Moment features of tilt-series ensembles.

The population mean and covariance of a spectral tilt record factor through
the angle distribution's Fourier coefficients: with g[(k,q)] = phat[-k] and
H[(k1,q1),(k2,q2)] = phat[k2-k1],

    mu = Psi (a o g),        C = Psi ((a a^H) o H) Psi^H,

where o is the entrywise product and Psi the stacked tilt matrix.  The same
quantities are estimated from data by the debiased empirical moments; the
diagonal weight sqrt(w_j xi_j), tiled across tilts, turns plain vector/
Frobenius norms of residuals into the disc-measure norms used by the solver.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, FBCoeffs, QuadratureGrid, build_quadrature
from .errors import ConfigError
from .spectral import NoiseModel, SpectralBatch, blockwise_mean_outer


@dataclass(frozen=True)
class PHat:
    """Fourier coefficients phat[m] = sum_l p[l] exp(-2i*pi*m*l/n_theta),
    stored for m = -m_max..m_max."""

    values: np.ndarray
    m_max: int
    n_theta: int

    def __getitem__(self, m: int) -> complex:
        if abs(m) > self.m_max:
            raise IndexError(f"|m| = {abs(m)} exceeds m_max = {self.m_max}")
        return self.values[m + self.m_max]

    def take(self, m: np.ndarray) -> np.ndarray:
        """Vectorized lookup, m any integer array with |m| <= m_max."""
        return self.values[np.asarray(m) + self.m_max]


def p_fourier(p, m_max: int) -> PHat:
    """Exact linear map from a ViewDistribution to its Fourier coefficients.

    Warns when m_max reaches n_theta: frequencies then alias as
    phat[m] = phat[m mod n_theta] (the values stay correct, but distinct m
    no longer carry independent information).
    """
    if m_max < 0:
        raise ConfigError(f"m_max must be >= 0, got {m_max}")
    if m_max >= p.n_theta:
        warnings.warn(
            f"m_max = {m_max} >= n_theta = {p.n_theta}: phat aliases with "
            f"period n_theta",
            stacklevel=2,
        )
    m = np.arange(-m_max, m_max + 1)
    phase = np.exp(-2j * np.pi * np.outer(m, np.arange(p.n_theta)) / p.n_theta)
    return PHat(values=phase @ p.p, m_max=m_max, n_theta=p.n_theta)


def angle_phase_matrix(spec: BasisSpec, n_theta: int) -> np.ndarray:
    """E[i, l] = exp(i * k_i * phi_l), shape (n_a, n_theta).

    Column l is the coefficient-domain steering phase of angle phi_l; it ties
    the factored moment forms to sums over the angle grid:
    g = E @ p and H = sum_l p[l] e_l e_l^H.
    """
    phi = 2.0 * np.pi * np.arange(n_theta) / n_theta
    return np.exp(1j * np.outer(spec.k_arr, phi))


def g_vector(phat: PHat, spec: BasisSpec) -> np.ndarray:
    """Per-column first-moment attenuation g[(k,q)] = phat[-k]."""
    return phat.take(-spec.k_arr)


def h_matrix(phat: PHat, spec: BasisSpec) -> np.ndarray:
    """Second-moment coupling H[(k1,q1),(k2,q2)] = phat[k2 - k1]; Hermitian."""
    return phat.take(spec.k_arr[None, :] - spec.k_arr[:, None])


def analytic_first_moment(a: FBCoeffs, phat: PHat, psi: np.ndarray) -> np.ndarray:
    """Population mean Psi (a o g) of a spectral tilt record."""
    return psi @ (a.values * g_vector(phat, a.spec))


def analytic_second_moment(a: FBCoeffs, phat: PHat, psi: np.ndarray) -> np.ndarray:
    """Population second moment Psi ((a a^H) o H) Psi^H, symmetrized."""
    if phat.m_max < 2 * a.spec.k_max:
        raise ConfigError(
            f"phat covers |m| <= {phat.m_max}, need 2*k_max = {2 * a.spec.k_max}"
        )
    inner = np.outer(a.values, a.values.conj()) * h_matrix(phat, a.spec)
    C = psi @ inner @ psi.conj().T
    return 0.5 * (C + C.conj().T)


def weight_diagonal(quad: QuadratureGrid, K: int) -> np.ndarray:
    """Entries sqrt(w_j xi_j), tiled over the 2K+1 tilt blocks."""
    return np.tile(np.sqrt(quad.weights * quad.nodes), 2 * K + 1)


@dataclass(frozen=True)
class MomentFeatures:
    """Debiased (or population) moment pair plus the weighting diagonal.

    mu and C are unweighted; d_w holds the diagonal weights so consumers can
    form mu_w = d_w * mu and C_w = d_w[:, None] * C * d_w[None, :].  N is the
    sample count behind the estimate; N = 0 marks population (analytic)
    features.  quad, K, alpha record the acquisition geometry so the solver
    stage can rebuild the tilt matrix without the raw batch.
    """

    mu: np.ndarray
    C: np.ndarray
    N: int
    d_w: np.ndarray
    quad: QuadratureGrid
    K: int
    alpha: float

    def __post_init__(self):
        width = (2 * self.K + 1) * self.quad.n_xi
        if self.mu.shape != (width,) or self.C.shape != (width, width):
            raise ConfigError(
                f"moment shapes {self.mu.shape}/{self.C.shape} inconsistent "
                f"with (2K+1)*n_xi = {width}"
            )
        herm = np.linalg.norm(self.C - self.C.conj().T)
        scale = max(np.linalg.norm(self.C), 1e-300)
        if herm > 1e-10 * scale:
            raise ConfigError(f"C not Hermitian: relative skew {herm / scale:.3e}")
        if np.any(self.d_w <= 0):
            raise ConfigError("weight diagonal must be strictly positive")

    def weighted(self) -> tuple[np.ndarray, np.ndarray]:
        """(mu_w, C_w) with the diagonal applied."""
        d = self.d_w
        return d * self.mu, d[:, None] * self.C * d[None, :]


def population_features(
    a: FBCoeffs, p, psi: np.ndarray, quad: QuadratureGrid, K: int, alpha: float
) -> MomentFeatures:
    """Analytic (infinite-N) features of ground truth (a, p); N = 0."""
    phat = p_fourier(p, 2 * a.spec.k_max)
    return MomentFeatures(
        mu=analytic_first_moment(a, phat, psi),
        C=analytic_second_moment(a, phat, psi),
        N=0,
        d_w=weight_diagonal(quad, K),
        quad=quad,
        K=K,
        alpha=alpha,
    )


def empirical_moments(spec_batch: SpectralBatch, noise: NoiseModel) -> MomentFeatures:
    """Debiased empirical moments: mean row, and mean outer product minus the
    noise covariance, Hermitian-symmetrized."""
    if spec_batch.N < 1:
        raise ConfigError("empty batch: need N >= 1 records")
    mu, raw = blockwise_mean_outer(spec_batch.yhat)
    C = raw - noise.full(spec_batch.K)
    C = 0.5 * (C + C.conj().T)
    return MomentFeatures(
        mu=mu,
        C=C,
        N=spec_batch.N,
        d_w=weight_diagonal(spec_batch.quad, spec_batch.K),
        quad=spec_batch.quad,
        K=spec_batch.K,
        alpha=spec_batch.alpha,
    )


def moment_residuals(
    a: FBCoeffs,
    phat: PHat,
    psi_w: np.ndarray,
    features: MomentFeatures,
    lam1: float = 1.0,
    lam2: float = 0.5,
):
    """Weighted data-fit residuals and the scalar objective.

    psi_w must be the pre-weighted tilt matrix (d_w applied to its rows).
    Returns (first-moment residual vector, second-moment residual matrix,
    lam1/2 * ||r1||^2 + lam2/2 * ||r2||_F^2).
    """
    mu_w, C_w = features.weighted()
    r1 = analytic_first_moment(a, phat, psi_w) - mu_w
    r2 = analytic_second_moment(a, phat, psi_w) - C_w
    obj = 0.5 * lam1 * float(np.vdot(r1, r1).real) + 0.5 * lam2 * float(
        np.vdot(r2, r2).real
    )
    return r1, r2, obj


def save_features(features: MomentFeatures, path: str):
    """JSON header line + little-endian complex128 payload (mu, then C)."""
    header = {
        "N": features.N,
        "K": features.K,
        "alpha": features.alpha,
        "c": features.quad.c,
        "n_xi": features.quad.n_xi,
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(features.mu, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(features.C, dtype="<c16").tobytes())


def load_features(path: str) -> MomentFeatures:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        payload = fh.read()
    quad = build_quadrature(header["c"], header["n_xi"])
    K = header["K"]
    width = (2 * K + 1) * quad.n_xi
    data = np.frombuffer(payload, dtype="<c16")
    if data.size != width + width * width:
        raise ConfigError(
            f"payload holds {data.size} complex values, expected "
            f"{width + width * width}"
        )
    return MomentFeatures(
        mu=data[:width].copy(),
        C=data[width:].reshape(width, width).copy(),
        N=header["N"],
        d_w=weight_diagonal(quad, K),
        quad=quad,
        K=K,
        alpha=header["alpha"],
    )
