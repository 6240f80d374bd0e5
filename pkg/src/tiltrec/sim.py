"""Observation-model simulator.

Generates band-limited phantoms, draws hidden view angles from a discrete
distribution over n_theta equispaced candidates, and produces clean or noisy
projection tilt series.  One record is a group of 2K+1 projection lines of
the same object at angles theta_i + kappa*alpha, kappa = -K..K, sampled on L
equispaced points and corrupted by i.i.d. Gaussian noise of variance sigma2.

Batches are reproducible: record i consumes only the substream spawned from
(seed, i), so generation order (or parallel generation) cannot change the
output.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .basis import (
    MAX_TILT_SPAN,
    BasisSpec,
    FBCoeffs,
    QuadratureGrid,
    eval_basis_matrix,
)
from .errors import ConfigError

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ViewDistribution:
    """Probability mass over the angle grid phi_l = 2*pi*l/n_theta."""

    p: np.ndarray
    n_theta: int

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "p", p)
        if p.shape != (self.n_theta,):
            raise ConfigError(f"p has shape {p.shape}, expected ({self.n_theta},)")
        if np.any(p < 0):
            raise ConfigError(f"negative probability: min(p) = {p.min():.3e}")
        if abs(p.sum() - 1.0) > _SUM_TOL:
            raise ConfigError(f"probabilities sum to {p.sum():.15f}, not 1")

    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta


def uniform_distribution(n_theta: int) -> ViewDistribution:
    return ViewDistribution(np.full(n_theta, 1.0 / n_theta), n_theta)


def bump_distribution(n_theta: int, loc: float, kappa: float) -> ViewDistribution:
    """Discretized circular bump exp(kappa*cos(phi - loc)), normalized.

    kappa = 0 recovers the uniform distribution; larger kappa concentrates
    mass near loc.  Any kappa > 0 with generic loc gives an aperiodic p
    (no nontrivial cyclic-shift symmetry), which the moment solver needs.
    """
    phi = 2.0 * np.pi * np.arange(n_theta) / n_theta
    w = np.exp(kappa * np.cos(phi - loc))
    p = w / w.sum()
    p = p / p.sum()
    return ViewDistribution(p, n_theta)


def two_bump_distribution(
    n_theta: int,
    loc1: float,
    loc2: float,
    kappa: float,
    weight: float = 0.5,
) -> ViewDistribution:
    """Mixture of two circular bumps; weight is the mass of the first."""
    if not 0.0 <= weight <= 1.0:
        raise ConfigError(f"mixture weight must be in [0, 1], got {weight}")
    p1 = bump_distribution(n_theta, loc1, kappa).p
    p2 = bump_distribution(n_theta, loc2, kappa).p
    p = weight * p1 + (1.0 - weight) * p2
    p = p / p.sum()
    return ViewDistribution(p, n_theta)


@dataclass(frozen=True)
class LineGrid:
    """Equispaced sample positions along a projection line.

    positions x_l = (l - (L-1)/2) * dx, symmetric about 0.
    """

    L: int
    dx: float
    positions: np.ndarray

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if self.dx <= 0:
            raise ConfigError(f"dx must be positive, got {self.dx}")


def build_line_grid(L: int, dx: float = 1.0) -> LineGrid:
    positions = (np.arange(L) - (L - 1) / 2.0) * dx
    return LineGrid(L=int(L), dx=float(dx), positions=positions)


@dataclass(frozen=True)
class TiltSeriesBatch:
    """N tilt-series records: samples[i, kappa+K, l] = y_{i,kappa}[x_l]."""

    samples: np.ndarray
    K: int
    alpha: float
    sigma2: float
    grid: LineGrid
    seed: int
    n_theta: int
    hidden_angles: np.ndarray | None = None

    def __post_init__(self):
        N = self.samples.shape[0]
        expect = (N, 2 * self.K + 1, self.grid.L)
        if self.samples.shape != expect:
            raise ConfigError(f"samples shape {self.samples.shape} != {expect}")
        if self.sigma2 < 0:
            raise ConfigError(f"sigma2 must be >= 0, got {self.sigma2}")

    @property
    def N(self) -> int:
        return self.samples.shape[0]


def random_phantom(
    spec: BasisSpec, decay: float, realize: bool = True, seed: int = 0
) -> FBCoeffs:
    """Random band-limited object with a decaying coefficient envelope.

    Coefficients are i.i.d. complex Gaussian with standard deviation
    exp(-decay * R_{k,q} / (2*pi*c*R)); realize=True replaces the draw by its
    nearest real-image-symmetric vector and sets the symmetry flag.
    """
    if decay <= 0:
        raise ConfigError(f"decay must be positive, got {decay}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    envelope = np.exp(-decay * spec.roots / (2.0 * np.pi * spec.c * spec.R))
    raw = envelope * (
        rng.standard_normal(spec.n_a) + 1j * rng.standard_normal(spec.n_a)
    )
    coeffs = FBCoeffs(raw, spec)
    return coeffs.symmetrized() if realize else coeffs


def _check_support(spec: BasisSpec, grid: LineGrid):
    if grid.L * grid.dx < 2.0 * spec.R - 1e-9:
        warnings.warn(
            f"line window L*dx = {grid.L * grid.dx:.2f} shorter than the "
            f"object diameter 2R = {2 * spec.R:.2f}",
            stacklevel=3,
        )


def project_clean(
    coeffs: FBCoeffs, theta: float, grid: LineGrid, quad: QuadratureGrid
) -> np.ndarray:
    """Clean projection line at view angle theta, sampled on grid.positions.

    Computed through the Fourier slice: the 1-D spectrum of the projection is
    the radial slice of the object's 2-D transform.  The inverse transform
    over (-c, c) splits into the [0, c] quadrature plus its mirror, where the
    negative-frequency half-slice at theta equals the positive half at
    theta + pi.  Real-symmetric coefficients give a real line (residue
    checked at 1e-10 relative); without the flag the real part is returned
    as-is.
    """
    spec = coeffs.spec
    _check_support(spec, grid)
    fwd = eval_basis_matrix(spec, quad, theta) @ coeffs.values
    rev = eval_basis_matrix(spec, quad, theta + np.pi) @ coeffs.values
    phase = np.exp(2j * np.pi * np.outer(grid.positions, quad.nodes))
    line = phase @ (quad.weights * fwd) + np.conj(phase) @ (quad.weights * rev)

    if coeffs.real_symmetric:
        scale = max(float(np.max(np.abs(line.real))), 1e-300)
        resid = float(np.max(np.abs(line.imag)))
        if resid > 1e-10 * scale:
            raise ValueError(
                f"imaginary residue {resid:.3e} on a symmetric projection"
            )
    return line.real


def _draw_index(u: float, cdf: np.ndarray) -> int:
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def generate_batch(
    coeffs: FBCoeffs,
    p: ViewDistribution,
    N: int,
    K: int,
    alpha: float,
    sigma2: float,
    grid: LineGrid,
    quad: QuadratureGrid,
    seed: int = 0,
) -> TiltSeriesBatch:
    """Draw N records: hidden angle theta_i = phi_{l_i} with l_i ~ p, then
    y_{i,kappa} = P_{theta_i + kappa*alpha}(f) + Gaussian noise.

    Record i consumes only the substream spawned from (seed, i): first one
    uniform draw for l_i, then the noise block, so batches are deterministic
    in seed regardless of generation order.
    """
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    if sigma2 < 0:
        raise ConfigError(f"sigma2 must be >= 0, got {sigma2}")
    if K * alpha > MAX_TILT_SPAN + 1e-12:
        warnings.warn(
            f"tilt span K*alpha = {K * alpha:.4f} rad exceeds pi/3", stacklevel=2
        )
    _check_support(coeffs.spec, grid)

    cdf = np.cumsum(p.p)
    sigma = float(np.sqrt(sigma2))
    n_tilt = 2 * K + 1

    streams = [
        np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        for i in range(N)
    ]
    labels = np.array([_draw_index(rng.random(), cdf) for rng in streams], dtype=int)

    # clean lines depend on i only through l_i: tabulate the used angles once
    kappas = np.arange(-K, K + 1)
    table = {}
    for l in np.unique(labels):
        theta = 2.0 * np.pi * l / p.n_theta
        rows = [
            project_clean(coeffs, (theta + k * alpha) % (2.0 * np.pi), grid, quad)
            for k in kappas
        ]
        table[int(l)] = np.array(rows)

    samples = np.empty((N, n_tilt, grid.L))
    for i, (rng, l) in enumerate(zip(streams, labels)):
        clean = table[int(l)]
        if sigma > 0.0:
            samples[i] = clean + sigma * rng.standard_normal((n_tilt, grid.L))
        else:
            samples[i] = clean

    return TiltSeriesBatch(
        samples=samples,
        K=K,
        alpha=float(alpha),
        sigma2=float(sigma2),
        grid=grid,
        seed=int(seed),
        n_theta=p.n_theta,
        hidden_angles=labels,
    )


def save_batch(batch: TiltSeriesBatch, path: str):
    """One JSON header line, then the little-endian float64 payload.

    Payload order: samples (C order, N x (2K+1) x L), then the hidden angle
    indices as float64 when present.
    """
    header = {
        "N": batch.N,
        "K": batch.K,
        "L": batch.grid.L,
        "alpha": batch.alpha,
        "sigma2": batch.sigma2,
        "seed": batch.seed,
        "n_theta": batch.n_theta,
        "dx": batch.grid.dx,
        "hidden_angles": batch.hidden_angles is not None,
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(batch.samples, dtype="<f8").tobytes())
        if batch.hidden_angles is not None:
            fh.write(batch.hidden_angles.astype("<f8").tobytes())


def load_batch(path: str) -> TiltSeriesBatch:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        payload = fh.read()
    N, K, L = header["N"], header["K"], header["L"]
    n_main = N * (2 * K + 1) * L
    data = np.frombuffer(payload, dtype="<f8")
    expected = n_main + (N if header["hidden_angles"] else 0)
    if data.size != expected:
        raise ConfigError(
            f"payload holds {data.size} float64 values, expected {expected}"
        )
    samples = data[:n_main].reshape(N, 2 * K + 1, L).copy()
    hidden = data[n_main:].astype(int) if header["hidden_angles"] else None
    return TiltSeriesBatch(
        samples=samples,
        K=K,
        alpha=header["alpha"],
        sigma2=header["sigma2"],
        grid=build_line_grid(L, header["dx"]),
        seed=header["seed"],
        n_theta=header["n_theta"],
        hidden_angles=hidden,
    )
