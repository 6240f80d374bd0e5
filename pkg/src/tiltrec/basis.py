"""Truncated Fourier-Bessel dictionary on the Fourier disc.

A band-limited image with bandlimit ``c`` (cycles per pixel) and real-space
support radius ``R`` (pixels) is represented by complex coefficients on the
orthonormal functions

    psi_{k,q}(xi, theta) = N_{k,q} * J_|k|(R_{|k|,q} * xi / c) * exp(i*k*theta)

for xi <= c, where R_{m,q} is the q-th positive root of the Bessel function
J_m and N_{k,q} = 1 / (c * sqrt(pi) * |J_{|k|+1}(R_{|k|,q})|).  The functions
are orthonormal under the polar measure xi dxi dtheta on the disc of radius
c.  A pair (k, q) is retained when R_{|k|,q+1} <= 2*pi*c*R.

Radial evaluation always uses the non-negative order |k|; with that choice
a coefficient vector satisfying a[-k,q] == (-1)**k * conj(a[k,q]) synthesizes
a real-valued image.  Rotating the image counter-clockwise by gamma maps
a[k,q] -> a[k,q] * exp(-i*k*gamma), which makes every basis-matrix column
steerable: Psi_theta = Psi_0 @ diag(exp(i*k*theta)).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigError

MAX_TILT_SPAN = np.pi / 3.0


def bessel_j(k: int, x):
    """Bessel function of the first kind J_k, integer order k >= 0.

    Accepts scalar or array x.  Values are accurate to ~1e-15 absolute for
    the argument range used here (x <= a few hundred).
    """
    if k < 0:
        raise ValueError(f"order must be non-negative, got {k}")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("bessel_j requires finite arguments")
    out = special.jv(k, x)
    return out if out.ndim else float(out)


def bessel_roots(k: int, count: int) -> np.ndarray:
    """First `count` positive roots of J_k, in increasing order."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return special.jn_zeros(abs(int(k)), count)


@dataclass(frozen=True)
class BasisSpec:
    """Index tables for the truncated dictionary.

    Attributes
    ----------
    c, R : bandlimit (cycles/pixel) and support radius (pixels).
    k_max : largest retained angular frequency.
    q_counts : q_k for k = 0..k_max; counts for negative k mirror these.
    index_map : (k, q) -> flat column index, k in [-k_max, k_max], q in [1, q_k].
    n_a : total number of coefficients.
    k_arr, q_arr : per-column angular frequency and radial index.
    roots : per-column Bessel root R_{|k|, q}.
    norms : per-column normalization N_{k, q} (even in k).
    """

    c: float
    R: float
    k_max: int
    q_counts: tuple
    index_map: dict = field(repr=False)
    n_a: int
    k_arr: np.ndarray = field(repr=False)
    q_arr: np.ndarray = field(repr=False)
    roots: np.ndarray = field(repr=False)
    norms: np.ndarray = field(repr=False)

    def angular_phases(self, theta: float) -> np.ndarray:
        """exp(i * k * theta) per column; the steering diagonal."""
        return np.exp(1j * self.k_arr * theta)


def build_basis_spec(c: float, R: float) -> BasisSpec:
    """Apply the truncation rule and lay out the flat index.

    A pair (k, q) is retained iff R_{|k|, q+1} <= 2*pi*c*R (boundary
    inclusive), so q_k = max{q : R_{k, q+1} <= 2*pi*c*R}.  Columns are
    ordered by k ascending from -k_max to k_max, then q ascending.
    """
    if c <= 0 or R <= 0:
        raise ConfigError(f"c and R must be positive, got c={c}, R={R}")
    bound = 2.0 * np.pi * c * R

    q_counts = []
    k = 0
    while True:
        # need roots up to the first one beyond `bound`
        n_roots = max(8, int(bound / np.pi) + 4)
        roots = bessel_roots(k, n_roots)
        while roots[-1] <= bound:
            n_roots *= 2
            roots = bessel_roots(k, n_roots)
        q_k = int(np.searchsorted(roots, bound, side="right")) - 1
        if q_k < 1:
            break
        q_counts.append(q_k)
        k += 1
    if not q_counts:
        raise ConfigError(
            f"empty basis: 2*pi*c*R = {bound:.4f} retains no (k, q) pair "
            f"for c={c}, R={R}"
        )
    k_max = len(q_counts) - 1

    ks, qs = [], []
    for k in range(-k_max, k_max + 1):
        for q in range(1, q_counts[abs(k)] + 1):
            ks.append(k)
            qs.append(q)
    k_arr = np.array(ks, dtype=int)
    q_arr = np.array(qs, dtype=int)
    index_map = {(int(k), int(q)): i for i, (k, q) in enumerate(zip(k_arr, q_arr))}

    root_table = {k: bessel_roots(k, q_counts[k]) for k in range(k_max + 1)}
    roots = np.array([root_table[abs(k)][q - 1] for k, q in zip(k_arr, q_arr)])
    norms = 1.0 / (c * math.sqrt(math.pi) * np.abs(special.jv(np.abs(k_arr) + 1, roots)))

    return BasisSpec(
        c=float(c),
        R=float(R),
        k_max=k_max,
        q_counts=tuple(q_counts),
        index_map=index_map,
        n_a=len(k_arr),
        k_arr=k_arr,
        q_arr=q_arr,
        roots=roots,
        norms=norms,
    )


@dataclass(frozen=True)
class QuadratureGrid:
    """Gauss-Legendre nodes/weights for integrals over [0, c]."""

    nodes: np.ndarray
    weights: np.ndarray
    n_xi: int
    c: float


def build_quadrature(c: float, n_xi: int) -> QuadratureGrid:
    """Gauss-Legendre rule mapped from [-1, 1] onto [0, c]."""
    if n_xi < 1:
        raise ValueError(f"n_xi must be >= 1, got {n_xi}")
    x, w = np.polynomial.legendre.leggauss(n_xi)
    nodes = 0.5 * c * (x + 1.0)
    weights = 0.5 * c * w
    return QuadratureGrid(nodes=nodes, weights=weights, n_xi=n_xi, c=float(c))


def default_n_xi(grid_size: int) -> int:
    """Node-count default tied to resolution: 2x the pixel count, floor 40."""
    return max(2 * int(grid_size), 40)


@dataclass
class FBCoeffs:
    """Complex coefficient vector over a BasisSpec's columns.

    real_symmetric marks vectors satisfying a[-k,q] == (-1)**k * conj(a[k,q]),
    the condition for a real synthesized image.
    """

    values: np.ndarray
    spec: BasisSpec
    real_symmetric: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.spec.n_a,):
            raise ValueError(
                f"coefficient length {self.values.shape} != n_a {self.spec.n_a}"
            )

    def rotated(self, gamma: float) -> "FBCoeffs":
        """Coefficients of the image rotated counter-clockwise by gamma."""
        return FBCoeffs(
            self.values * np.exp(-1j * self.spec.k_arr * gamma),
            self.spec,
            self.real_symmetric,
        )

    def symmetrized(self) -> "FBCoeffs":
        """Nearest vector with the real-image symmetry."""
        spec = self.spec
        sym = np.empty_like(self.values)
        for (k, q), i in spec.index_map.items():
            j = spec.index_map[(-k, q)]
            sym[i] = 0.5 * (self.values[i] + (-1.0) ** k * np.conj(self.values[j]))
        return FBCoeffs(sym, spec, real_symmetric=True)

    def symmetry_residual(self) -> float:
        """Relative distance from the symmetrized vector."""
        norm = np.linalg.norm(self.values)
        if norm == 0.0:
            return 0.0
        return np.linalg.norm(self.values - self.symmetrized().values) / norm


def _radial_matrix(spec: BasisSpec, grid: QuadratureGrid) -> np.ndarray:
    """Real radial factor N_{k,q} * J_|k|(R_{k,q} xi_j / c), shape (n_xi, n_a)."""
    if not math.isclose(spec.c, grid.c, rel_tol=1e-12):
        raise ValueError(f"bandlimit mismatch: spec c={spec.c}, grid c={grid.c}")
    args = np.outer(grid.nodes / spec.c, spec.roots)
    return special.jv(np.abs(spec.k_arr)[None, :], args) * spec.norms[None, :]


def eval_basis_matrix(spec: BasisSpec, grid: QuadratureGrid, theta: float) -> np.ndarray:
    """Matrix of psi_{k,q}(xi_j, theta), shape (n_xi, n_a)."""
    return _radial_matrix(spec, grid) * spec.angular_phases(theta)[None, :]


def eval_tilt_matrix(
    spec: BasisSpec, grid: QuadratureGrid, K: int, alpha: float
) -> np.ndarray:
    """Vertical stack of eval_basis_matrix at kappa*alpha, kappa = -K..K.

    Row blocks are ordered by kappa ascending; rows within a block follow the
    quadrature nodes.  Shape ((2K+1)*n_xi, n_a).
    """
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    if K * alpha > MAX_TILT_SPAN + 1e-12:
        warnings.warn(
            f"tilt span K*alpha = {K * alpha:.4f} rad exceeds pi/3", stacklevel=2
        )
    radial = _radial_matrix(spec, grid)
    blocks = [
        radial * spec.angular_phases(kappa * alpha)[None, :]
        for kappa in range(-K, K + 1)
    ]
    return np.vstack(blocks)


def synthesize_image(coeffs: FBCoeffs, grid_size: int) -> np.ndarray:
    """Sample the inverse 2-D Fourier transform on a centered Cartesian grid.

    The transform is computed as a polar quadrature over the disc xi <= c:
    Gauss-Legendre radially (2 * default node count) and a uniform angular
    rule wide enough for the phase factor's angular bandwidth.  Pixel (iy, ix)
    holds the value at x = ix - (g-1)/2, y = iy - (g-1)/2 with g = grid_size.

    Raises ValueError for grid_size < 2 or when a coefficient vector without
    the real symmetry leaves a significant imaginary residue.
    """
    if grid_size < 2:
        raise ValueError(f"grid_size must be >= 2, got {grid_size}")
    spec = coeffs.spec
    n_rad = 2 * default_n_xi(grid_size)
    quad = build_quadrature(spec.c, n_rad)

    half = (grid_size - 1) / 2.0
    coords = np.arange(grid_size) - half
    xx, yy = np.meshgrid(coords, coords)  # image[iy, ix] at (x=coords[ix], y=coords[iy])
    r_max = math.hypot(coords[0], coords[0])

    # angular rule: cover exp(i*k*theta) (|k| <= k_max) times the Jacobi-Anger
    # expansion of exp(2i*pi*xi*r*cos) whose bandwidth is ~2*pi*c*r_max
    n_ang = max(4 * spec.k_max + 4, int(2 * np.pi * spec.c * r_max) + 2 * spec.k_max + 16)
    thetas = 2.0 * np.pi * np.arange(n_ang) / n_ang
    d_theta = 2.0 * np.pi / n_ang

    radial = _radial_matrix(spec, quad)  # (n_rad, n_a)
    fhat = (radial * coeffs.values[None, :]) @ np.exp(
        1j * np.outer(spec.k_arr, thetas)
    )  # (n_rad, n_ang)

    # integrate fhat * exp(2i*pi*xi*(x*cos + y*sin)) * xi over the disc
    scaled = fhat * (quad.weights * quad.nodes)[:, None] * d_theta
    proj = (
        np.outer(xx.ravel(), np.cos(thetas)) + np.outer(yy.ravel(), np.sin(thetas))
    )  # (n_pix, n_ang)
    image = np.empty(grid_size * grid_size, dtype=complex)
    # accumulate per angular node to keep the phase array at n_pix x n_rad
    image[:] = 0.0
    for t in range(n_ang):
        phases = np.exp(2j * np.pi * np.outer(proj[:, t], quad.nodes))
        image += phases @ scaled[:, t]
    image = image.reshape(grid_size, grid_size)

    resid = np.max(np.abs(image.imag))
    scale = max(np.max(np.abs(image.real)), 1.0)
    if coeffs.real_symmetric and resid > 1e-10 * scale:
        raise ValueError(f"imaginary residue {resid:.3e} on symmetric coefficients")
    return image.real
