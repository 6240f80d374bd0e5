"""Consensus ADMM for the weighted moment-matching least squares.

The data-fit objective couples the object coefficients a and the angle
distribution p through

    lam1/2 ||Psi_w (a o g(p)) - mu_w||^2
  + lam2/2 ||Psi_w ((a a^H) o H(p)) Psi_w^H - C_w||_F^2 ,

which is nonconvex because the second term is quartic in a.  Splitting the
two copies of a into consensus variables (a, z) with a scaled dual s makes
every block update an exact linear solve:

  - a-step: both terms are linear in a for fixed (z, p); ridge rho.
  - z-step: the second term is anti-linear in z; conjugating the residual
    (H and C_w are Hermitian) turns it into the same structure as the a-step.
  - p-step: both moment models are linear in p; the single constraint
    sum(p) = 1 is eliminated through an orthonormal null-space basis.
    Nonnegativity is NOT enforced during iterations; the reported p is the
    simplex projection of the relaxed iterate (both are returned).

Everything is accumulated in coefficient-sized (n_a or n_theta) normal
equations; the observation-sized operator never has to be materialized.  The
identity behind the compression: for rank-one blocks,
<psi_i u_i^H, psi_j u_j^H>_F = (psi_j^H psi_i) (u_i^H u_j), so Gram matrices
of sums of rank-one terms are entrywise (Schur) products of small Grams.
A dense route (build_a2_matrix) exists for cross-checking at small sizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, FBCoeffs, eval_tilt_matrix
from .errors import ConfigError, SolverError
from .moments import MomentFeatures, angle_phase_matrix
from .sim import ViewDistribution

logger = logging.getLogger(__name__)

_DIVERGE_LIMIT = 1e12


@dataclass(frozen=True)
class AdmmConfig:
    lam1: float = 1.0
    lam2: float = 0.5
    rho: float = 1.0
    max_iter: int = 500
    tol_primal: float | None = None  # default 1e-6 * sqrt(n_a), set at run time
    tol_change: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.lam1 < 0 or self.lam2 < 0:
            raise ConfigError(
                f"lam1/lam2 must be >= 0, got {self.lam1}, {self.lam2}"
            )
        if self.rho <= 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")

    def primal_tol(self, n_a: int) -> float:
        return self.tol_primal if self.tol_primal is not None else 1e-6 * np.sqrt(n_a)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {p : p >= 0, sum(p) = 1} (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho_idx = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho_idx] / (rho_idx + 1.0)
    return np.maximum(v - tau, 0.0)


class AdmmWorkspace:
    """Precomputed operator pieces shared by every iteration.

    All data enters through sizes n_a x n_a or smaller: the weighted tilt
    matrix's Gram G, the data-side compressions t_mu = Psi_w^H mu_w and
    T_C = Psi_w^H C_w Psi_w, the squared data norms, and the angle phase
    matrix E.
    """

    def __init__(self, features: MomentFeatures, spec: BasisSpec, n_theta: int):
        self.spec = spec
        self.n_theta = int(n_theta)
        psi = eval_tilt_matrix(spec, features.quad, features.K, features.alpha)
        mu_w, C_w = features.weighted()
        self.psi_w = features.d_w[:, None] * psi
        self.mu_w = mu_w
        self.C_w = C_w
        self.G = self.psi_w.conj().T @ self.psi_w
        self.G = 0.5 * (self.G + self.G.conj().T)
        self.t_mu = self.psi_w.conj().T @ mu_w
        TC = self.psi_w.conj().T @ C_w @ self.psi_w
        self.T_C = 0.5 * (TC + TC.conj().T)
        self.mu_norm2 = float(np.vdot(mu_w, mu_w).real)
        self.C_norm2 = float(np.vdot(C_w, C_w).real)
        self.E = angle_phase_matrix(spec, n_theta)
        # orthonormal basis of {x : sum(x) = 0}, fixed and deterministic
        q, _ = np.linalg.qr(
            np.vstack([np.ones(n_theta), np.eye(n_theta)[: n_theta - 1]]).T
        )
        self.null_basis = q[:, 1:]
        self.p_rank_warned = False

    def g_of(self, p: np.ndarray) -> np.ndarray:
        """First-moment attenuation g = E p (valid for relaxed p too)."""
        return self.E @ p

    def h_of(self, p: np.ndarray) -> np.ndarray:
        """Second-moment coupling H = sum_l p[l] e_l e_l^H."""
        return (self.E * p[None, :]) @ self.E.conj().T

    def first_term(self, v: np.ndarray) -> float:
        """||Psi_w v - mu_w||^2 via the compressed pieces; v = a o g."""
        quad = float(np.vdot(v, self.G @ v).real)
        cross = float(np.vdot(self.t_mu, v).real)
        return max(quad - 2.0 * cross + self.mu_norm2, 0.0)

    def second_term(self, M: np.ndarray) -> float:
        """||Psi_w M Psi_w^H - C_w||_F^2 for the n_a x n_a inner matrix M."""
        quad = float(np.vdot(M, self.G @ M @ self.G).real)  # tr(M^H G M G)
        cross = float(np.vdot(self.T_C, M).real)
        return max(quad - 2.0 * cross + self.C_norm2, 0.0)


@dataclass
class AdmmState:
    """Mutable iterate of the splitting: primal blocks a, z, the relaxed
    distribution p, scaled dual s, iteration counter, and history lists."""

    a: np.ndarray
    z: np.ndarray
    p: np.ndarray
    s: np.ndarray
    iter: int
    history: dict = field(default_factory=lambda: {
        "iter": [], "objective": [], "primal": [], "lagrangian": [],
    })
    work: AdmmWorkspace | None = None

    def require_work(self) -> AdmmWorkspace:
        if self.work is None:
            raise ConfigError("state has no attached workspace")
        return self.work


def init_admm_state(
    features: MomentFeatures, config: AdmmConfig, spec: BasisSpec, n_theta: int
) -> AdmmState:
    """Random start: a, z i.i.d. complex Gaussian scaled to the first
    moment's norm; p uniform plus seeded noise, simplex-projected; s = 0."""
    work = AdmmWorkspace(features, spec, n_theta)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    scale = np.linalg.norm(work.mu_w) / np.sqrt(spec.n_a)
    scale = scale if scale > 0 else 1.0
    draw = lambda: scale * (
        rng.standard_normal(spec.n_a) + 1j * rng.standard_normal(spec.n_a)
    ) / np.sqrt(2.0)
    a0 = draw()
    z0 = draw()
    p0 = project_simplex(
        np.full(n_theta, 1.0 / n_theta) + 0.5 / n_theta * rng.standard_normal(n_theta)
    )
    return AdmmState(
        a=a0, z=z0, p=p0, s=np.zeros(spec.n_a, dtype=complex), iter=0, work=work
    )


def _second_gram_pieces(work: AdmmWorkspace, fixed: np.ndarray, H: np.ndarray):
    """Gram and data-correlation of a ||Psi_w ((x fixed^H) o H) Psi_w^H - C_w||
    block, compressed to n_a x n_a.

    With W = fixed[:, None] * H, the Gram is G o conj(W^H G W) and the data
    term is diag(T_C W).
    """
    W = fixed[:, None] * H
    GW = work.G @ W
    Gu = W.conj().T @ GW
    gram = work.G * Gu.conj()
    rhs = np.einsum("ij,ji->i", work.T_C, W)
    return gram, rhs


def build_a2_matrix(work: AdmmWorkspace, fixed: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Dense route: the (M^2, n_a) matrix whose column i is
    vec(psi_i (Psi_w (fixed o conj(H[i, :])))^H).

    Applying it to x gives vec(Psi_w ((x fixed^H) o H) Psi_w^H).  Exists for
    cross-checking the compressed route; guarded against runaway sizes.
    """
    M = work.psi_w.shape[0]
    n_a = work.psi_w.shape[1]
    if M * M * n_a > 5e7:
        raise ConfigError(
            f"dense second-moment operator would hold {M * M * n_a} entries; "
            f"use the compressed route"
        )
    # H Hermitian makes fixed o conj(H[i, :]) the i-th column of fixed[:,None]*H
    U = work.psi_w @ (fixed[:, None] * H)
    out = np.empty((M * M, n_a), dtype=complex)
    for i in range(n_a):
        out[:, i] = np.outer(work.psi_w[:, i], U[:, i].conj()).ravel()
    return out


def update_a(state: AdmmState, features: MomentFeatures, config: AdmmConfig) -> np.ndarray:
    """Exact minimizer of the augmented Lagrangian over a (z, p, s fixed)."""
    work = state.require_work()
    g = work.g_of(state.p)
    H = work.h_of(state.p)
    lhs = config.rho * np.eye(work.spec.n_a, dtype=complex)
    rhs = config.rho * (state.z - state.s)
    if config.lam1 > 0:
        lhs = lhs + config.lam1 * (np.conj(g)[:, None] * work.G * g[None, :])
        rhs = rhs + config.lam1 * np.conj(g) * work.t_mu
    if config.lam2 > 0:
        gram2, rhs2 = _second_gram_pieces(work, state.z, H)
        lhs = lhs + config.lam2 * gram2
        rhs = rhs + config.lam2 * rhs2
    a_new = np.linalg.solve(lhs, rhs)
    if not np.all(np.isfinite(a_new)):
        raise SolverError(
            f"a-update produced non-finite values at iteration {state.iter}",
            history=state.history,
        )
    return a_new


def update_z(state: AdmmState, features: MomentFeatures, config: AdmmConfig) -> np.ndarray:
    """Exact minimizer over z.  The second-moment residual satisfies
    ||X - C_w||_F = ||X^H - C_w||_F (C_w Hermitian), and X^H swaps the roles
    of a and z, so the solve mirrors the a-step with penalty center a + s."""
    work = state.require_work()
    H = work.h_of(state.p)
    lhs = config.rho * np.eye(work.spec.n_a, dtype=complex)
    rhs = config.rho * (state.a + state.s)
    if config.lam2 > 0:
        gram2, rhs2 = _second_gram_pieces(work, state.a, H)
        lhs = lhs + config.lam2 * gram2
        rhs = rhs + config.lam2 * rhs2
    z_new = np.linalg.solve(lhs, rhs)
    if not np.all(np.isfinite(z_new)):
        raise SolverError(
            f"z-update produced non-finite values at iteration {state.iter}",
            history=state.history,
        )
    return z_new


def update_p(state: AdmmState, features: MomentFeatures, config: AdmmConfig) -> np.ndarray:
    """Exact equality-constrained least squares over the real vector p.

    Both moment models are linear in p:
      mu-model  = Psi_w diag(a) E p,
      C-model   = sum_l p[l] (Psi_w (a o e_l)) (Psi_w (z o e_l))^H,
    so the normal equations compress through A_a = diag(a) E and
    A_z = diag(z) E.  sum(p) = 1 is eliminated with the orthonormal basis of
    the zero-sum subspace.  The reduced system is solved by lstsq: when some
    of p is unobservable (fewer than n_theta - 1 moment harmonics) the system
    is consistent but rank-deficient, and the minimum-norm solution keeps the
    unobservable component at zero instead of amplifying noise into it; the
    first such solve logs a warning.
    """
    work = state.require_work()
    n_t = work.n_theta
    A_a = state.a[:, None] * work.E
    GA_a = work.G @ A_a
    N1 = A_a.conj().T @ GA_a  # = B1^H B1
    lhs = np.zeros((n_t, n_t))
    rhs = np.zeros(n_t)
    if config.lam1 > 0:
        lhs = lhs + config.lam1 * N1.real
        rhs = rhs + config.lam1 * (A_a.conj().T @ work.t_mu).real
    if config.lam2 > 0:
        A_z = state.z[:, None] * work.E
        Gu = A_z.conj().T @ (work.G @ A_z)
        lhs = lhs + config.lam2 * (N1 * Gu.conj()).real
        rhs = rhs + config.lam2 * np.einsum(
            "li,ij,jl->l", A_a.conj().T, work.T_C, A_z
        ).real
    B = work.null_basis
    p_part = np.full(n_t, 1.0 / n_t)
    red_lhs = B.T @ lhs @ B
    red_rhs = B.T @ (rhs - lhs @ p_part)
    q, _, rank, _ = np.linalg.lstsq(red_lhs, red_rhs, rcond=None)
    if rank < n_t - 1 and not work.p_rank_warned:
        logger.warning(
            "p-update normal system rank-deficient (rank %d of %d); "
            "using the minimum-norm solution",
            rank,
            n_t - 1,
        )
        work.p_rank_warned = True
    p_new = p_part + B @ q
    if not np.all(np.isfinite(p_new)):
        raise SolverError(
            f"p-update produced non-finite values at iteration {state.iter}",
            history=state.history,
        )
    return p_new


def augmented_lagrangian(
    state: AdmmState, features: MomentFeatures, config: AdmmConfig
) -> float:
    """Scaled-dual augmented Lagrangian
    lam1/2 ||A1 a - mu_w||^2 + lam2/2 ||A2(z) a - C_w||_F^2
    + rho/2 ||a - z + s||^2 - rho/2 ||s||^2."""
    work = state.require_work()
    g = work.g_of(state.p)
    H = work.h_of(state.p)
    M = np.outer(state.a, state.z.conj()) * H
    val = 0.5 * config.lam1 * work.first_term(state.a * g)
    val += 0.5 * config.lam2 * work.second_term(M)
    gap = state.a - state.z + state.s
    val += 0.5 * config.rho * float(np.vdot(gap, gap).real)
    val -= 0.5 * config.rho * float(np.vdot(state.s, state.s).real)
    return val


def moment_objective(work: AdmmWorkspace, a: np.ndarray, p: np.ndarray,
                     lam1: float, lam2: float) -> float:
    """Unsplit data-fit objective at consensus (z = a)."""
    g = work.g_of(p)
    H = work.h_of(p)
    M = np.outer(a, a.conj()) * H
    return 0.5 * lam1 * work.first_term(a * g) + 0.5 * lam2 * work.second_term(M)


@dataclass(frozen=True)
class AdmmResult:
    """Final estimate: consensus coefficients, simplex-projected p (primary),
    the relaxed p iterate (diagnostic), history, and termination info."""

    a: FBCoeffs
    p: ViewDistribution
    p_relaxed: np.ndarray
    history: dict
    n_iter: int
    converged: bool
    symmetry_residual: float


def run_admm(
    features: MomentFeatures,
    config: AdmmConfig,
    spec: BasisSpec,
    n_theta: int,
    state: AdmmState | None = None,
) -> AdmmResult:
    """Alg.: repeat a-step, z-step, p-step, dual step s += a - z, until the
    primal gap ||a - z|| and the Lagrangian change pass their tolerances or
    max_iter is reached.

    An explicit initial `state` overrides the seeded random initialization
    (used to share starts across methods).  Raises SolverError (history
    attached) on divergence.
    """
    if state is None:
        state = init_admm_state(features, config, spec, n_theta)
    work = state.require_work()
    tol_primal = config.primal_tol(spec.n_a)
    last_lag = None
    converged = False

    for _ in range(config.max_iter):
        state.a = update_a(state, features, config)
        state.z = update_z(state, features, config)
        state.p = update_p(state, features, config)
        state.s = state.s + state.a - state.z
        state.iter += 1

        lag = augmented_lagrangian(state, features, config)
        primal = float(np.linalg.norm(state.a - state.z))
        consensus = 0.5 * (state.a + state.z)
        obj = moment_objective(work, consensus, state.p, config.lam1, config.lam2)
        state.history["iter"].append(state.iter)
        state.history["objective"].append(obj)
        state.history["primal"].append(primal)
        state.history["lagrangian"].append(lag)

        if not np.isfinite(lag) or obj > _DIVERGE_LIMIT:
            raise SolverError(
                f"diverged at iteration {state.iter}: objective {obj:.3e}",
                history=state.history,
            )
        if last_lag is not None:
            change = abs(lag - last_lag) / max(abs(last_lag), 1.0)
            if primal <= tol_primal and change <= config.tol_change:
                converged = True
                break
        last_lag = lag

    consensus = 0.5 * (state.a + state.z)
    a_out = FBCoeffs(consensus, spec)
    p_proj = project_simplex(state.p)
    p_proj = p_proj / p_proj.sum()
    return AdmmResult(
        a=a_out,
        p=ViewDistribution(p_proj, n_theta),
        p_relaxed=state.p.copy(),
        history=state.history,
        n_iter=state.iter,
        converged=converged,
        symmetry_residual=a_out.symmetry_residual(),
    )


def history_to_csv(history: dict, path: str):
    """iter, objective, primal residual, Lagrangian per line."""
    rows = zip(
        history["iter"], history["objective"], history["primal"], history["lagrangian"]
    )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("iter,objective,primal_residual,lagrangian\n")
        for it, obj, pr, lag in rows:
            fh.write(f"{it},{obj:.17g},{pr:.17g},{lag:.17g}\n")
