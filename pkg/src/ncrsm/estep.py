"""E-step: hard mode assignment and the two-direction Kalman filter.

The anticausal state is filtered backward in time and the causal state
forward in time. Both corrections share one innovation

    e(t) = y(t) - C_c x_c^-(t) - C_a x_a^-(t)

whose covariance ``S = C_c P_c^- C_c' + C_a P_a^- C_a' + Sigma_m`` treats the
two prior errors and the measurement noise as independent. Within one sweep
the backward pass takes its causal prior from the previous sweep (zero mean
on the very first one) and the forward pass then uses the fresh anticausal
priors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .model import ModelParams, symmetrize

logger = logging.getLogger(__name__)

LOG2PI = np.log(2.0 * np.pi)
REG_LAMBDA = 1e-8
DEFAULT_INIT_COV = 10.0


class FilterDivergenceError(RuntimeError):
    def __init__(self, msg, t=None):
        super().__init__(msg)
        self.t = t


@dataclass(frozen=True)
class ModeAssignment:
    """One-hot mode weights with the tables they were read from."""

    s_c_hat: np.ndarray  # (T,) 0-based
    s_a_hat: np.ndarray  # (T,)
    m_c: int
    m_a: int
    tables: Optional[np.ndarray] = None  # (T, m_c, m_a) joint log-likelihoods

    def __post_init__(self):
        object.__setattr__(self, "s_c_hat", np.asarray(self.s_c_hat, dtype=np.int64).ravel())
        object.__setattr__(self, "s_a_hat", np.asarray(self.s_a_hat, dtype=np.int64).ravel())

    @property
    def T(self) -> int:
        return self.s_c_hat.size

    @property
    def w_c(self) -> np.ndarray:
        return np.eye(self.m_c)[self.s_c_hat]

    @property
    def w_a(self) -> np.ndarray:
        return np.eye(self.m_a)[self.s_a_hat]

    @classmethod
    def from_sequences(cls, s_c, s_a, m_c, m_a) -> "ModeAssignment":
        return cls(np.asarray(s_c), np.asarray(s_a), m_c, m_a)


@dataclass(frozen=True)
class FilterResult:
    """Output of one coupled filter sweep.

    ``innovations``/``S`` come from the forward (causal) pass, the ``_a``
    suffixed ones from the backward pass. ``x_c_prior`` at index ``t`` is the
    prediction of ``x_c(t)`` before seeing ``y(t)``.
    """

    x_c_hat: np.ndarray
    x_a_hat: np.ndarray
    x_c_prior: np.ndarray
    x_a_prior: np.ndarray
    P_c: np.ndarray
    P_a: np.ndarray
    P_c_prior: np.ndarray
    P_a_prior: np.ndarray
    K_c: np.ndarray
    K_a: np.ndarray
    innovations: np.ndarray
    S: np.ndarray
    innovations_a: np.ndarray
    S_a: np.ndarray
    y: np.ndarray
    x_c0: np.ndarray
    x_aT1: np.ndarray
    flags: tuple = field(default_factory=tuple)

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @classmethod
    def from_states(cls, x_c, x_a, y, x_c0, x_aT1) -> "FilterResult":
        """Known states with zero uncertainty, e.g. the true states of a simulation."""
        x_c = np.asarray(x_c, dtype=float)
        x_a = np.asarray(x_a, dtype=float)
        y = np.asarray(y, dtype=float).reshape(len(y), -1)
        T, n_y = y.shape
        zc = np.zeros((T, x_c.shape[1], x_c.shape[1]))
        za = np.zeros((T, x_a.shape[1], x_a.shape[1]))
        return cls(
            x_c_hat=x_c, x_a_hat=x_a, x_c_prior=x_c, x_a_prior=x_a,
            P_c=zc, P_a=za, P_c_prior=zc, P_a_prior=za,
            K_c=np.zeros((T, x_c.shape[1], n_y)), K_a=np.zeros((T, x_a.shape[1], n_y)),
            innovations=np.zeros_like(y), S=np.zeros((T, n_y, n_y)),
            innovations_a=np.zeros_like(y), S_a=np.zeros((T, n_y, n_y)),
            y=y, x_c0=np.ravel(x_c0).astype(float), x_aT1=np.ravel(x_aT1).astype(float),
        )


@dataclass(frozen=True)
class QValue:
    q1: float
    q2: float
    q3: float

    @property
    def q_total(self) -> float:
        return self.q1 + self.q2 + self.q3


def _gauss_logpdf(r, S):
    """Batched log N(r; 0, S) for r (..., n) and S (..., n, n)."""
    n = r.shape[-1]
    sign, logdet = np.linalg.slogdet(S)
    sol = np.linalg.solve(S, r[..., None])[..., 0]
    quad = np.sum(r * sol, axis=-1)
    out = -0.5 * (n * LOG2PI + logdet + quad)
    return np.where(sign > 0, out, -np.inf)


def _regularize(S, flags=None, what="S"):
    S = symmetrize(S)
    try:
        np.linalg.cholesky(S)
        return S
    except np.linalg.LinAlgError:
        if flags is not None:
            flags.append(f"{what} singular; regularized with {REG_LAMBDA:g}*I")
        return S + REG_LAMBDA * np.eye(S.shape[-1])


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=float))


def mode_loglik_table(params: ModelParams, y_t, x_c_prior_t, x_a_prior_t, S_t, flags=None):
    """Joint ``m_c x m_a`` table of ``log N(y; mean_jl, S) + log pi_c[j] + log pi_a[l]``.

    ``mean_jl = C_c[j] x_c_prior + C_a[l] x_a_prior``. The priors may be shared
    vectors or per-mode arrays (``(m_c, n_xc)`` / ``(m_a, n_xa)``); ``S_t`` may
    be one matrix or a ``(m_c, m_a, n_y, n_y)`` stack. A singular ``S`` gets a
    ``1e-8 * I`` ridge and a note in ``flags``.
    """
    d = params.dims
    y_t = np.asarray(y_t, dtype=float).ravel()
    xc = np.asarray(x_c_prior_t, dtype=float)
    xa = np.asarray(x_a_prior_t, dtype=float)
    xc = np.broadcast_to(xc, (d.m_c, d.n_xc)) if xc.ndim == 1 else xc
    xa = np.broadcast_to(xa, (d.m_a, d.n_xa)) if xa.ndim == 1 else xa
    mean_c = np.einsum("jik,jk->ji", params.C_c, xc)  # (m_c, n_y)
    mean_a = np.einsum("lik,lk->li", params.C_a, xa)  # (m_a, n_y)
    r = y_t[None, None, :] - mean_c[:, None, :] - mean_a[None, :, :]
    S_t = np.asarray(S_t, dtype=float)
    if S_t.ndim == 0:
        S_t = S_t.reshape(1, 1)
    S_t = np.broadcast_to(S_t, (d.m_c, d.m_a, d.n_y, d.n_y)).copy()
    for j in range(d.m_c):
        for l in range(d.m_a):
            S_t[j, l] = _regularize(S_t[j, l], flags, f"S[{j + 1},{l + 1}]")
    return _gauss_logpdf(r, S_t) + _log(params.pi_c)[:, None] + _log(params.pi_a)[None, :]


def mode_loglik_tables(params: ModelParams, y, ref: FilterResult):
    """Tables for every ``t`` using one-step predictions from a reference sweep.

    For each mode the prediction of ``x_c(t)`` is ``A_c[j]`` applied to the
    reference posterior at ``t-1`` (the boundary state at ``t=1``) with
    covariance ``A_c[j] P_c(t-1) A_c[j]' + Sigma_c[j]``; the anticausal side
    mirrors this from ``t+1``. The innovation covariance therefore depends on
    the mode pair.
    """
    d = params.dims
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    xc_prev = np.vstack([ref.x_c0[None], ref.x_c_hat[:-1]])
    Pc_prev = np.concatenate([np.zeros((1, d.n_xc, d.n_xc)), ref.P_c[:-1]])
    xa_next = np.vstack([ref.x_a_hat[1:], ref.x_aT1[None]])
    Pa_next = np.concatenate([ref.P_a[1:], np.zeros((1, d.n_xa, d.n_xa))])

    mc = np.einsum("jab,tb->tja", params.A_c, xc_prev)  # (T, m_c, n_xc)
    ma = np.einsum("lab,tb->tla", params.A_a, xa_next)
    Pc = np.einsum("jab,tbc,jdc->tjad", params.A_c, Pc_prev, params.A_c) + params.Sigma_c[None]
    Pa = np.einsum("lab,tbc,ldc->tlad", params.A_a, Pa_next, params.A_a) + params.Sigma_a[None]
    yc = np.einsum("jia,tja->tji", params.C_c, mc)  # (T, m_c, n_y)
    ya = np.einsum("lia,tla->tli", params.C_a, ma)
    Sc = np.einsum("jia,tjab,jkb->tjik", params.C_c, Pc, params.C_c)  # (T, m_c, n_y, n_y)
    Sa = np.einsum("lia,tlab,lkb->tlik", params.C_a, Pa, params.C_a)
    S = Sc[:, :, None] + Sa[:, None, :] + params.Sigma_m
    S = symmetrize(S)
    r = y[:, None, None, :] - yc[:, :, None, :] - ya[:, None, :, :]
    tables = _gauss_logpdf(r, S)
    bad = ~np.isfinite(tables)
    if np.any(bad):
        S = S + REG_LAMBDA * np.eye(d.n_y)
        tables = _gauss_logpdf(r, S)
    tables = tables + _log(params.pi_c)[None, :, None] + _log(params.pi_a)[None, None, :]
    assert tables.shape == (T, d.m_c, d.m_a)
    return tables


def assign_modes(tables) -> ModeAssignment:
    """Joint argmax of each ``(m_c, m_a)`` table; ties go to the lowest index pair."""
    tables = np.asarray(tables, dtype=float)
    if tables.ndim == 2:
        tables = tables[None]
    T, m_c, m_a = tables.shape
    flat = np.where(np.isnan(tables), -np.inf, tables).reshape(T, m_c * m_a)
    # np.argmax returns the first maximum, i.e. row-major lowest (j, l).
    k = np.argmax(flat, axis=1)
    return ModeAssignment(k // m_a, k % m_a, m_c, m_a, tables)


def kalman_gains(C_c, C_a, P_c_prior, P_a_prior, Sigma_m, flags=None):
    """Gains of the coupled update and the shared innovation covariance.

    Returns ``(K_c, K_a, S)`` with ``K = P^- C' S^{-1}``.
    """
    C_c = np.atleast_2d(C_c)
    C_a = np.atleast_2d(C_a)
    S = C_c @ P_c_prior @ C_c.T + C_a @ P_a_prior @ C_a.T + np.atleast_2d(Sigma_m)
    S = _regularize(S, flags)
    K_c = np.linalg.solve(S, C_c @ P_c_prior).T
    K_a = np.linalg.solve(S, C_a @ P_a_prior).T
    return K_c, K_a, S


def posterior_cov_general(K, C_own, C_other, P_own, P_other, Sigma_m):
    """Posterior covariance for an arbitrary gain ``K`` (independent prior errors)."""
    I = np.eye(P_own.shape[0])
    M = I - K @ C_own
    return M @ P_own @ M.T + K @ (C_other @ P_other @ C_other.T + Sigma_m) @ K.T


# ---------------------------------------------------------------------------
# compiled sweep kernels


@numba.njit(cache=True)
def _sym(M):
    return 0.5 * (M + M.T)


@numba.njit(cache=True)
def _solve_spd(S, B, lam):
    # returns S^{-1} B, ridge added when S is numerically singular
    n = S.shape[0]
    ok = True
    for i in range(n):
        if not S[i, i] > 0.0:
            ok = False
    if ok:
        det = np.linalg.det(S)
        if not det > 0.0:
            ok = False
    if not ok:
        S = S + lam * np.eye(n)
    return np.linalg.solve(S, B), not ok


@numba.njit(cache=True)
def _backward_pass(y, s_c, s_a, A_a, C_c, C_a, Sig_a, Sig_m, x_aT1,
                   xc_pr, Pc_pr, init_cov, lam,
                   xa_hat, xa_pr, Pa, Pa_pr, Ka, innov_a, S_a):
    T = y.shape[0]
    n = A_a.shape[1]
    nreg = 0
    for t in range(T - 1, -1, -1):
        l = s_a[t]
        j = s_c[t]
        if t == T - 1:
            xa_pr[t] = A_a[l] @ x_aT1
            Pa_pr[t] = init_cov * np.eye(n)
        else:
            xa_pr[t] = A_a[l] @ xa_hat[t + 1]
            Pa_pr[t] = _sym(A_a[l] @ Pa[t + 1] @ A_a[l].T + Sig_a[l])
        Cc = C_c[j]
        Ca = C_a[l]
        S = _sym(Cc @ Pc_pr[t] @ Cc.T + Ca @ Pa_pr[t] @ Ca.T + Sig_m)
        G, reg = _solve_spd(S, Ca @ Pa_pr[t], lam)
        if reg:
            nreg += 1
        K = G.T
        e = y[t] - Ca @ xa_pr[t] - Cc @ xc_pr[t]
        xa_hat[t] = xa_pr[t] + K @ e
        Pa[t] = _sym((np.eye(n) - K @ Ca) @ Pa_pr[t])
        Ka[t] = K
        innov_a[t] = e
        S_a[t] = S
        if not np.all(np.isfinite(xa_hat[t])):
            return t, nreg
    return -1, nreg


@numba.njit(cache=True)
def _forward_pass(y, s_c, s_a, A_c, C_c, C_a, Sig_c, Sig_m, x_c0,
                  xa_pr, Pa_pr, init_cov, lam,
                  xc_hat, xc_pr, Pc, Pc_pr, Kc, innov, S_out):
    T = y.shape[0]
    n = A_c.shape[1]
    nreg = 0
    for t in range(T):
        j = s_c[t]
        l = s_a[t]
        if t == 0:
            xc_pr[t] = A_c[j] @ x_c0
            Pc_pr[t] = init_cov * np.eye(n)
        else:
            xc_pr[t] = A_c[j] @ xc_hat[t - 1]
            Pc_pr[t] = _sym(A_c[j] @ Pc[t - 1] @ A_c[j].T + Sig_c[j])
        Cc = C_c[j]
        Ca = C_a[l]
        S = _sym(Cc @ Pc_pr[t] @ Cc.T + Ca @ Pa_pr[t] @ Ca.T + Sig_m)
        G, reg = _solve_spd(S, Cc @ Pc_pr[t], lam)
        if reg:
            nreg += 1
        K = G.T
        e = y[t] - Ca @ xa_pr[t] - Cc @ xc_pr[t]
        xc_hat[t] = xc_pr[t] + K @ e
        Pc[t] = _sym((np.eye(n) - K @ Cc) @ Pc_pr[t])
        Kc[t] = K
        innov[t] = e
        S_out[t] = S
        if not np.all(np.isfinite(xc_hat[t])):
            return t, nreg
    return -1, nreg


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def filter_sweep(
    params: ModelParams,
    assignment: ModeAssignment,
    y,
    x_c0,
    x_aT1,
    prev_other_state: FilterResult | None = None,
    init_cov: float = DEFAULT_INIT_COV,
    inner_sweeps: int = 1,
) -> FilterResult:
    """Backward anticausal pass followed by a forward causal pass.

    ``prev_other_state`` supplies the causal priors used by the backward pass;
    without it they are zero mean with covariance ``init_cov * I``. With
    ``inner_sweeps > 1`` the pair of passes is repeated, each backward pass
    reusing the causal priors of the forward pass before it.
    """
    d = params.dims
    y = _c(np.atleast_2d(np.asarray(y, dtype=float).reshape(len(y), -1)))
    T = y.shape[0]
    s_c = np.ascontiguousarray(assignment.s_c_hat)
    s_a = np.ascontiguousarray(assignment.s_a_hat)
    if s_c.size != T or s_a.size != T:
        raise ValueError("assignment length does not match data")
    x_c0 = _c(np.ravel(x_c0))
    x_aT1 = _c(np.ravel(x_aT1))

    if prev_other_state is not None:
        xc_pr_ref = _c(prev_other_state.x_c_prior)
        Pc_pr_ref = _c(prev_other_state.P_c_prior)
    else:
        xc_pr_ref = np.zeros((T, d.n_xc))
        Pc_pr_ref = np.broadcast_to(init_cov * np.eye(d.n_xc), (T, d.n_xc, d.n_xc)).copy()

    A_c, A_a, C_c, C_a = (_c(params.A_c), _c(params.A_a), _c(params.C_c), _c(params.C_a))
    Sig_c, Sig_a, Sig_m = _c(params.Sigma_c), _c(params.Sigma_a), _c(params.Sigma_m)

    xa_hat = np.empty((T, d.n_xa)); xa_pr = np.empty((T, d.n_xa))
    Pa = np.empty((T, d.n_xa, d.n_xa)); Pa_pr = np.empty((T, d.n_xa, d.n_xa))
    Ka = np.empty((T, d.n_xa, d.n_y)); innov_a = np.empty((T, d.n_y)); S_a = np.empty((T, d.n_y, d.n_y))
    xc_hat = np.empty((T, d.n_xc)); xc_pr = np.empty((T, d.n_xc))
    Pc = np.empty((T, d.n_xc, d.n_xc)); Pc_pr = np.empty((T, d.n_xc, d.n_xc))
    Kc = np.empty((T, d.n_xc, d.n_y)); innov = np.empty((T, d.n_y)); S = np.empty((T, d.n_y, d.n_y))

    flags = []
    nreg = 0
    for rep in range(max(1, int(inner_sweeps))):
        bad, k = _backward_pass(y, s_c, s_a, A_a, C_c, C_a, Sig_a, Sig_m, x_aT1,
                                xc_pr_ref, Pc_pr_ref, float(init_cov), REG_LAMBDA,
                                xa_hat, xa_pr, Pa, Pa_pr, Ka, innov_a, S_a)
        nreg += k
        if bad >= 0:
            raise FilterDivergenceError(f"anticausal estimate non-finite at t={bad + 1}", t=bad + 1)
        bad, k = _forward_pass(y, s_c, s_a, A_c, C_c, C_a, Sig_c, Sig_m, x_c0,
                               xa_pr, Pa_pr, float(init_cov), REG_LAMBDA,
                               xc_hat, xc_pr, Pc, Pc_pr, Kc, innov, S)
        nreg += k
        if bad >= 0:
            raise FilterDivergenceError(f"causal estimate non-finite at t={bad + 1}", t=bad + 1)
        xc_pr_ref, Pc_pr_ref = xc_pr.copy(), Pc_pr.copy()
    if nreg:
        flags.append(f"innovation covariance regularized at {nreg} steps")

    return FilterResult(
        x_c_hat=xc_hat, x_a_hat=xa_hat, x_c_prior=xc_pr, x_a_prior=xa_pr,
        P_c=Pc, P_a=Pa, P_c_prior=Pc_pr, P_a_prior=Pa_pr, K_c=Kc, K_a=Ka,
        innovations=innov, S=S, innovations_a=innov_a, S_a=S_a,
        y=y, x_c0=x_c0, x_aT1=x_aT1, flags=tuple(flags),
    )


def reference_from_priors(dims, y, x_c0, x_aT1, init_cov=DEFAULT_INIT_COV) -> FilterResult:
    """Uninformative stand-in sweep: zero state estimates, covariance ``init_cov * I``."""
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    T = y.shape[0]
    z = lambda n: np.zeros((T, n))
    cov = lambda n: np.broadcast_to(init_cov * np.eye(n), (T, n, n)).copy()
    return FilterResult(
        x_c_hat=z(dims.n_xc), x_a_hat=z(dims.n_xa), x_c_prior=z(dims.n_xc), x_a_prior=z(dims.n_xa),
        P_c=cov(dims.n_xc), P_a=cov(dims.n_xa), P_c_prior=cov(dims.n_xc), P_a_prior=cov(dims.n_xa),
        K_c=np.zeros((T, dims.n_xc, dims.n_y)), K_a=np.zeros((T, dims.n_xa, dims.n_y)),
        innovations=y.copy(), S=cov(dims.n_y), innovations_a=y.copy(), S_a=cov(dims.n_y),
        y=y, x_c0=np.ravel(x_c0).astype(float), x_aT1=np.ravel(x_aT1).astype(float),
    )


def e_step(params: ModelParams, y, x_c0, x_aT1, ref: FilterResult | None = None,
           init_cov=DEFAULT_INIT_COV, inner_sweeps: int = 1, reassign: int = 1):
    """Assign modes from a reference sweep, then filter under that assignment.

    Without ``ref`` an uninformative reference is used and an extra
    assign/filter round is run so the returned assignment is based on real
    state estimates. ``reassign`` adds further rounds.
    """
    d = params.dims
    rounds = max(1, int(reassign))
    if ref is None:
        ref = reference_from_priors(d, y, x_c0, x_aT1, init_cov)
        prev = None
        rounds += 1
    else:
        prev = ref
    for _ in range(rounds):
        assignment = assign_modes(mode_loglik_tables(params, y, ref))
        filt = filter_sweep(params, assignment, y, x_c0, x_aT1, prev, init_cov, inner_sweeps)
        ref = prev = filt
    return assignment, filt


def evaluate_Q(params: ModelParams, assignment: ModeAssignment, filt: FilterResult,
               trace_correction: bool = True) -> QValue:
    """Expected complete-data log-likelihood under hard mode weights.

    State expectations use the filtered means; with ``trace_correction`` the
    Gaussian quadratic-form terms ``tr(Sigma^{-1} P)`` from the posterior
    covariances are added (errors at different times and of the two
    subsystems taken as uncorrelated).
    """
    d = params.dims
    jc, la = assignment.s_c_hat, assignment.s_a_hat
    xc, xa, y = filt.x_c_hat, filt.x_a_hat, filt.y
    for name in ("Sigma_c", "Sigma_a"):
        for i, Sg in enumerate(getattr(params, name)):
            if np.linalg.eigvalsh(symmetrize(Sg)).min() <= 0:
                raise np.linalg.LinAlgError(f"{name}[{i + 1}] is singular")
    if np.linalg.eigvalsh(symmetrize(params.Sigma_m)).min() <= 0:
        raise np.linalg.LinAlgError("Sigma_m is singular")

    Cc, Ca = params.C_c[jc], params.C_a[la]
    r1 = y - np.einsum("tij,tj->ti", Cc, xc) - np.einsum("tij,tj->ti", Ca, xa)
    q1 = _gauss_logpdf(r1, np.broadcast_to(params.Sigma_m, (len(y), d.n_y, d.n_y))).sum()

    xc_prev = np.vstack([filt.x_c0[None], xc[:-1]])
    xa_next = np.vstack([xa[1:], filt.x_aT1[None]])
    Ac, Aa = params.A_c[jc], params.A_a[la]
    r2 = xc - np.einsum("tij,tj->ti", Ac, xc_prev)
    r3 = xa - np.einsum("tij,tj->ti", Aa, xa_next)
    q2 = _gauss_logpdf(r2, params.Sigma_c[jc]).sum()
    q3 = _gauss_logpdf(r3, params.Sigma_a[la]).sum()

    if trace_correction:
        Sm_inv = np.linalg.inv(params.Sigma_m)
        M1 = np.einsum("tia,tab,tjb->tij", Cc, filt.P_c, Cc) + np.einsum("tia,tab,tjb->tij", Ca, filt.P_a, Ca)
        q1 -= 0.5 * np.einsum("ij,tji->", Sm_inv, M1)
        Pc_prev = np.concatenate([np.zeros((1, d.n_xc, d.n_xc)), filt.P_c[:-1]])
        Pa_next = np.concatenate([filt.P_a[1:], np.zeros((1, d.n_xa, d.n_xa))])
        M2 = filt.P_c + np.einsum("tia,tab,tjb->tij", Ac, Pc_prev, Ac)
        M3 = filt.P_a + np.einsum("tia,tab,tjb->tij", Aa, Pa_next, Aa)
        q2 -= 0.5 * np.einsum("tij,tji->", np.linalg.inv(params.Sigma_c)[jc], M2)
        q3 -= 0.5 * np.einsum("tij,tji->", np.linalg.inv(params.Sigma_a)[la], M3)

    n_c = np.bincount(jc, minlength=d.m_c)
    n_a = np.bincount(la, minlength=d.m_a)
    with np.errstate(divide="ignore", invalid="ignore"):
        q2 += float(np.sum(np.where(n_c > 0, n_c * np.log(params.pi_c), 0.0)))
        q3 += float(np.sum(np.where(n_a > 0, n_a * np.log(params.pi_a), 0.0)))
    return QValue(float(q1), float(q2), float(q3))


def observed_loglik(params: ModelParams, assignment: ModeAssignment, filt: FilterResult, y=None) -> float:
    """Innovation log-likelihood ``sum_t log N(e(t); 0, S(t))`` at the assigned modes.

    Innovations and their covariances are rebuilt from the stored priors with
    the matrices in ``params``, so the value always reflects ``params``.
    """
    y = filt.y if y is None else np.asarray(y, dtype=float).reshape(filt.T, -1)
    Cc = params.C_c[assignment.s_c_hat]
    Ca = params.C_a[assignment.s_a_hat]
    e = y - np.einsum("tij,tj->ti", Cc, filt.x_c_prior) - np.einsum("tij,tj->ti", Ca, filt.x_a_prior)
    S = (
        np.einsum("tia,tab,tjb->tij", Cc, filt.P_c_prior, Cc)
        + np.einsum("tia,tab,tjb->tij", Ca, filt.P_a_prior, Ca)
        + params.Sigma_m
    )
    ll = _gauss_logpdf(e, symmetrize(S))
    if not np.all(np.isfinite(ll)):
        t = int(np.argmin(np.isfinite(ll)))
        raise FloatingPointError(f"non-finite log-likelihood term at t={t + 1}")
    return float(ll.sum())
