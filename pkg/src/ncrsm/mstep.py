"""M-step: switching least squares under hard mode weights.

Mode probabilities are assignment frequencies, transition matrices are
per-mode least-squares fits on the filtered state estimates, all output
matrices are solved jointly in one stacked regression, and noise covariances
are weighted residual averages.

With ``correction="trace"`` (the default) the Gram matrices and residual
covariances include the posterior state covariances, which makes the update
the exact maximizer of :func:`ncrsm.estep.evaluate_Q` with its trace terms.
``correction="none"`` is plain least squares on the filtered means.
"""

from __future__ import annotations

import logging

import numpy as np

from .estep import FilterResult, ModeAssignment
from .model import ModelParams, symmetrize

logger = logging.getLogger(__name__)

RIDGE = 1e-9
SIGMA_FLOOR = 1e-8
PI_FLOOR = 1e-6
COV_CORRECTIONS = ("none", "trace")


def update_pi(assignment: ModeAssignment, floor: float = 0.0):
    """Assignment frequencies ``count_j / T``.

    With ``floor > 0`` every probability is raised to at least ``floor`` and
    the vector renormalized, which keeps empty modes revivable.
    """
    T = assignment.T
    out = []
    for s, m in ((assignment.s_c_hat, assignment.m_c), (assignment.s_a_hat, assignment.m_a)):
        p = np.bincount(s, minlength=m) / T
        if floor > 0:
            p = np.maximum(p, floor)
            p = p / p.sum()
        out.append(p)
    return out[0], out[1]


def _lagged(x, boundary, direction):
    # regressor sequence: x(t-1) for the causal side, x(t+1) for the anticausal side
    if direction > 0:
        return np.vstack([boundary[None], x[:-1]])
    return np.vstack([x[1:], boundary[None]])


def _lagged_cov(P, direction):
    # covariance of the regressor; the boundary state is known exactly
    zeros = np.zeros((1,) + P.shape[1:])
    if direction > 0:
        return np.concatenate([zeros, P[:-1]])
    return np.concatenate([P[1:], zeros])


def _ls_transition(X, R, lam=RIDGE, P_R=None):
    """``argmin_A sum |x - A r|^2`` = ``(X' R)(R' R + sum P_R + lam I)^{-1}``."""
    G = R.T @ R + lam * np.eye(R.shape[1])
    if P_R is not None:
        G = G + P_R.sum(axis=0)
    return np.linalg.solve(G, R.T @ X).T


def update_A(assignment: ModeAssignment, states: FilterResult, boundaries=None,
             prev: ModelParams | None = None, lam: float = RIDGE, correction: str = "trace"):
    """Per-mode least-squares transition matrices.

    With ``correction="trace"`` the regressor Gram matrix gains the summed
    posterior covariances of the regressor states. Returns ``(A_c, A_a, flags)``. A mode with no assigned samples keeps its
    matrix from ``prev`` (zeros without one) and is reported in ``flags``.
    """
    x_c0, x_aT1 = boundaries if boundaries is not None else (states.x_c0, states.x_aT1)
    flags = []
    out = []
    _check_correction(correction)
    for side, s, m, x, P, bnd, direction in (
        ("A_c", assignment.s_c_hat, assignment.m_c, states.x_c_hat, states.P_c, np.ravel(x_c0), +1),
        ("A_a", assignment.s_a_hat, assignment.m_a, states.x_a_hat, states.P_a, np.ravel(x_aT1), -1),
    ):
        R_all = _lagged(x, bnd, direction)
        P_R = _lagged_cov(P, direction) if correction == "trace" else None
        n = x.shape[1]
        mats = np.zeros((m, n, n))
        for j in range(m):
            idx = np.flatnonzero(s == j)
            if idx.size == 0:
                if prev is not None:
                    mats[j] = getattr(prev, side)[j]
                flags.append(f"{side}[{j + 1}]: no assigned samples, carried forward")
                continue
            A = _ls_transition(x[idx], R_all[idx], lam, None if P_R is None else P_R[idx])
            if not np.all(np.isfinite(A)):
                raise np.linalg.LinAlgError(f"{side}[{j + 1}]: singular Gram matrix")
            mats[j] = A
        out.append(mats)
    return out[0], out[1], flags


def _c_design(assignment: ModeAssignment, states: FilterResult):
    T = assignment.T
    n_xc = states.x_c_hat.shape[1]
    n_xa = states.x_a_hat.shape[1]
    m_c, m_a = assignment.m_c, assignment.m_a
    p = m_c * n_xc + m_a * n_xa
    Phi = np.zeros((T, p))
    rows = np.arange(T)[:, None]
    cols_c = assignment.s_c_hat[:, None] * n_xc + np.arange(n_xc)[None]
    cols_a = m_c * n_xc + assignment.s_a_hat[:, None] * n_xa + np.arange(n_xa)[None]
    Phi[rows, cols_c] = states.x_c_hat
    Phi[rows, cols_a] = states.x_a_hat
    return Phi


def update_C(assignment: ModeAssignment, states: FilterResult, y=None,
             prev: ModelParams | None = None, lam: float = RIDGE, correction: str = "trace"):
    """Joint least squares for every ``C_c[j]`` and ``C_a[l]``.

    Each sample contributes one regression row with ``x_c(t)`` in the block of
    its causal mode and ``x_a(t)`` in the block of its anticausal mode. A
    block with no samples is fixed by the ridge alone (zeros) unless ``prev``
    is given, in which case the previous matrix is kept. With
    ``correction="trace"`` each row adds its state covariances to the diagonal
    blocks of the Gram matrix. Returns ``(C_c, C_a, flags)``.
    """
    _check_correction(correction)
    y = states.y if y is None else np.asarray(y, dtype=float).reshape(assignment.T, -1)
    n_xc = states.x_c_hat.shape[1]
    n_xa = states.x_a_hat.shape[1]
    m_c, m_a = assignment.m_c, assignment.m_a
    Phi = _c_design(assignment, states)
    G = Phi.T @ Phi + lam * np.eye(Phi.shape[1])
    if correction == "trace":
        for j in range(m_c):
            b = slice(j * n_xc, (j + 1) * n_xc)
            G[b, b] += states.P_c[assignment.s_c_hat == j].sum(axis=0)
        for l in range(m_a):
            b = slice(m_c * n_xc + l * n_xa, m_c * n_xc + (l + 1) * n_xa)
            G[b, b] += states.P_a[assignment.s_a_hat == l].sum(axis=0)
    Theta = np.linalg.solve(G, Phi.T @ y)  # (p, n_y)
    if not np.all(np.isfinite(Theta)):
        raise np.linalg.LinAlgError("output regression is rank deficient beyond the ridge")
    C_c = np.stack([Theta[j * n_xc:(j + 1) * n_xc].T for j in range(m_c)])
    off = m_c * n_xc
    C_a = np.stack([Theta[off + l * n_xa:off + (l + 1) * n_xa].T for l in range(m_a)])
    flags = []
    for name, s, m, C in (("C_c", assignment.s_c_hat, m_c, C_c), ("C_a", assignment.s_a_hat, m_a, C_a)):
        counts = np.bincount(s, minlength=m)
        for j in np.flatnonzero(counts == 0):
            if prev is not None:
                C[j] = getattr(prev, name)[j]
                flags.append(f"{name}[{j + 1}]: no assigned samples, carried forward")
            else:
                flags.append(f"{name}[{j + 1}]: no assigned samples, fixed by ridge")
    return C_c, C_a, flags


def update_Sigma(assignment: ModeAssignment, states: FilterResult, y, A_c, A_a, C_c, C_a,
                 prev: ModelParams | None = None, correction: str = "trace",
                 floor: float = SIGMA_FLOOR):
    """Normalized weighted residual covariances.

    ``correction`` selects how state uncertainty enters:

    ``"none"``
        outer products of mean residuals only;
    ``"trace"``
        adds the posterior covariances (``C P C'`` for the output noise,
        ``P(t) + A P(t-1) A'`` for the process noises), i.e. the maximizer of
        :func:`ncrsm.estep.evaluate_Q` with its trace terms.

    Results are re-symmetrized and floored at ``floor * I``. A mode with no
    samples keeps ``prev`` (identity without one), flagged.
    """
    _check_correction(correction)
    y = np.asarray(y, dtype=float).reshape(assignment.T, -1)
    flags = []
    sc, sa = assignment.s_c_hat, assignment.s_a_hat
    xc, xa = states.x_c_hat, states.x_a_hat

    def process_noise(name, s, m, x, P, A_new, bnd, direction):
        n = x.shape[1]
        A_t = A_new[s]
        r = x - np.einsum("tab,tb->ta", A_t, _lagged(x, bnd, direction))
        outer = np.einsum("ta,tb->tab", r, r)
        if correction == "trace":
            outer = outer + P + np.einsum("tab,tbc,tdc->tad", A_t, _lagged_cov(P, direction), A_t)
        out = np.zeros((m, n, n))
        for j in range(m):
            idx = np.flatnonzero(s == j)
            if idx.size == 0:
                out[j] = getattr(prev, name)[j] if prev is not None else np.eye(n)
                flags.append(f"{name}[{j + 1}]: no assigned samples, carried forward")
                continue
            out[j] = _floor(outer[idx].mean(axis=0), floor)
        return out

    Sigma_c = process_noise("Sigma_c", sc, assignment.m_c, xc, states.P_c, np.asarray(A_c), states.x_c0, +1)
    Sigma_a = process_noise("Sigma_a", sa, assignment.m_a, xa, states.P_a, np.asarray(A_a), states.x_aT1, -1)

    Cc, Ca = np.asarray(C_c)[sc], np.asarray(C_a)[sa]
    r = y - np.einsum("tij,tj->ti", Cc, xc) - np.einsum("tij,tj->ti", Ca, xa)
    M = np.einsum("ti,tj->ij", r, r)
    if correction == "trace":
        M = M + np.einsum("tia,tab,tjb->ij", Cc, states.P_c, Cc) + np.einsum("tia,tab,tjb->ij", Ca, states.P_a, Ca)
    Sigma_m = _floor(M / assignment.T, floor)
    return Sigma_c, Sigma_a, Sigma_m, flags


def _check_correction(correction):
    if correction not in COV_CORRECTIONS:
        raise ValueError(f"unknown correction {correction!r}, expected one of {COV_CORRECTIONS}")


def _floor(S, floor):
    S = symmetrize(S)
    w, V = np.linalg.eigh(S)
    if w.min() >= floor:
        return S
    return symmetrize((V * np.maximum(w, floor)) @ V.T)


def m_step(assignment: ModeAssignment, states: FilterResult, prev: ModelParams,
           correction: str = "trace", pi_floor: float = PI_FLOOR):
    """Full parameter update; returns ``(params, flags)``."""
    pi_c, pi_a = update_pi(assignment, floor=pi_floor)
    A_c, A_a, f1 = update_A(assignment, states, prev=prev, correction=correction)
    C_c, C_a, f2 = update_C(assignment, states, prev=prev, correction=correction)
    Sigma_c, Sigma_a, Sigma_m, f3 = update_Sigma(
        assignment, states, states.y, A_c, A_a, C_c, C_a, prev=prev, correction=correction,
    )
    new = ModelParams(A_c=A_c, A_a=A_a, C_c=C_c, C_a=C_a, Sigma_c=Sigma_c,
                      Sigma_a=Sigma_a, Sigma_m=Sigma_m, pi_c=pi_c, pi_a=pi_a)
    return new, f1 + f2 + f3
