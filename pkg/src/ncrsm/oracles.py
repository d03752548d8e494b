"""Reference computations used to cross-check the main routines.

These are deliberately plain, loop-based implementations that share no code
with the filter kernels or the least-squares updates.
"""

from __future__ import annotations

import numpy as np

from .model import ModelParams


def _natural_chain(A, Sig, start, first_cov=None):
    """Chain ``u(k) = A(k) u(k-1) + w(k)`` processed in its own direction."""
    T, n, _ = A.shape
    F = A.copy()
    b = np.zeros((T, n))
    Q = Sig.copy()
    if first_cov is not None:
        Q[0] = first_cov
    return F, b, Q, np.asarray(start, dtype=float)


def _reversed_chain(A, Sig, start):
    """The same chain processed from ``u(T)`` back to ``u(1)``.

    Uses the Gaussian marginals ``u(k) ~ N(m(k), Pi(k))`` and the conditional
    of ``u(k)`` given ``u(k+1)``; returned arrays are in processing order.
    """
    T, n, _ = A.shape
    m = np.zeros((T + 1, n))
    Pi = np.zeros((T + 1, n, n))
    m[0] = start
    for k in range(1, T + 1):
        m[k] = A[k - 1] @ m[k - 1]
        Pi[k] = A[k - 1] @ Pi[k - 1] @ A[k - 1].T + Sig[k - 1]
    F = np.zeros((T, n, n))
    b = np.zeros((T, n))
    Q = np.zeros((T, n, n))
    b[0] = m[T]
    Q[0] = Pi[T]
    for p in range(1, T):
        k = T - p  # natural index of u processed at step p
        cross = Pi[k] @ A[k].T  # Cov(u(k), u(k+1)); A[k] is the step k -> k+1
        F[p] = np.linalg.solve(Pi[k + 1].T, cross.T).T
        b[p] = m[k] - F[p] @ m[k + 1]
        Q[p] = Pi[k] - F[p] @ cross.T
    return F, b, Q, np.zeros(n)


def joint_filter(params: ModelParams, s_c, s_a, y, x_c0, x_aT1, direction: int = +1, init_cov=None):
    """Standard Kalman filter on the stacked state ``(x_c, x_a)``.

    ``direction=+1`` processes ``t = 1..T`` and returns ``E[x(t) | y(1..t)]``;
    the anticausal block is rewritten as a forward Markov chain.
    ``direction=-1`` processes ``t = T..1`` and returns ``E[x(t) | y(t..T)]``
    with the causal block reversed instead. ``init_cov`` replaces the first
    prior covariance of the block running in its own direction. Returns
    ``(x_c, x_a, P)`` in natural time order.
    """
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    T = y.shape[0]
    s_c = np.asarray(s_c)
    s_a = np.asarray(s_a)
    nc, na = params.A_c.shape[1], params.A_a.shape[1]
    # natural orders: causal k <-> t = k, anticausal k <-> t = T + 1 - k
    Ac, Sc = params.A_c[s_c], params.Sigma_c[s_c]
    Aa, Sa = params.A_a[s_a][::-1], params.Sigma_a[s_a][::-1]
    ic = None if init_cov is None else init_cov * np.eye(nc)
    ia = None if init_cov is None else init_cov * np.eye(na)
    if direction > 0:
        blocks = (_natural_chain(Ac, Sc, x_c0, ic), _reversed_chain(Aa, Sa, x_aT1))
        times = np.arange(T)
    else:
        blocks = (_reversed_chain(Ac, Sc, x_c0), _natural_chain(Aa, Sa, x_aT1, ia))
        times = np.arange(T)[::-1]
    n = nc + na
    z = np.concatenate([blocks[0][3], blocks[1][3]])
    P = np.zeros((n, n))
    xs = np.zeros((T, n))
    Ps = np.zeros((T, n, n))
    for p, t in enumerate(times):
        F = np.zeros((n, n))
        Q = np.zeros((n, n))
        F[:nc, :nc], F[nc:, nc:] = blocks[0][0][p], blocks[1][0][p]
        Q[:nc, :nc], Q[nc:, nc:] = blocks[0][2][p], blocks[1][2][p]
        bvec = np.concatenate([blocks[0][1][p], blocks[1][1][p]])
        z_pr = F @ z + bvec
        P_pr = F @ P @ F.T + Q
        H = np.hstack([params.C_c[s_c[t]], params.C_a[s_a[t]]])
        S = H @ P_pr @ H.T + params.Sigma_m
        K = P_pr @ H.T @ np.linalg.inv(S)
        z = z_pr + K @ (y[t] - H @ z_pr)
        P = (np.eye(n) - K @ H) @ P_pr
        P = 0.5 * (P + P.T)
        xs[t], Ps[t] = z, P
    return xs[:, :nc], xs[:, nc:], Ps


def brute_force_transition(x, reg, mask, P_reg=None, lam=1e-9):
    """Normal equations for ``x(t) ~ A reg(t)`` assembled one sample at a time."""
    n_out, n_in = x.shape[1], reg.shape[1]
    G = lam * np.eye(n_in)
    M = np.zeros((n_out, n_in))
    for t in range(x.shape[0]):
        if not mask[t]:
            continue
        G += np.outer(reg[t], reg[t])
        if P_reg is not None:
            G += P_reg[t]
        M += np.outer(x[t], reg[t])
    return M @ np.linalg.inv(G)


def brute_force_outputs(y, x_c, x_a, s_c, s_a, m_c, m_a, P_c=None, P_a=None, lam=1e-9):
    """Joint output regression assembled row by row; returns ``(C_c, C_a)``."""
    nc, na = x_c.shape[1], x_a.shape[1]
    p = m_c * nc + m_a * na
    G = lam * np.eye(p)
    M = np.zeros((y.shape[1], p))
    for t in range(y.shape[0]):
        phi = np.zeros(p)
        jc = s_c[t] * nc
        ja = m_c * nc + s_a[t] * na
        phi[jc:jc + nc] = x_c[t]
        phi[ja:ja + na] = x_a[t]
        G += np.outer(phi, phi)
        if P_c is not None:
            G[jc:jc + nc, jc:jc + nc] += P_c[t]
            G[ja:ja + na, ja:ja + na] += P_a[t]
        M += np.outer(y[t], phi)
    Theta = M @ np.linalg.inv(G)
    C_c = np.array([Theta[:, j * nc:(j + 1) * nc] for j in range(m_c)])
    C_a = np.array([Theta[:, m_c * nc + l * na:m_c * nc + (l + 1) * na] for l in range(m_a)])
    return C_c, C_a
