"""Trajectory generation for switching non-causal systems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ModelParams, SwitchingSequence, validate

DEFAULT_STATE_CAP = 1e6

# Stream indices of the seed split rule: every random quantity is drawn from
# ``SeedSequence(seed, spawn_key=(stream,))`` so that switching sequences and
# noise stay independent and reproducible when generated separately.
STREAM_SWITCHING = 0
STREAM_NOISE = 1


class TrajectoryDivergenceError(RuntimeError):
    """Generated states blew up, i.e. the model is not stable on average."""

    def __init__(self, msg, t=None, mean_sq_norm=None):
        super().__init__(msg)
        self.t = t
        self.mean_sq_norm = mean_sq_norm


def rng_stream(seed, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(stream),)))


def cov_sqrt(S) -> np.ndarray:
    """Symmetric-eigendecomposition square root ``L`` with ``L @ L.T == S``.

    Unlike a Cholesky factor this also works for singular PSD matrices.
    """
    S = np.asarray(S, dtype=float)
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    tol = 1e-12 * max(1.0, np.abs(w).max(initial=0.0))
    if w.min(initial=0.0) < -tol:
        raise ValueError(f"covariance has negative eigenvalue {w.min():.3g}")
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class NoiseDraw:
    v_c: np.ndarray  # (T, n_xc)
    v_a: np.ndarray  # (T, n_xa)
    v_m: np.ndarray  # (T, n_y)


@dataclass(frozen=True)
class Trajectory:
    """Observed outputs plus boundary states and, for simulated data, the truth."""

    y: np.ndarray
    x_c0: np.ndarray
    x_aT1: np.ndarray
    x_c_true: Optional[np.ndarray] = None
    x_a_true: Optional[np.ndarray] = None
    seq_true: Optional[SwitchingSequence] = None
    noise: Optional[NoiseDraw] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_c0", np.asarray(self.x_c0, dtype=float).ravel())
        object.__setattr__(self, "x_aT1", np.asarray(self.x_aT1, dtype=float).ravel())
        T = y.shape[0]
        for name in ("x_c_true", "x_a_true"):
            x = getattr(self, name)
            if x is not None:
                x = np.asarray(x, dtype=float)
                if x.shape[0] != T:
                    raise ValueError(f"{name} has length {x.shape[0]}, expected {T}")
                object.__setattr__(self, name, x)
        if self.seq_true is not None and self.seq_true.T != T:
            raise ValueError(f"seq_true has length {self.seq_true.T}, expected {T}")

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def has_truth(self) -> bool:
        return self.x_c_true is not None and self.x_a_true is not None


def draw_switching(params: ModelParams, T: int, seed=0) -> SwitchingSequence:
    """I.i.d. multinomial mode draws, independent between the two sequences."""
    rng = rng_stream(seed, STREAM_SWITCHING)
    s_c = rng.choice(params.pi_c.size, size=T, p=params.pi_c / params.pi_c.sum())
    s_a = rng.choice(params.pi_a.size, size=T, p=params.pi_a / params.pi_a.sum())
    return SwitchingSequence(s_c, s_a)


def draw_noise(params: ModelParams, seq: SwitchingSequence, seed=0) -> NoiseDraw:
    rng = rng_stream(seed, STREAM_NOISE)
    T = seq.T
    d = params.dims
    z_c = rng.standard_normal((T, d.n_xc))
    z_a = rng.standard_normal((T, d.n_xa))
    z_m = rng.standard_normal((T, d.n_y))
    L_c = np.array([cov_sqrt(S) for S in params.Sigma_c])
    L_a = np.array([cov_sqrt(S) for S in params.Sigma_a])
    L_m = cov_sqrt(params.Sigma_m)
    v_c = np.einsum("tij,tj->ti", L_c[seq.s_c], z_c)
    v_a = np.einsum("tij,tj->ti", L_a[seq.s_a], z_a)
    v_m = z_m @ L_m.T
    return NoiseDraw(v_c, v_a, v_m)


def simulate(
    params: ModelParams,
    seq: SwitchingSequence,
    x_c0=None,
    x_aT1=None,
    seed=0,
    state_cap: float = DEFAULT_STATE_CAP,
    noise: NoiseDraw | None = None,
) -> Trajectory:
    """Run the forward causal, backward anticausal and output recursions.

    Noise covariances may be singular here (including exactly zero). Boundary
    states default to zero. Raises :class:`TrajectoryDivergenceError` when a
    state becomes non-finite or the time-averaged squared state norm of
    either subsystem exceeds ``state_cap``.
    """
    report = validate(params, allow_psd=True)
    if not report.ok:
        raise ValueError(f"invalid parameters: {report}")
    d = params.dims
    seq.check(d)
    T = seq.T
    x_c0 = np.zeros(d.n_xc) if x_c0 is None else np.asarray(x_c0, dtype=float).ravel()
    x_aT1 = np.zeros(d.n_xa) if x_aT1 is None else np.asarray(x_aT1, dtype=float).ravel()
    if noise is None:
        noise = draw_noise(params, seq, seed)

    x_c = np.empty((T, d.n_xc))
    x_a = np.empty((T, d.n_xa))
    with np.errstate(over="ignore", invalid="ignore"):
        prev = x_c0
        for t in range(T):
            prev = params.A_c[seq.s_c[t]] @ prev + noise.v_c[t]
            x_c[t] = prev
            if not np.all(np.isfinite(prev)):
                raise TrajectoryDivergenceError(f"causal state non-finite at t={t + 1}", t=t + 1)
        nxt = x_aT1
        for t in range(T - 1, -1, -1):
            nxt = params.A_a[seq.s_a[t]] @ nxt + noise.v_a[t]
            x_a[t] = nxt
            if not np.all(np.isfinite(nxt)):
                raise TrajectoryDivergenceError(f"anticausal state non-finite at t={t + 1}", t=t + 1)
        for name, x in (("causal", x_c), ("anticausal", x_a)):
            msq = float(np.mean(np.sum(x * x, axis=1))) if T else 0.0
            if not np.isfinite(msq) or msq > state_cap:
                raise TrajectoryDivergenceError(
                    f"{name} time-averaged squared state norm {msq:.3g} exceeds cap {state_cap:.3g}",
                    mean_sq_norm=msq,
                )

    y = (
        np.einsum("tij,tj->ti", params.C_c[seq.s_c], x_c)
        + np.einsum("tij,tj->ti", params.C_a[seq.s_a], x_a)
        + noise.v_m
    )
    return Trajectory(
        y=y, x_c0=x_c0, x_aT1=x_aT1, x_c_true=x_c, x_a_true=x_a, seq_true=seq, noise=noise
    )


def simulate_model(params: ModelParams, T: int, seed=0, x_c0=None, x_aT1=None, state_cap=DEFAULT_STATE_CAP):
    """Draw switching sequences and simulate in one call."""
    seq = draw_switching(params, T, seed)
    return simulate(params, seq, x_c0, x_aT1, seed=seed, state_cap=state_cap)


def residual_bounds(params: ModelParams, traj: Trajectory, seq_hat: SwitchingSequence):
    """Largest squared one-step residuals of the true states under estimated modes.

    Returns ``(max |eta_c|^2, max |eta_a|^2, max |eta_m|^2)`` where the
    residuals use the true states and the *estimated* mode sequences.
    """
    if not traj.has_truth:
        raise ValueError("trajectory carries no true states")
    x_c, x_a, y = traj.x_c_true, traj.x_a_true, traj.y
    xc_prev = np.vstack([traj.x_c0[None], x_c[:-1]])
    xa_next = np.vstack([x_a[1:], traj.x_aT1[None]])
    eta_c = x_c - np.einsum("tij,tj->ti", params.A_c[seq_hat.s_c], xc_prev)
    eta_a = x_a - np.einsum("tij,tj->ti", params.A_a[seq_hat.s_a], xa_next)
    eta_m = (
        y
        - np.einsum("tij,tj->ti", params.C_c[seq_hat.s_c], x_c)
        - np.einsum("tij,tj->ti", params.C_a[seq_hat.s_a], x_a)
    )
    return tuple(float(np.max(np.sum(e * e, axis=1))) for e in (eta_c, eta_a, eta_m))
