"""EM driver: initialization, alternating E/M steps, stopping and restarts."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .estep import (
    DEFAULT_INIT_COV,
    FilterDivergenceError,
    FilterResult,
    ModeAssignment,
    QValue,
    e_step,
    evaluate_Q,
    observed_loglik,
)
from .model import Dims, ModelParams, symmetrize, validate
from .mstep import COV_CORRECTIONS, PI_FLOOR, m_step
from .simulate import rng_stream

logger = logging.getLogger(__name__)

INIT_SCHEMES = ("random-perturb", "user-supplied", "data-driven")
STOP_REASONS = ("converged", "max-iters", "divergence")
# restart r draws its initial parameters from stream INIT_STREAM + r
INIT_STREAM = 100


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 200
    tol_loglik: float = 1e-7
    restarts: int = 5
    init_scheme: str = "random-perturb"
    inner_sweeps: int = 1
    seed: int = 0
    init_cov: float = DEFAULT_INIT_COV
    cov_correction: str = "trace"
    # GEM safeguard: shrink a step that lowers the likelihood instead of taking it
    ascent_guard: bool = False
    guard_halvings: int = 6
    mono_tol: float = 1e-8
    pi_floor: float = PI_FLOOR
    perturb: float = 0.1
    init_params: Optional[ModelParams] = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"init_scheme must be one of {INIT_SCHEMES}")
        if self.cov_correction not in COV_CORRECTIONS:
            raise ValueError(f"cov_correction must be one of {COV_CORRECTIONS}")
        if self.init_scheme == "user-supplied" and self.init_params is None:
            raise ValueError("user-supplied init needs init_params")

    @classmethod
    def from_dict(cls, d: dict) -> "EmConfig":
        """Build from a plain mapping, rejecting unknown keys."""
        known = {f.name for f in fields(cls)} - {"init_params"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown EM config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "init_params"}
        out["has_init_params"] = self.init_params is not None
        return out

    def with_env_seed(self) -> "EmConfig":
        """Apply the ``NCRSM_SEED`` override when set."""
        env = os.environ.get("NCRSM_SEED")
        return replace(self, seed=int(env)) if env not in (None, "") else self


@dataclass
class EmReport:
    loglik_trace: list
    q_trace: list
    params_trace: list
    final_params: ModelParams
    final_assignment: ModeAssignment
    final_filter: FilterResult
    stop_reason: str
    restart_index_chosen: int = 0
    restart_logliks: list = field(default_factory=list)
    restart_stop_reasons: list = field(default_factory=list)
    guard_steps: int = 0
    notes: list = field(default_factory=list)
    # log-likelihood of final_params; differs from the last trace entry after a divergence stop
    accepted_loglik: Optional[float] = None

    @property
    def final_loglik(self) -> float:
        if self.accepted_loglik is not None:
            return self.accepted_loglik
        return self.loglik_trace[-1] if self.loglik_trace else -np.inf

    @property
    def n_iters(self) -> int:
        return len(self.loglik_trace) - 1

    def monotone_violations(self, tol=1e-8):
        ll = np.asarray(self.loglik_trace)
        return [k for k in range(1, ll.size) if ll[k] < ll[k - 1] - tol * abs(ll[k - 1])]


def min_samples(dims: Dims) -> int:
    return 10 * (dims.n_xc + dims.n_xa)


def _embedding(y, k, direction):
    """Rows ``(y(t-1), y(t-2), ...)`` (or future lags) trimmed to ``k`` columns."""
    T, n_y = y.shape
    lags = -(-k // n_y)
    cols = []
    for h in range(1, lags + 1):
        shifted = np.zeros_like(y)
        if direction > 0:
            shifted[h:] = y[:-h]
        else:
            shifted[:-h] = y[h:]
        cols.append(shifted)
    return np.hstack(cols)[:, :k]


def _output_regression(y, dims):
    u = np.hstack([_embedding(y, dims.n_xc, +1), _embedding(y, dims.n_xa, -1)])
    G = u.T @ u + 1e-9 * np.eye(u.shape[1])
    B = np.linalg.solve(G, u.T @ y).T  # (n_y, n_xc + n_xa)
    return B[:, : dims.n_xc], B[:, dims.n_xc:]


def initialize(y, dims: Dims, config: EmConfig, restart: int = 0) -> ModelParams:
    """Starting parameters for one restart; deterministic in ``(seed, restart)``.

    ``random-perturb``: transitions ``0.5 I + U(-0.2, 0.2)``, output matrices
    from a regression of ``y(t)`` on past/future output lags with an
    independent random perturbation per mode, covariances equal to the sample
    output variance times ``I``, uniform mode probabilities.
    ``data-driven``: the same without randomness, modes spread apart
    deterministically. ``user-supplied``: ``config.init_params`` for restart 0,
    entry-wise perturbed copies of it afterwards.
    """
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    T = y.shape[0]
    if T < min_samples(dims):
        raise ValueError(f"need at least {min_samples(dims)} samples for dims {dims.as_tuple()}, got {T}")
    rng = rng_stream(config.seed, INIT_STREAM + restart)

    if config.init_scheme == "user-supplied":
        p = config.init_params
        if p.dims != dims:
            raise ValueError(f"init_params dims {p.dims} do not match {dims}")
        if restart == 0:
            return p
        s = config.perturb
        return p.replace(
            A_c=p.A_c + rng.uniform(-s, s, p.A_c.shape),
            A_a=p.A_a + rng.uniform(-s, s, p.A_a.shape),
            C_c=p.C_c + rng.uniform(-s, s, p.C_c.shape),
            C_a=p.C_a + rng.uniform(-s, s, p.C_a.shape),
        )

    var = float(np.mean(np.var(y, axis=0)))
    var = var if var > 0 else 1.0
    B_c, B_a = _output_regression(y, dims)
    scale_c = max(np.abs(B_c).max(), 0.1)
    scale_a = max(np.abs(B_a).max(), 0.1)

    if config.init_scheme == "random-perturb":
        A_c = 0.5 * np.eye(dims.n_xc) + rng.uniform(-0.2, 0.2, (dims.m_c, dims.n_xc, dims.n_xc))
        A_a = 0.5 * np.eye(dims.n_xa) + rng.uniform(-0.2, 0.2, (dims.m_a, dims.n_xa, dims.n_xa))
        C_c = B_c[None] + scale_c * rng.uniform(-0.5, 0.5, (dims.m_c, dims.n_y, dims.n_xc))
        C_a = B_a[None] + scale_a * rng.uniform(-0.5, 0.5, (dims.m_a, dims.n_y, dims.n_xa))
    else:
        spread = lambda m: np.linspace(-1.0, 1.0, m) if m > 1 else np.zeros(1)
        sc, sa = spread(dims.m_c), spread(dims.m_a)
        A_c = (0.5 + 0.2 * sc)[:, None, None] * np.eye(dims.n_xc)
        A_a = (0.5 + 0.2 * sa)[:, None, None] * np.eye(dims.n_xa)
        C_c = B_c[None] + 0.5 * scale_c * sc[:, None, None]
        C_a = B_a[None] + 0.5 * scale_a * sa[:, None, None]

    return ModelParams(
        A_c=A_c, A_a=A_a, C_c=C_c, C_a=C_a,
        Sigma_c=np.broadcast_to(var * np.eye(dims.n_xc), (dims.m_c, dims.n_xc, dims.n_xc)),
        Sigma_a=np.broadcast_to(var * np.eye(dims.n_xa), (dims.m_a, dims.n_xa, dims.n_xa)),
        Sigma_m=var * np.eye(dims.n_y),
        pi_c=np.full(dims.m_c, 1.0 / dims.m_c),
        pi_a=np.full(dims.m_a, 1.0 / dims.m_a),
    )


def interpolate(p: ModelParams, q: ModelParams, alpha: float) -> ModelParams:
    """``(1 - alpha) p + alpha q`` entry-wise; stays valid for covariances and probabilities."""
    kw = {}
    for name in ("A_c", "A_a", "C_c", "C_a", "Sigma_c", "Sigma_a", "Sigma_m", "pi_c", "pi_a"):
        v = (1 - alpha) * getattr(p, name) + alpha * getattr(q, name)
        kw[name] = symmetrize(v) if name.startswith("Sigma") else v
    kw["pi_c"] = kw["pi_c"] / kw["pi_c"].sum()
    kw["pi_a"] = kw["pi_a"] / kw["pi_a"].sum()
    return ModelParams(**kw)


def _evaluate(params, y, x_c0, x_aT1, ref, config):
    assignment, filt = e_step(params, y, x_c0, x_aT1, ref=ref, init_cov=config.init_cov,
                              inner_sweeps=config.inner_sweeps)
    ll = observed_loglik(params, assignment, filt)
    return assignment, filt, ll


def _run_single(y, x_c0, x_aT1, dims, config, restart):
    theta = initialize(y, dims, config, restart)
    report = validate(theta, dims)
    if not report.ok:
        raise ValueError(f"initial parameters invalid: {report}")
    assignment, filt, ll = _evaluate(theta, y, x_c0, x_aT1, None, config)
    lls = [ll]
    qs = [evaluate_Q(theta, assignment, filt)]
    snaps = [theta]
    notes = []
    guard_steps = 0
    stop = "max-iters"
    for k in range(config.max_iters):
        new, flags = m_step(assignment, filt, theta, correction=config.cov_correction,
                            pi_floor=config.pi_floor)
        for f in flags:
            notes.append(f"iter {k + 1}: {f}")
        cand = _evaluate(new, y, x_c0, x_aT1, filt, config)
        floor = ll - config.mono_tol * abs(ll)
        if cand[2] < floor:
            if not config.ascent_guard:
                lls.append(cand[2])
                qs.append(evaluate_Q(new, cand[0], cand[1]))
                snaps.append(new)
                notes.append(f"iter {k + 1}: log-likelihood fell from {ll:.10g} to {cand[2]:.10g}")
                stop = "divergence"
                break
            accepted = None
            alpha = 1.0
            for _ in range(config.guard_halvings):
                alpha *= 0.5
                trial = interpolate(theta, new, alpha)
                res = _evaluate(trial, y, x_c0, x_aT1, filt, config)
                guard_steps += 1
                if res[2] >= floor:
                    accepted = (trial, res)
                    break
            if accepted is None:
                notes.append(f"iter {k + 1}: no ascent step within {config.guard_halvings} halvings; stopped")
                stop = "converged"
                break
            new, cand = accepted
            notes.append(f"iter {k + 1}: step shrunk to alpha={alpha:g}")
        prev_ll = ll
        theta = new
        assignment, filt, ll = cand
        lls.append(ll)
        qs.append(evaluate_Q(theta, assignment, filt))
        snaps.append(theta)
        logger.info("restart %d iter %d loglik %.10g delta %.3g", restart, k + 1, ll, ll - prev_ll)
        if abs(ll - prev_ll) <= config.tol_loglik * abs(prev_ll):
            stop = "converged"
            break
    return EmReport(
        loglik_trace=lls, q_trace=qs, params_trace=snaps,
        final_params=theta, final_assignment=assignment, final_filter=filt,
        stop_reason=stop, guard_steps=guard_steps, notes=notes, accepted_loglik=ll,
    )


def run(y, boundaries=None, dims: Dims | None = None, config: EmConfig | None = None) -> EmReport:
    """Identify a model from outputs ``y`` with multiple restarts.

    ``boundaries`` is ``(x_c0, x_aT1)``; zeros when omitted. Returns the
    report of the restart with the highest final log-likelihood (lowest
    index on ties). Restarts whose filter diverges are skipped.
    """
    config = config or EmConfig()
    y = np.asarray(y, dtype=float)
    y = y.reshape(len(y), -1)
    if dims is None:
        if config.init_params is None:
            raise ValueError("dims are required")
        dims = config.init_params.dims
    if y.shape[1] != dims.n_y:
        raise ValueError(f"data has {y.shape[1]} output columns, dims say {dims.n_y}")
    if boundaries is None:
        boundaries = (np.zeros(dims.n_xc), np.zeros(dims.n_xa))
    x_c0, x_aT1 = (np.ravel(b).astype(float) for b in boundaries)

    best = None
    lls, reasons = [], []
    for r in range(config.restarts):
        try:
            rep = _run_single(y, x_c0, x_aT1, dims, config, r)
        except (FilterDivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.warning("restart %d aborted: %s", r, exc)
            lls.append(-np.inf)
            reasons.append("divergence")
            continue
        lls.append(rep.final_loglik)
        reasons.append(rep.stop_reason)
        if best is None or rep.final_loglik > best[1].final_loglik:
            best = (r, rep)
    if best is None:
        raise FilterDivergenceError("every restart diverged")
    r, rep = best
    rep.restart_index_chosen = r
    rep.restart_logliks = lls
    rep.restart_stop_reasons = reasons
    return rep
