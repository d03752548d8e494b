"""Parameter container and validity checks for switching non-causal systems.

The model has a causal state driven forward in time and an anticausal state
driven backward in time, each selecting its matrices from its own i.i.d.
switching sequence::

    x_c(t) = A_c[s_c(t)] x_c(t-1) + v_c(t)
    x_a(t) = A_a[s_a(t)] x_a(t+1) + v_a(t)
    y(t)   = C_c[s_c(t)] x_c(t) + C_a[s_a(t)] x_a(t) + v_m(t)

Mode indices are 0-based everywhere inside the package. Files on disk use
1-based labels; conversion happens in :mod:`ncrsm.io`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12
SYM_TOL = 1e-12


def symmetrize(M):
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dims:
    """Sizes of an NCS-RSM model."""

    n_y: int
    n_xc: int
    n_xa: int
    m_c: int
    m_a: int

    def __post_init__(self):
        for name in ("n_y", "n_xc", "n_xa", "m_c", "m_a"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @classmethod
    def parse(cls, text: str) -> "Dims":
        """Parse ``"n_y,n_xc,n_xa,m_c,m_a"``."""
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 5:
            raise ValueError(f"dims spec needs 5 comma-separated integers, got {text!r}")
        return cls(*(int(p) for p in parts))

    def as_tuple(self):
        return (self.n_y, self.n_xc, self.n_xa, self.m_c, self.m_a)


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set theta.

    Per-mode matrices are stacked along the first axis, so ``A_c[j]`` is the
    causal transition matrix of mode ``j``. Arrays are copied and made
    read-only on construction.
    """

    A_c: np.ndarray  # (m_c, n_xc, n_xc)
    A_a: np.ndarray  # (m_a, n_xa, n_xa)
    C_c: np.ndarray  # (m_c, n_y, n_xc)
    C_a: np.ndarray  # (m_a, n_y, n_xa)
    Sigma_c: np.ndarray  # (m_c, n_xc, n_xc)
    Sigma_a: np.ndarray  # (m_a, n_xa, n_xa)
    Sigma_m: np.ndarray  # (n_y, n_y)
    pi_c: np.ndarray  # (m_c,)
    pi_a: np.ndarray  # (m_a,)

    def __post_init__(self):
        for name, nd in _NDIMS.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim == nd - 1 and name != "Sigma_m" and not name.startswith("pi"):
                arr = arr[None]
            if name == "Sigma_m":
                arr = np.atleast_2d(arr)
            if name.startswith("pi"):
                arr = np.atleast_1d(arr)
            if arr.ndim != nd:
                raise ValueError(f"{name} must have {nd} dimensions, got shape {arr.shape}")
            object.__setattr__(self, name, _frozen(arr))

    @property
    def dims(self) -> Dims:
        return Dims(
            n_y=self.Sigma_m.shape[0],
            n_xc=self.A_c.shape[1],
            n_xa=self.A_a.shape[1],
            m_c=self.A_c.shape[0],
            m_a=self.A_a.shape[0],
        )

    def replace(self, **changes) -> "ModelParams":
        kw = {name: getattr(self, name) for name in _NDIMS}
        kw.update(changes)
        return ModelParams(**kw)

    def permuted(self, perm_c: Sequence[int], perm_a: Sequence[int]) -> "ModelParams":
        """Relabel modes: new mode ``k`` is old mode ``perm[k]``."""
        pc, pa = list(perm_c), list(perm_a)
        return self.replace(
            A_c=self.A_c[pc],
            C_c=self.C_c[pc],
            Sigma_c=self.Sigma_c[pc],
            pi_c=self.pi_c[pc],
            A_a=self.A_a[pa],
            C_a=self.C_a[pa],
            Sigma_a=self.Sigma_a[pa],
            pi_a=self.pi_a[pa],
        )

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in _NDIMS}

    def allclose(self, other: "ModelParams", atol=0.0, rtol=0.0) -> bool:
        return all(
            np.allclose(getattr(self, n), getattr(other, n), atol=atol, rtol=rtol)
            for n in _NDIMS
        )


_NDIMS = {
    "A_c": 3,
    "A_a": 3,
    "C_c": 3,
    "C_a": 3,
    "Sigma_c": 3,
    "Sigma_a": 3,
    "Sigma_m": 2,
    "pi_c": 1,
    "pi_a": 1,
}
PARAM_NAMES = tuple(_NDIMS)


@dataclass(frozen=True)
class SwitchingSequence:
    """Pair of 0-based mode sequences of equal length."""

    s_c: np.ndarray
    s_a: np.ndarray

    def __post_init__(self):
        s_c = np.asarray(self.s_c, dtype=np.int64).ravel()
        s_a = np.asarray(self.s_a, dtype=np.int64).ravel()
        if s_c.shape != s_a.shape:
            raise ValueError(f"sequence lengths differ: {s_c.size} vs {s_a.size}")
        object.__setattr__(self, "s_c", s_c)
        object.__setattr__(self, "s_a", s_a)

    @property
    def T(self) -> int:
        return int(self.s_c.size)

    def check(self, dims: Dims):
        for name, s, m in (("s_c", self.s_c, dims.m_c), ("s_a", self.s_a, dims.m_a)):
            if s.size and (s.min() < 0 or s.max() >= m):
                raise ValueError(f"{name} has entries outside 0..{m - 1}")


@dataclass
class ValidityReport:
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "pass" if self.ok else "fail: " + "; ".join(self.problems)


def _check_cov(name, S, report, allow_psd=False):
    S = np.asarray(S)
    if not np.all(np.isfinite(S)):
        report.problems.append(f"{name}: non-finite entries")
        return
    asym = np.max(np.abs(S - S.T)) if S.size else 0.0
    if asym > SYM_TOL * max(1.0, np.max(np.abs(S))):
        report.problems.append(f"{name}: not symmetric (max asymmetry {asym:.3g})")
        return
    lam = np.linalg.eigvalsh(symmetrize(S)).min()
    if lam < 0 or (lam == 0 and not allow_psd):
        kind = "positive semi-definite" if allow_psd else "positive definite"
        report.problems.append(f"{name}: not {kind} (min eigenvalue {lam:.3g})")


def validate(params: ModelParams, dims: Dims | None = None, allow_psd=False) -> ValidityReport:
    """Check every invariant of ``params`` and report violations by matrix index.

    ``allow_psd`` accepts singular noise covariances, which the simulator
    tolerates but identification does not.
    """
    report = ValidityReport()
    dims = dims or params.dims
    n_y, n_xc, n_xa, m_c, m_a = dims.as_tuple()
    expected = {
        "A_c": (m_c, n_xc, n_xc),
        "A_a": (m_a, n_xa, n_xa),
        "C_c": (m_c, n_y, n_xc),
        "C_a": (m_a, n_y, n_xa),
        "Sigma_c": (m_c, n_xc, n_xc),
        "Sigma_a": (m_a, n_xa, n_xa),
        "Sigma_m": (n_y, n_y),
        "pi_c": (m_c,),
        "pi_a": (m_a,),
    }
    shapes_ok = True
    for name, shape in expected.items():
        got = getattr(params, name).shape
        if got != shape:
            report.problems.append(f"{name}: shape {got} != expected {shape}")
            shapes_ok = False
    if not shapes_ok:
        return report

    for name in ("A_c", "A_a", "C_c", "C_a"):
        arr = getattr(params, name)
        for i in range(arr.shape[0]):
            if not np.all(np.isfinite(arr[i])):
                report.problems.append(f"{name}[{i + 1}]: non-finite entries")
    for name in ("pi_c", "pi_a"):
        p = getattr(params, name)
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            report.problems.append(f"{name}: negative or non-finite probability")
        if abs(p.sum() - 1.0) > PROB_TOL:
            report.problems.append(f"{name}: probabilities sum to {p.sum():.15g}, not 1")
    for name in ("Sigma_c", "Sigma_a"):
        arr = getattr(params, name)
        for i in range(arr.shape[0]):
            _check_cov(f"{name}[{i + 1}]", arr[i], report, allow_psd)
    _check_cov("Sigma_m", params.Sigma_m, report, allow_psd)
    return report


@dataclass(frozen=True)
class StabilityHint:
    radii_c: np.ndarray
    radii_a: np.ndarray

    @property
    def flagged(self) -> bool:
        # radii within rounding of one count as flagged (e.g. an identity block)
        return bool(np.any(self.radii_c >= 1.0 - 1e-12) or np.any(self.radii_a >= 1.0 - 1e-12))


def spectral_radius(A) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=float)))))


def spectral_stability_hint(params: ModelParams) -> StabilityHint:
    """Per-mode spectral radii of the transition matrices.

    Only a heuristic: switching between individually unstable modes can be
    stable on average and vice versa. Radii at or above one are flagged.
    """
    return StabilityHint(
        radii_c=np.array([spectral_radius(A) for A in params.A_c]),
        radii_a=np.array([spectral_radius(A) for A in params.A_a]),
    )


def mode_permutations(m: int):
    return list(itertools.permutations(range(m)))


def example1_params(sigma: float = 1.0, sigma_m: float = 1.0, pi_c=(0.7, 0.3), pi_a=(0.5, 0.5)):
    """True parameters of the two-mode academic example.

    Process noise covariances are ``sigma * I``; ``sigma=0`` gives the
    noiseless variant (valid for simulation only).
    """
    I2 = np.eye(2)
    return ModelParams(
        A_c=[[[1.0, 0.2], [0.3, 0.8]], [[0.8, 0.2], [0.3, 0.5]]],
        A_a=[[[1.0, 0.0], [0.0, 1.0]], [[0.6, 0.2], [0.3, 0.8]]],
        C_c=[[[0.3, 0.7]], [[0.7, 0.2]]],
        C_a=[[[0.2, 0.6]], [[0.3, 0.76]]],
        Sigma_c=[sigma * I2, sigma * I2],
        Sigma_a=[sigma * I2, sigma * I2],
        Sigma_m=[[sigma_m]],
        pi_c=list(pi_c),
        pi_a=list(pi_a),
    )


# Estimates reported alongside the true values of the academic example.
EXAMPLE1_REPORTED_ESTIMATE = dict(
    A_a=[[[0.9681, 0.0120], [0.0142, 0.9868]], [[0.6242, 0.1992], [0.3283, 0.7738]]],
    A_c=[[[1.0131, 0.2130], [0.2849, 0.8333]], [[0.8118, 0.1899], [0.3291, 0.4784]]],
    C_a=[[[0.2011, 0.5962]], [[0.2850, 0.7677]]],
    C_c=[[[0.2983, 0.6979]], [[0.7023, 0.2029]]],
    pi_c=[0.6963, 0.3037],
    pi_a=[0.493, 0.507],
    Sigma_a=[[[1.1111, -0.0711], [-0.0711, 0.9865]], [[0.9307, 0.0567], [0.0567, 1.0386]]],
    Sigma_c=[[[0.9773, -0.0067], [-0.0067, 0.9763]], [[1.0134, -0.0001], [-0.0001, 0.9850]]],
    Sigma_m=[[1.0049]],
)


def example1_reported_estimate() -> ModelParams:
    return ModelParams(**EXAMPLE1_REPORTED_ESTIMATE)
