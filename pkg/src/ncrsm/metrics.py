"""Evaluation quantities: match rates, state errors, parameter errors, rate scaling."""

from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estep import FilterResult, ModeAssignment
from .model import ModelParams, mode_permutations
from .mstep import update_A, update_C, update_pi, update_Sigma
from .simulate import TrajectoryDivergenceError, simulate_model

logger = logging.getLogger(__name__)

MAX_MODES = 5
RATE_COLUMNS = ("T", "seed", "mode", "err_Ac", "err_Aa", "err_Cc", "err_Ca",
                "err_Sc", "err_Sa", "err_Sm", "bound", "ratio")


def match_rate(true_seq, est_seq, n_modes: int | None = None) -> float:
    """Fraction of agreeing labels, maximized over relabelings of ``est_seq``."""
    s = np.asarray(true_seq, dtype=np.int64).ravel()
    e = np.asarray(est_seq, dtype=np.int64).ravel()
    if s.size != e.size:
        raise ValueError(f"sequence lengths differ: {s.size} vs {e.size}")
    if s.size == 0:
        raise ValueError("empty sequences")
    if n_modes is None:
        n_modes = int(max(s.max(), e.max())) + 1
    if n_modes > MAX_MODES:
        raise ValueError(f"at most {MAX_MODES} modes supported, got {n_modes}")
    # confusion[i, k] = #{t: s = i, e = k}
    confusion = np.zeros((n_modes, n_modes), dtype=np.int64)
    np.add.at(confusion, (s, e), 1)
    best = max(sum(confusion[perm[k], k] for k in range(n_modes)) for perm in mode_permutations(n_modes))
    return best / s.size


def rel_state_error(x_true, x_hat) -> float:
    """``|x - x_hat|^2 / |x|^2`` over the whole stacked sequence."""
    x = np.asarray(x_true, dtype=float)
    xh = np.asarray(x_hat, dtype=float)
    if x.shape != xh.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {xh.shape}")
    den = float(np.sum(x * x))
    if den == 0.0:
        raise ValueError("true sequence has zero norm")
    return float(np.sum((x - xh) ** 2)) / den


def inf_norm(M) -> float:
    """Maximum absolute row sum."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.abs(M).sum(axis=1).max())


@dataclass(frozen=True)
class ParamError:
    perm_c: tuple
    perm_a: tuple
    A_c: np.ndarray
    A_a: np.ndarray
    C_c: np.ndarray
    C_a: np.ndarray
    Sigma_c: np.ndarray
    Sigma_a: np.ndarray
    Sigma_m: float
    pi_c: float
    pi_a: float

    @property
    def total(self) -> float:
        return float(sum(np.sum(getattr(self, k)) for k in ("A_c", "A_a", "C_c", "C_a", "Sigma_c", "Sigma_a"))
                     + self.Sigma_m)

    def table(self) -> list[dict]:
        rows = []
        for name in ("A_c", "A_a", "C_c", "C_a", "Sigma_c", "Sigma_a"):
            for j, v in enumerate(getattr(self, name)):
                rows.append({"matrix": name, "mode": j + 1, "err_inf": float(v)})
        rows.append({"matrix": "Sigma_m", "mode": 1, "err_inf": self.Sigma_m})
        rows.append({"matrix": "pi_c", "mode": 0, "err_inf": self.pi_c})
        rows.append({"matrix": "pi_a", "mode": 0, "err_inf": self.pi_a})
        return rows


def _errors(true: ModelParams, est: ModelParams, pc, pa) -> ParamError:
    e = est.permuted(pc, pa)
    per = lambda name: np.array([inf_norm(a - b) for a, b in zip(getattr(e, name), getattr(true, name))])
    return ParamError(
        perm_c=tuple(pc), perm_a=tuple(pa),
        A_c=per("A_c"), A_a=per("A_a"), C_c=per("C_c"), C_a=per("C_a"),
        Sigma_c=per("Sigma_c"), Sigma_a=per("Sigma_a"),
        Sigma_m=inf_norm(e.Sigma_m - true.Sigma_m),
        pi_c=float(np.abs(e.pi_c - true.pi_c).max()),
        pi_a=float(np.abs(e.pi_a - true.pi_a).max()),
    )


def param_error(params_true: ModelParams, params_est: ModelParams) -> ParamError:
    """Per-matrix infinity-norm errors under the relabeling pair with least total error.

    ``perm_c[k]`` is the estimated mode matched to true mode ``k``.
    """
    dt, de = params_true.dims, params_est.dims
    if dt != de:
        raise ValueError(f"dimension mismatch: {dt.as_tuple()} vs {de.as_tuple()}")
    if max(dt.m_c, dt.m_a) > MAX_MODES:
        raise ValueError(f"at most {MAX_MODES} modes supported")
    best = None
    for pc, pa in itertools.product(mode_permutations(dt.m_c), mode_permutations(dt.m_a)):
        err = _errors(params_true, params_est, pc, pa)
        if best is None or err.total < best.total:
            best = err
    return best


def oracle_estimate(traj, m_c: int, m_a: int, prev: ModelParams | None = None) -> ModelParams:
    """Switching least squares fed with the true states and mode sequences."""
    states = FilterResult.from_states(traj.x_c_true, traj.x_a_true, traj.y, traj.x_c0, traj.x_aT1)
    assignment = ModeAssignment.from_sequences(traj.seq_true.s_c, traj.seq_true.s_a, m_c, m_a)
    pi_c, pi_a = update_pi(assignment)
    A_c, A_a, _ = update_A(assignment, states, prev=prev, correction="none")
    C_c, C_a, _ = update_C(assignment, states, prev=prev, correction="none")
    Sc, Sa, Sm, _ = update_Sigma(assignment, states, traj.y, A_c, A_a, C_c, C_a, prev=prev, correction="none")
    return ModelParams(A_c=A_c, A_a=A_a, C_c=C_c, C_a=C_a, Sigma_c=Sc, Sigma_a=Sa, Sigma_m=Sm,
                       pi_c=pi_c, pi_a=pi_a)


def rate_bound(T) -> float:
    return float(np.sqrt(np.log(T) / T))


@dataclass
class RateExperiment:
    """Parameter errors across sample sizes against ``sqrt(log T / T)``."""

    T_grid: tuple
    seeds: tuple
    oracle_mode: bool
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    gram_eigs: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.T_grid)
        if g.size < 3 or np.any(np.diff(g) <= 0):
            raise ValueError("T_grid must be strictly increasing with at least 3 entries")

    def max_A_error(self) -> np.ndarray:
        """``(len(T_grid), len(seeds))`` array of the largest transition error; NaN where excluded."""
        out = np.full((len(self.T_grid), len(self.seeds)), np.nan)
        ti = {T: i for i, T in enumerate(self.T_grid)}
        si = {s: i for i, s in enumerate(self.seeds)}
        for r in self.rows:
            v = np.nanmax([r["err_Ac"], r["err_Aa"]])
            i, k = ti[r["T"]], si[r["seed"]]
            out[i, k] = v if np.isnan(out[i, k]) else max(out[i, k], v)
        return out

    def median_error(self) -> np.ndarray:
        E = self.max_A_error()
        return np.array([np.nanmedian(e) if np.any(np.isfinite(e)) else np.nan for e in E])

    def ratios(self) -> np.ndarray:
        return self.median_error() / np.array([rate_bound(T) for T in self.T_grid])

    def ratio_spread(self) -> float:
        r = self.ratios()
        return float(np.max(r) / np.min(r)) if np.all(np.isfinite(r)) and np.min(r) > 0 else np.inf

    def decreasing_fraction(self) -> float:
        """Share of seeds whose error at the largest T is below the error at the smallest T."""
        E = self.max_A_error()
        ok = np.isfinite(E[0]) & np.isfinite(E[-1])
        return float(np.mean(E[-1][ok] < E[0][ok])) if ok.any() else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RATE_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _cell(v) for k, v in r.items()})


def _cell(v):
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return v


def _rate_run(params_true, T, seed, oracle_mode, em_config, state_cap, boundaries):
    traj = simulate_model(params_true, T, seed=seed, x_c0=boundaries[0], x_aT1=boundaries[1], state_cap=state_cap)
    d = params_true.dims
    if oracle_mode:
        est = oracle_estimate(traj, d.m_c, d.m_a, prev=params_true)
    else:
        from .em import EmConfig, run

        cfg = em_config or EmConfig(seed=seed)
        est = run(traj.y, (traj.x_c0, traj.x_aT1), d, cfg).final_params
    err = param_error(params_true, est)
    eigs = {}
    if oracle_mode:
        for name, x, s, m, reg in (
            ("c", traj.x_c_true, traj.seq_true.s_c, d.m_c, np.vstack([traj.x_c0[None], traj.x_c_true[:-1]])),
            ("a", traj.x_a_true, traj.seq_true.s_a, d.m_a, np.vstack([traj.x_a_true[1:], traj.x_aT1[None]])),
        ):
            for j in range(m):
                R = reg[s == j]
                w = np.linalg.eigvalsh(R.T @ R) if R.size else np.zeros(1)
                eigs[(name, j + 1)] = (float(w.min()), float(w.max()))
    return err, eigs


def rate_experiment(params_true: ModelParams, T_grid, seeds, oracle_mode: bool = True,
                    em_config=None, jobs: int = 1, state_cap: float | None = None,
                    boundaries=(None, None)) -> RateExperiment:
    """Simulate and identify for every ``(T, seed)``; divergent runs are recorded and excluded.

    In oracle mode the switching least-squares update receives the true
    states and sequences, so only the regression error is measured. Otherwise
    the full EM runs from ``em_config``. ``boundaries`` are ``(x_c0, x_aT1)``,
    zero by default. Sub-runs execute on ``jobs`` threads.
    """
    from .simulate import DEFAULT_STATE_CAP

    cap = DEFAULT_STATE_CAP if state_cap is None else state_cap
    exp = RateExperiment(T_grid=tuple(int(T) for T in T_grid), seeds=tuple(int(s) for s in seeds),
                         oracle_mode=oracle_mode)
    d = params_true.dims
    tasks = [(T, s) for T in exp.T_grid for s in exp.seeds]

    def work(task):
        T, s = task
        try:
            return task, _rate_run(params_true, T, s, oracle_mode, em_config, cap, boundaries), None
        except (TrajectoryDivergenceError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
            return task, None, exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(work, tasks))
    else:
        results = [work(t) for t in tasks]

    for (T, s), res, exc in results:
        if res is None:
            logger.warning("T=%d seed=%d excluded: %s", T, s, exc)
            exp.failures.append({"T": T, "seed": s, "error": f"{type(exc).__name__}: {exc}"})
            continue
        err, eigs = res
        bound = rate_bound(T)
        for (side, j), v in eigs.items():
            exp.gram_eigs[(T, s, side, j)] = v
        for j in range(max(d.m_c, d.m_a)):
            pick = lambda arr: float(arr[j]) if j < arr.size else float("nan")
            row = {
                "T": T, "seed": s, "mode": j + 1,
                "err_Ac": pick(err.A_c), "err_Aa": pick(err.A_a),
                "err_Cc": pick(err.C_c), "err_Ca": pick(err.C_a),
                "err_Sc": pick(err.Sigma_c), "err_Sa": pick(err.Sigma_a),
                "err_Sm": float(err.Sigma_m), "bound": bound,
            }
            row["ratio"] = float(np.nanmax([row["err_Ac"], row["err_Aa"]])) / bound
            exp.rows.append(row)
    return exp
