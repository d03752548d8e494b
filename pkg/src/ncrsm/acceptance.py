"""Acceptance suite A1-A10.

Each criterion is run at its stated size and tolerance and yields a
:class:`CriterionResult`. ``details`` explain a failure; ``diagnostics`` hold
extra, non-asserted context such as the same measurement on a stabilized
variant of the academic example.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .em import EmConfig, run
from .estep import FilterResult, ModeAssignment, e_step, filter_sweep, kalman_gains, posterior_cov_general
from .metrics import match_rate, param_error, rate_experiment, rel_state_error
from .model import ModelParams, example1_params
from .mstep import update_A, update_C
from .oracles import brute_force_outputs, brute_force_transition, joint_filter
from .simulate import TrajectoryDivergenceError, rng_stream, simulate_model

logger = logging.getLogger(__name__)

T_EXAMPLE = 10_000
SEED = 0
# stabilized variant for diagnostics only: causal transitions scaled down
STABILIZE = 0.85


@dataclass
class CriterionResult:
    name: str
    passed: bool
    summary: str
    details: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} - {self.summary}"


def stabilized_example1(**kw) -> ModelParams:
    p = example1_params(**kw)
    return p.replace(A_c=p.A_c * STABILIZE)


def random_model(seed: int, max_dims=(2, 2, 2, 2, 2), rho=(0.3, 0.9)) -> ModelParams:
    """Random valid model with per-mode spectral radii in ``rho``."""
    r = rng_stream(seed, 7)
    n_y, n_xc, n_xa, m_c, m_a = (int(r.integers(1, k + 1)) for k in max_dims)

    def trans(m, n):
        out = []
        for _ in range(m):
            M = r.normal(size=(n, n))
            out.append(M * r.uniform(*rho) / np.max(np.abs(np.linalg.eigvals(M))))
        return np.array(out)

    def cov(m, n):
        W = r.normal(size=(m, n, n))
        return 0.5 * W @ np.swapaxes(W, 1, 2) / n + 0.2 * np.eye(n)

    return ModelParams(
        A_c=trans(m_c, n_xc), A_a=trans(m_a, n_xa),
        C_c=r.normal(size=(m_c, n_y, n_xc)), C_a=r.normal(size=(m_a, n_y, n_xa)),
        Sigma_c=cov(m_c, n_xc), Sigma_a=cov(m_a, n_xa), Sigma_m=cov(1, n_y)[0],
        pi_c=r.dirichlet(3 * np.ones(m_c)), pi_a=r.dirichlet(3 * np.ones(m_a)),
    )


def _pipeline(params, T, seed, config=None):
    """Simulate, identify and score one run; returns a dict of results."""
    traj = simulate_model(params, T, seed=seed)
    cfg = config or EmConfig(seed=seed)
    t0 = time.perf_counter()
    rep = run(traj.y, (traj.x_c0, traj.x_aT1), params.dims, cfg)
    elapsed = time.perf_counter() - t0
    a = rep.final_assignment
    d = params.dims
    out = {
        "report": rep, "traj": traj, "seconds": elapsed,
        "err": param_error(params, rep.final_params),
        "mr_c": match_rate(traj.seq_true.s_c, a.s_c_hat, d.m_c),
        "mr_a": match_rate(traj.seq_true.s_a, a.s_a_hat, d.m_a),
    }
    try:
        out["delta_c"] = rel_state_error(traj.x_c_true, rep.final_filter.x_c_hat)
        out["delta_a"] = rel_state_error(traj.x_a_true, rep.final_filter.x_a_hat)
    except ValueError:
        out["delta_c"] = out["delta_a"] = float("nan")
    return out


def _fmt_err(err) -> str:
    return (f"max|A_c err|={err.A_c.max():.3g} max|A_a err|={err.A_a.max():.3g} "
            f"max|C_c err|={err.C_c.max():.3g} max|C_a err|={err.C_a.max():.3g} "
            f"|Sigma_m err|={err.Sigma_m:.3g} |pi_c err|={err.pi_c:.3g}")


class Suite:
    """Runs the criteria, sharing the Example 1 identification between A1-A3."""

    def __init__(self, diagnostics: bool = True, jobs: int = 1):
        self.diagnostics = diagnostics
        self.jobs = jobs
        self._example = None
        self._surrogate = None
        self._truth = None

    # shared runs -------------------------------------------------------------

    def example_run(self):
        if self._example is None:
            try:
                self._example = _pipeline(example1_params(), T_EXAMPLE, SEED)
            except TrajectoryDivergenceError as exc:
                self._example = exc
        return self._example

    def surrogate_run(self):
        if self._surrogate is None:
            try:
                self._surrogate = _pipeline(stabilized_example1(), T_EXAMPLE, SEED)
            except TrajectoryDivergenceError as exc:
                self._surrogate = exc
        return self._surrogate

    def _surrogate_diag(self, keys):
        if not self.diagnostics:
            return []
        s = self.surrogate_run()
        if isinstance(s, Exception):
            return [f"stabilized variant also failed: {s}"]
        vals = " ".join(f"{k}={s[k]:.4g}" for k in keys if k in s)
        out = [f"stabilized variant (A_c x {STABILIZE}), identified: {vals}; {_fmt_err(s['err'])}"]
        t = self.truth_estep()
        vals = " ".join(f"{k}={t[k]:.4g}" for k in keys if k in t)
        out.append(f"stabilized variant, E-step at the true parameters: {vals}")
        return out

    def truth_estep(self):
        """Mode and state recovery of the E-step when handed the true parameters."""
        if self._truth is None:
            p = stabilized_example1()
            traj = simulate_model(p, T_EXAMPLE, seed=SEED)
            a, f = e_step(p, traj.y, traj.x_c0, traj.x_aT1)
            self._truth = {
                "mr_c": match_rate(traj.seq_true.s_c, a.s_c_hat, 2),
                "mr_a": match_rate(traj.seq_true.s_a, a.s_a_hat, 2),
                "delta_c": rel_state_error(traj.x_c_true, f.x_c_hat),
                "delta_a": rel_state_error(traj.x_a_true, f.x_a_hat),
            }
        return self._truth

    # criteria ----------------------------------------------------------------

    def A1(self):
        r = self.example_run()
        if isinstance(r, Exception):
            return CriterionResult("A1", False, f"simulation diverged: {r}",
                                   diagnostics=self._surrogate_diag(["mr_c", "mr_a"]))
        e = r["err"]
        checks = {
            "A <= 0.10": max(e.A_c.max(), e.A_a.max()) <= 0.10,
            "C <= 0.08": max(e.C_c.max(), e.C_a.max()) <= 0.08,
            "Sigma_m <= 0.10": e.Sigma_m <= 0.10,
            "pi_c <= 0.03": e.pi_c <= 0.03,
            "runtime < 120 s": r["seconds"] < 120,
        }
        failed = [k for k, ok in checks.items() if not ok]
        return CriterionResult("A1", not failed, _fmt_err(e) + f" runtime={r['seconds']:.1f}s",
                               details=[f"failed: {', '.join(failed)}"] if failed else [])

    def A2(self):
        r = self.example_run()
        if isinstance(r, Exception):
            return CriterionResult("A2", False, f"no A1 run (simulation diverged: {r})",
                                   diagnostics=self._surrogate_diag(["mr_c", "mr_a"]))
        ok = r["mr_c"] >= 0.95 and r["mr_a"] >= 0.97
        return CriterionResult("A2", ok, f"match rates causal={r['mr_c']:.4f} (>= 0.95) "
                                         f"anticausal={r['mr_a']:.4f} (>= 0.97)")

    def A3(self):
        r = self.example_run()
        if isinstance(r, Exception):
            return CriterionResult("A3", False, f"no A1 run (simulation diverged: {r})",
                                   diagnostics=self._surrogate_diag(["delta_c", "delta_a"]))
        ok = r["delta_c"] <= 0.05 and r["delta_a"] <= 0.05
        return CriterionResult("A3", ok, f"delta_c={r['delta_c']:.4g} delta_a={r['delta_a']:.4g} (both <= 0.05)")

    def A4(self, levels=(0.01, 0.1, 0.5, 1.0), runs=20):
        parts, ok, details = [], True, []
        for s in levels:
            rates, diverged = [], 0
            for k in range(runs):
                try:
                    r = _pipeline(example1_params(sigma=s, sigma_m=s), T_EXAMPLE, SEED + k)
                except TrajectoryDivergenceError:
                    diverged += 1
                    continue
                rates.append(0.5 * (r["mr_c"] + r["mr_a"]))
            if rates:
                mean, var = float(np.mean(rates)), float(np.var(rates))
                parts.append(f"Sigma={s}I: mean={mean:.4f} var={var:.3g} ({len(rates)} runs)")
                ok &= mean >= 0.96 and diverged == 0
            else:
                parts.append(f"Sigma={s}I: no run completed")
                ok = False
            if diverged:
                details.append(f"Sigma={s}I: {diverged}/{runs} simulations diverged")
        return CriterionResult("A4", ok, "; ".join(parts), details=details)

    def A5(self):
        p = example1_params(sigma=0.0, sigma_m=0.0)
        try:
            r = _pipeline(p, T_EXAMPLE, SEED)
        except TrajectoryDivergenceError as exc:
            return CriterionResult("A5", False, f"simulation diverged: {exc}")
        ok = r["mr_c"] == 1.0 and r["mr_a"] == 1.0
        y_norm = float(np.abs(r["traj"].y).max())
        return CriterionResult("A5", ok, f"match rates causal={r['mr_c']:.4f} anticausal={r['mr_a']:.4f} (both == 1)",
                               details=[] if ok else [f"max |y| = {y_norm:.3g}"])

    def A6(self, n_models=50, T=2000):
        hard, aborted, shown = 0, 0, []
        iters = []
        for k in range(n_models):
            p = random_model(k)
            try:
                traj = simulate_model(p, T, seed=k)
                rep = run(traj.y, (traj.x_c0, traj.x_aT1), p.dims, EmConfig(seed=k, restarts=1))
            except Exception as exc:  # filter blow-up counts separately
                aborted += 1
                shown.append(f"model {k}: aborted ({exc})")
                continue
            v = rep.monotone_violations(1e-8)
            iters.append(rep.n_iters)
            if v:
                hard += 1
                if len(shown) < 5:
                    ll = rep.loglik_trace
                    shown.append(f"model {k} dims={p.dims.as_tuple()}: iter {v[0]} "
                                 f"loglik {ll[v[0] - 1]:.8g} -> {ll[v[0]]:.8g}")
        ok = hard == 0 and aborted == 0
        diags = []
        if self.diagnostics:
            guarded = 0
            for k in range(min(n_models, 10)):
                p = random_model(k)
                traj = simulate_model(p, T, seed=k)
                rep = run(traj.y, (traj.x_c0, traj.x_aT1), p.dims,
                          EmConfig(seed=k, restarts=1, ascent_guard=True, max_iters=30))
                guarded += rep.guard_steps > 0 or any("no ascent" in n for n in rep.notes)
            diags.append(f"with the ascent guard enabled, {guarded}/{min(n_models, 10)} of the first models "
                         f"needed step shrinking or stopped for lack of an ascent step")
        return CriterionResult("A6", ok, f"{hard}/{n_models} models with a likelihood decrease, {aborted} aborted, "
                                         f"median iterations {np.median(iters) if iters else 0:.0f}",
                               details=shown, diagnostics=diags)

    def A7(self, grid=(500, 2000, 8000, 32000), seeds=20):
        exp = rate_experiment(example1_params(), grid, range(seeds), oracle_mode=True, jobs=self.jobs)
        med = exp.median_error()
        if np.any(~np.isfinite(med)):
            ok = False
            summ = f"{len(exp.failures)}/{len(grid) * seeds} sub-runs diverged; medians {np.round(med, 4).tolist()}"
        else:
            spread = exp.ratio_spread()
            mono = bool(np.all(np.diff(med) < 0))
            ok = spread <= 5 and mono
            summ = f"ratio spread {spread:.3g} (<= 5), medians {np.round(med, 4).tolist()} decreasing={mono}"
        diags = []
        if self.diagnostics:
            sx = rate_experiment(stabilized_example1(), grid, range(seeds), oracle_mode=True, jobs=self.jobs)
            diags.append(f"stabilized variant: ratio spread {sx.ratio_spread():.3g}, medians "
                         f"{np.round(sx.median_error(), 4).tolist()}, error decreased for "
                         f"{100 * sx.decreasing_fraction():.0f}% of seeds")
        return CriterionResult("A7", ok, summ, details=[f["error"] for f in exp.failures[:3]], diagnostics=diags)

    def A8(self, n=100, perturbations=20):
        r = rng_stream(SEED, 8)
        worst = np.inf
        for _ in range(n):
            n_y, n_xc, n_xa = (int(v) for v in r.integers(1, 4, 3))
            C_c = r.normal(size=(n_y, n_xc))
            C_a = r.normal(size=(n_y, n_xa))
            Pc = _rand_pd(r, n_xc)
            Pa = _rand_pd(r, n_xa)
            Sm = _rand_pd(r, n_y)
            K_c, K_a, _ = kalman_gains(C_c, C_a, Pc, Pa, Sm)
            base_c = np.trace(posterior_cov_general(K_c, C_c, C_a, Pc, Pa, Sm))
            base_a = np.trace(posterior_cov_general(K_a, C_a, C_c, Pa, Pc, Sm))
            for _ in range(perturbations):
                for K, Co, Cx, Po, Px, base in ((K_c, C_c, C_a, Pc, Pa, base_c), (K_a, C_a, C_c, Pa, Pc, base_a)):
                    D = r.normal(size=K.shape)
                    D *= 1e-3 / np.linalg.norm(D)
                    inc = np.trace(posterior_cov_general(K + D, Co, Cx, Po, Px, Sm)) - base
                    worst = min(worst, inc)
        return CriterionResult("A8", bool(worst >= -1e-12),
                               f"smallest trace increase over {n}x{perturbations}x2 perturbations: {worst:.3g} (>= -1e-12)")

    def A9(self, n=50):
        r = rng_stream(SEED, 9)
        worst = 0.0
        for k in range(n):
            T = int(r.integers(40, 201))
            m_c, m_a, nc, na, n_y = (int(v) for v in r.integers(1, 4, 5))
            s_c = r.integers(0, m_c, T)
            s_a = r.integers(0, m_a, T)
            x_c, x_a = r.normal(size=(T, nc)), r.normal(size=(T, na))
            y = r.normal(size=(T, n_y))
            Pc = np.array([_rand_pd(r, nc) * 0.1 for _ in range(T)])
            Pa = np.array([_rand_pd(r, na) * 0.1 for _ in range(T)])
            st = FilterResult.from_states(x_c, x_a, y, r.normal(size=nc), r.normal(size=na))
            st = _with_covs(st, Pc, Pa)
            asg = ModeAssignment.from_sequences(s_c, s_a, m_c, m_a)
            for corr in ("none", "trace"):
                A_c, A_a, _ = update_A(asg, st, correction=corr)
                C_c, C_a, _ = update_C(asg, st, correction=corr)
                use = corr == "trace"
                reg_c = np.vstack([st.x_c0[None], x_c[:-1]])
                reg_a = np.vstack([x_a[1:], st.x_aT1[None]])
                PR_c = np.concatenate([np.zeros((1, nc, nc)), Pc[:-1]]) if use else None
                PR_a = np.concatenate([Pa[1:], np.zeros((1, na, na))]) if use else None
                for j in range(m_c):
                    if np.any(s_c == j):
                        ref = brute_force_transition(x_c, reg_c, s_c == j, PR_c)
                        worst = max(worst, np.abs(ref - A_c[j]).max())
                for l in range(m_a):
                    if np.any(s_a == l):
                        ref = brute_force_transition(x_a, reg_a, s_a == l, PR_a)
                        worst = max(worst, np.abs(ref - A_a[l]).max())
                rc, ra = brute_force_outputs(y, x_c, x_a, s_c, s_a, m_c, m_a,
                                             Pc if use else None, Pa if use else None)
                worst = max(worst, np.abs(rc - C_c).max(), np.abs(ra - C_a).max())
        return CriterionResult("A9", bool(worst <= 1e-10), f"largest deviation from row-by-row normal equations "
                                                           f"over {n} instances: {worst:.3g} (<= 1e-10)")

    def A10(self, T=300, seeds=5):
        worst_c = worst_a = 0.0
        for k in range(seeds):
            p = random_model(100 + k, max_dims=(2, 2, 2, 1, 1))
            traj = simulate_model(p, T, seed=k)
            s = traj.seq_true
            asg = ModeAssignment.from_sequences(s.s_c, s.s_a, 1, 1)
            f = filter_sweep(p, asg, traj.y, traj.x_c0, traj.x_aT1, inner_sweeps=2)
            xc, _, _ = joint_filter(p, s.s_c, s.s_a, traj.y, traj.x_c0, traj.x_aT1, +1, init_cov=10.0)
            _, xa, _ = joint_filter(p, s.s_c, s.s_a, traj.y, traj.x_c0, traj.x_aT1, -1, init_cov=10.0)
            worst_c = max(worst_c, np.abs(f.x_c_hat - xc).max())
            worst_a = max(worst_a, np.abs(f.x_a_hat - xa).max())
        ok = max(worst_c, worst_a) <= 1e-6
        diags = []
        if self.diagnostics:
            p = random_model(100, max_dims=(2, 2, 2, 1, 1))
            p = p.replace(A_a=np.zeros_like(p.A_a))
            traj = simulate_model(p, T, seed=0)
            s = traj.seq_true
            f = filter_sweep(p, ModeAssignment.from_sequences(s.s_c, s.s_a, 1, 1), traj.y, traj.x_c0, traj.x_aT1)
            xc, _, _ = joint_filter(p, s.s_c, s.s_a, traj.y, traj.x_c0, traj.x_aT1, +1, init_cov=10.0)
            diags.append(f"with A_a = 0 the causal estimates agree to {np.abs(f.x_c_hat - xc)[:-1].max():.2g} "
                         f"before the final sample (whose anticausal prior uses the initial covariance)")
        return CriterionResult("A10", ok, f"max deviation from the stacked-state filter: causal {worst_c:.3g}, "
                                          f"anticausal {worst_a:.3g} (<= 1e-6)",
                               details=[] if ok else ["the coupled sweeps treat the other subsystem's prior as "
                                                      "independent of the data; the stacked filter does not"],
                               diagnostics=diags)


def _rand_pd(r, n):
    W = r.normal(size=(n, n))
    return W @ W.T + 0.1 * np.eye(n)


def _with_covs(st: FilterResult, Pc, Pa) -> FilterResult:
    from dataclasses import replace

    return replace(st, P_c=Pc, P_a=Pa, P_c_prior=Pc, P_a_prior=Pa)


CRITERIA = ("A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9", "A10")
SUITES = {"acceptance": CRITERIA, "quick": ("A8", "A9", "A10"), **{c: (c,) for c in CRITERIA}}


def run_suite(names=CRITERIA, diagnostics=True, jobs=1, emit: Callable[[str], None] | None = None):
    suite = Suite(diagnostics=diagnostics, jobs=jobs)
    results = []
    for name in names:
        t0 = time.perf_counter()
        res = getattr(suite, name)()
        res.seconds = time.perf_counter() - t0
        results.append(res)
        if emit is not None:
            emit(res.line())
            for d in res.details:
                emit(f"    detail: {d}")
            for d in res.diagnostics:
                emit(f"    diagnostic: {d}")
    return results
