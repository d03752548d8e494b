import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal, norm

from ncrsm.acceptance import random_model, stabilized_example1
from ncrsm.estep import (
    FilterResult,
    ModeAssignment,
    assign_modes,
    e_step,
    evaluate_Q,
    filter_sweep,
    kalman_gains,
    mode_loglik_table,
    observed_loglik,
    posterior_cov_general,
)
from ncrsm.model import ModelParams
from ncrsm.oracles import joint_filter
from ncrsm.simulate import simulate_model


def scalar_model(a_c=0.8, a_a=0.5, c_c=1.0, c_a=1.0, s_c=1.0, s_a=1.0, s_m=1.0):
    return ModelParams(A_c=[[[a_c]]], A_a=[[[a_a]]], C_c=[[[c_c]]], C_a=[[[c_a]]],
                       Sigma_c=[[[s_c]]], Sigma_a=[[[s_a]]], Sigma_m=[[s_m]], pi_c=[1.0], pi_a=[1.0])


def _rand_pd(r, n):
    W = r.normal(size=(n, n))
    return W @ W.T + 0.1 * np.eye(n)


# -- gains -------------------------------------------------------------------

def test_gains_hand_example():
    K_c, K_a, S = kalman_gains([[1.0, 0.0]], [[0.0, 0.0]], np.eye(2), np.eye(2), [[1.0]])
    np.testing.assert_allclose(S, [[2.0]])
    np.testing.assert_allclose(K_c.ravel(), [0.5, 0.0])
    np.testing.assert_allclose(K_a.ravel(), [0.0, 0.0])


def test_unobservable_causal_state_has_zero_gain():
    r = np.random.default_rng(0)
    K_c, _, _ = kalman_gains(np.zeros((2, 3)), r.normal(size=(2, 2)), _rand_pd(r, 3), _rand_pd(r, 2), _rand_pd(r, 2))
    assert np.all(K_c == 0)


def test_huge_measurement_noise_ignores_output():
    K_c, _, _ = kalman_gains([[1.0, 0.5]], [[0.3, 0.2]], np.eye(2), np.eye(2), [[1e12]])
    assert np.all(np.abs(K_c) <= 1e-11)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gain_minimizes_posterior_trace(seed):
    r = np.random.default_rng(seed)
    n_y, n_c, n_a = (int(v) for v in r.integers(1, 4, size=3))
    C_c, C_a = r.normal(size=(n_y, n_c)), r.normal(size=(n_y, n_a))
    P_c, P_a, Sm = _rand_pd(r, n_c), _rand_pd(r, n_a), _rand_pd(r, n_y)
    K_c, _, _ = kalman_gains(C_c, C_a, P_c, P_a, Sm)
    best = np.trace(posterior_cov_general(K_c, C_c, C_a, P_c, P_a, Sm))
    dK = r.normal(size=K_c.shape)
    dK *= 1e-3 / np.linalg.norm(dK)
    worse = np.trace(posterior_cov_general(K_c + dK, C_c, C_a, P_c, P_a, Sm))
    assert worse >= best - 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_short_form_covariance_equals_full_expansion(seed):
    r = np.random.default_rng(seed)
    n_y, n_c, n_a = (int(v) for v in r.integers(1, 4, size=3))
    C_c, C_a = r.normal(size=(n_y, n_c)), r.normal(size=(n_y, n_a))
    P_c, P_a, Sm = _rand_pd(r, n_c), _rand_pd(r, n_a), _rand_pd(r, n_y)
    K_c, K_a, _ = kalman_gains(C_c, C_a, P_c, P_a, Sm)
    for K, C, Co, P, Po in ((K_c, C_c, C_a, P_c, P_a), (K_a, C_a, C_c, P_a, P_c)):
        short = (np.eye(P.shape[0]) - K @ C) @ P
        full = posterior_cov_general(K, C, Co, P, Po, Sm)
        np.testing.assert_allclose(short, full, atol=1e-10 * max(1.0, np.abs(full).max()))


# -- mode tables ---------------------------------------------------------------

def test_single_mode_table():
    tab = mode_loglik_table(scalar_model(), [0.3], [0.1], [0.2], [[1.0]])
    assert tab.shape == (1, 1)
    a = assign_modes(tab[None])
    assert (a.s_c_hat[0], a.s_a_hat[0]) == (0, 0)


def test_identical_modes_tie_to_lowest():
    p = stabilized_example1()
    p = p.replace(C_c=np.array([p.C_c[0], p.C_c[0]]), pi_c=np.array([0.5, 0.5]))
    tab = mode_loglik_table(p, [0.4], [0.1, -0.2], [0.3, 0.0], [[1.5]])
    np.testing.assert_array_equal(tab[0], tab[1])
    assert assign_modes(tab[None]).s_c_hat[0] == 0


def test_scalar_gap_hand_value():
    # two causal modes predicting 0.9 and 0.1 for y=1, unit S, equal priors
    p = ModelParams(A_c=[[[1.0]], [[1.0]]], A_a=[[[1.0]]], C_c=[[[0.9]], [[0.1]]], C_a=[[[0.0]]],
                    Sigma_c=[[[1.0]], [[1.0]]], Sigma_a=[[[1.0]]], Sigma_m=[[1.0]],
                    pi_c=[0.5, 0.5], pi_a=[1.0])
    tab = mode_loglik_table(p, [1.0], [1.0], [0.0], [[1.0]])
    assert tab[0, 0] - tab[1, 0] == pytest.approx(0.4, abs=1e-14)
    oracle = norm.logpdf(1.0, 0.9) - norm.logpdf(1.0, 0.1)
    assert tab[0, 0] - tab[1, 0] == pytest.approx(oracle, abs=1e-14)
    assert assign_modes(tab[None]).s_c_hat[0] == 0


def test_all_equal_table():
    a = assign_modes(np.zeros((5, 3, 2)))
    assert np.all(a.s_c_hat == 0) and np.all(a.s_a_hat == 0)


def test_zero_prior_mode_never_chosen():
    r = np.random.default_rng(1)
    tab = r.normal(size=(200, 2, 2))
    tab[:, 0, :] = -np.inf
    assert np.all(assign_modes(tab).s_c_hat == 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-1e6, 1e6, allow_nan=False))
def test_assignment_shift_invariance(seed, shift):
    r = np.random.default_rng(seed)
    tab = r.normal(size=(20, 3, 2))
    a = assign_modes(tab)
    b = assign_modes(tab + shift)
    np.testing.assert_array_equal(a.s_c_hat, b.s_c_hat)
    np.testing.assert_array_equal(a.s_a_hat, b.s_a_hat)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_one_hot_weights(seed):
    r = np.random.default_rng(seed)
    a = assign_modes(r.normal(size=(30, 3, 4)))
    for w, s in ((a.w_c, a.s_c_hat), (a.w_a, a.s_a_hat)):
        np.testing.assert_array_equal(w.sum(axis=1), 1.0)
        np.testing.assert_array_equal((w != 0).sum(axis=1), 1)
        np.testing.assert_array_equal(np.argmax(w, axis=1), s)


# -- filter ----------------------------------------------------------------------

def test_noiseless_filter_recovers_states():
    p = stabilized_example1(sigma=0.0, sigma_m=0.0)
    tr = simulate_model(p, 200, seed=2, x_c0=[1.0, -1.0], x_aT1=[0.5, 2.0])
    a = ModeAssignment.from_sequences(tr.seq_true.s_c, tr.seq_true.s_a, 2, 2)
    truth = FilterResult.from_states(tr.x_c_true, tr.x_a_true, tr.y, tr.x_c0, tr.x_aT1)
    f = filter_sweep(p, a, tr.y, tr.x_c0, tr.x_aT1, prev_other_state=truth)
    np.testing.assert_allclose(f.x_c_hat, tr.x_c_true, atol=1e-8)
    np.testing.assert_allclose(f.x_a_hat, tr.x_a_true, atol=1e-8)


def test_example1_state_errors():
    from ncrsm.acceptance import Suite

    res = Suite(diagnostics=False).A3()
    assert res.passed, res.line()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_covariances_symmetric_psd_and_contracting(seed):
    p = random_model(seed)
    tr = simulate_model(p, 80, seed=seed)
    _, f = e_step(p, tr.y, tr.x_c0, tr.x_aT1)
    for P, Pp in ((f.P_c, f.P_c_prior), (f.P_a, f.P_a_prior)):
        np.testing.assert_allclose(P, np.swapaxes(P, 1, 2), atol=1e-10)
        assert np.linalg.eigvalsh(P).min() >= -1e-10
        assert np.linalg.eigvalsh(Pp - P).min() >= -1e-10 * max(1.0, np.abs(Pp).max())


def _joint_oracle_case(seed, a_a=None):
    r = np.random.default_rng(seed)
    p = scalar_model(a_c=r.uniform(0.3, 0.9), a_a=r.uniform(0.3, 0.9) if a_a is None else a_a,
                     c_c=r.uniform(0.5, 1.5), c_a=r.uniform(0.5, 1.5),
                     s_c=r.uniform(0.5, 1.5), s_a=r.uniform(0.5, 1.5), s_m=r.uniform(0.5, 1.5))
    tr = simulate_model(p, 300, seed=seed)
    a = ModeAssignment.from_sequences(tr.seq_true.s_c, tr.seq_true.s_a, 1, 1)
    f = filter_sweep(p, a, tr.y, tr.x_c0, tr.x_aT1, inner_sweeps=2)
    return p, tr, f


def test_single_mode_filter_matches_joint_state_kf():
    worst = 0.0
    for seed in range(5):
        p, tr, f = _joint_oracle_case(seed)
        s = tr.seq_true
        xc, _, _ = joint_filter(p, s.s_c, s.s_a, tr.y, tr.x_c0, tr.x_aT1, direction=+1, init_cov=10.0)
        _, xa, _ = joint_filter(p, s.s_c, s.s_a, tr.y, tr.x_c0, tr.x_aT1, direction=-1, init_cov=10.0)
        dev = max(np.abs(f.x_c_hat - xc).max(), np.abs(f.x_a_hat - xa).max())
        worst = max(worst, dev / max(np.abs(xc).max(), np.abs(xa).max()))
    assert worst <= 1e-8


def test_joint_oracle_agrees_when_anticausal_dynamics_vanish():
    # with A_a = 0 the anticausal prior carries no information across time,
    # so the coupled update reduces to the stacked filter away from the end point
    for seed in range(5):
        p, tr, f = _joint_oracle_case(seed, a_a=0.0)
        s = tr.seq_true
        xc, _, _ = joint_filter(p, s.s_c, s.s_a, tr.y, tr.x_c0, tr.x_aT1, direction=+1, init_cov=10.0)
        np.testing.assert_allclose(f.x_c_hat[:-1], xc[:-1], atol=1e-12)


def test_sweeps_deterministic():
    p = stabilized_example1()
    tr = simulate_model(p, 200, seed=4)
    a1, f1 = e_step(p, tr.y, tr.x_c0, tr.x_aT1)
    a2, f2 = e_step(p, tr.y, tr.x_c0, tr.x_aT1)
    np.testing.assert_array_equal(a1.s_c_hat, a2.s_c_hat)
    assert f1.x_c_hat.tobytes() == f2.x_c_hat.tobytes()


# -- Q and log-likelihood -----------------------------------------------------------

def test_Q_with_zero_residuals_is_normalizers():
    p = scalar_model(a_c=0.5, a_a=0.5, s_c=2.0, s_a=3.0, s_m=0.5)
    T = 6
    x = np.zeros((T, 1))
    f = FilterResult.from_states(x, x, np.zeros((T, 1)), [0.0], [0.0])
    a = ModeAssignment.from_sequences(np.zeros(T), np.zeros(T), 1, 1)
    q = evaluate_Q(p, a, f, trace_correction=False)
    const = lambda v: -0.5 * np.log(2 * np.pi * v)
    assert q.q1 == pytest.approx(T * const(0.5), abs=1e-12)
    assert q.q2 == pytest.approx(T * const(2.0), abs=1e-12)
    assert q.q3 == pytest.approx(T * const(3.0), abs=1e-12)


def test_Q_two_points_by_hand():
    p = ModelParams(A_c=[[[0.7]], [[0.2]]], A_a=[[[0.4]]], C_c=[[[1.0]], [[0.5]]], C_a=[[[2.0]]],
                    Sigma_c=[[[1.5]], [[0.7]]], Sigma_a=[[[0.9]]], Sigma_m=[[0.6]],
                    pi_c=[0.3, 0.7], pi_a=[1.0])
    xc, xa, y = np.array([[0.4], [-1.2]]), np.array([[0.3], [0.8]]), np.array([[1.1], [0.2]])
    x_c0, x_aT1 = np.array([0.5]), np.array([-0.25])
    a = ModeAssignment.from_sequences([0, 1], [0, 0], 2, 1)
    f = FilterResult.from_states(xc, xa, y, x_c0, x_aT1)
    q = evaluate_Q(p, a, f, trace_correction=False)
    q1 = norm.logpdf(1.1, 1.0 * 0.4 + 2.0 * 0.3, np.sqrt(0.6)) + norm.logpdf(0.2, 0.5 * -1.2 + 2.0 * 0.8, np.sqrt(0.6))
    q2 = (norm.logpdf(0.4, 0.7 * 0.5, np.sqrt(1.5)) + np.log(0.3)
          + norm.logpdf(-1.2, 0.2 * 0.4, np.sqrt(0.7)) + np.log(0.7))
    q3 = norm.logpdf(0.8, 0.4 * -0.25, np.sqrt(0.9)) + norm.logpdf(0.3, 0.4 * 0.8, np.sqrt(0.9))
    assert q.q1 == pytest.approx(q1, abs=1e-12)
    assert q.q2 == pytest.approx(q2, abs=1e-12)
    assert q.q3 == pytest.approx(q3, abs=1e-12)
    assert q.q_total == pytest.approx(q1 + q2 + q3, rel=1e-9)


def test_Q_rises_after_m_step():
    from ncrsm.mstep import m_step

    p = stabilized_example1()
    tr = simulate_model(p, 1000, seed=5)
    a, f = e_step(p, tr.y, tr.x_c0, tr.x_aT1)
    new, _ = m_step(a, f, p)
    assert evaluate_Q(new, a, f).q_total >= evaluate_Q(p, a, f).q_total


def test_loglik_zero_innovations():
    T = 7
    p = scalar_model(s_m=1.0)
    z = np.zeros((T, 1))
    f = FilterResult.from_states(z, z, z, [0.0], [0.0])
    a = ModeAssignment.from_sequences(np.zeros(T), np.zeros(T), 1, 1)
    assert observed_loglik(p, a, f) == pytest.approx(-T / 2 * np.log(2 * np.pi), abs=1e-12)


def test_loglik_reacts_to_sigma_m():
    p = stabilized_example1()
    tr = simulate_model(p, 200, seed=6)
    a, f = e_step(p, tr.y, tr.x_c0, tr.x_aT1)
    l1 = observed_loglik(p, a, f)
    l2 = observed_loglik(p.replace(Sigma_m=2 * p.Sigma_m), a, f)
    assert l1 != l2


def test_loglik_two_points_by_hand():
    rng = np.random.default_rng(3)
    p = ModelParams(A_c=[np.eye(2)], A_a=[np.eye(1)], C_c=[rng.normal(size=(2, 2))], C_a=[rng.normal(size=(2, 1))],
                    Sigma_c=[np.eye(2)], Sigma_a=[np.eye(1)], Sigma_m=_rand_pd(rng, 2), pi_c=[1.0], pi_a=[1.0])
    y = rng.normal(size=(2, 2))
    xc_pr, xa_pr = rng.normal(size=(2, 2)), rng.normal(size=(2, 1))
    Pc_pr = np.array([_rand_pd(rng, 2) for _ in range(2)])
    Pa_pr = np.array([_rand_pd(rng, 1) for _ in range(2)])
    base = FilterResult.from_states(xc_pr, xa_pr, y, np.zeros(2), np.zeros(1))
    from dataclasses import replace

    f = replace(base, P_c_prior=Pc_pr, P_a_prior=Pa_pr)
    a = ModeAssignment.from_sequences([0, 0], [0, 0], 1, 1)
    Cc, Ca = p.C_c[0], p.C_a[0]
    hand = sum(
        multivariate_normal.logpdf(y[t], Cc @ xc_pr[t] + Ca @ xa_pr[t],
                                   Cc @ Pc_pr[t] @ Cc.T + Ca @ Pa_pr[t] @ Ca.T + p.Sigma_m)
        for t in range(2)
    )
    assert observed_loglik(p, a, f) == pytest.approx(hand, abs=1e-12)
