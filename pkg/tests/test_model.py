import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncrsm.model import (
    Dims,
    ModelParams,
    SwitchingSequence,
    example1_params,
    spectral_radius,
    spectral_stability_hint,
    validate,
)


def test_example1_valid_for_dims():
    assert validate(example1_params(), Dims(1, 2, 2, 2, 2)).ok


def test_probability_sum_violation():
    p = example1_params().replace(pi_c=np.array([0.6, 0.6]))
    rep = validate(p)
    assert not rep.ok
    assert any("pi_c" in s and "sum" in s for s in rep.problems)


def test_sigma_m_not_pd():
    # eigenvalues 0.9 and -0.1 would need n_y=2; with n_y=1 the matrix is just [-0.1]
    p = example1_params().replace(Sigma_m=np.array([[-0.1]]))
    rep = validate(p)
    assert not rep.ok
    assert any("Sigma_m" in s and "positive definite" in s for s in rep.problems)


def test_report_names_matrix_index():
    p = example1_params()
    Sc = p.Sigma_c.copy()
    Sc[1] = np.diag([1.0, -1.0])
    rep = validate(p.replace(Sigma_c=Sc))
    assert any(s.startswith("Sigma_c[2]") for s in rep.problems)


def test_shape_mismatch_reported():
    rep = validate(example1_params(), Dims(1, 3, 2, 2, 2))
    assert any("A_c" in s and "shape" in s for s in rep.problems)


def test_zero_covariance_only_with_psd_flag():
    p = example1_params(sigma=0.0)
    assert not validate(p).ok
    assert validate(p, allow_psd=True).ok


def test_dims_rejects_zero():
    with pytest.raises(ValueError):
        Dims(1, 0, 1, 1, 1)


def test_dims_parse():
    assert Dims.parse("1,2,2,2,2") == Dims(1, 2, 2, 2, 2)


def test_identity_block_flagged():
    h = spectral_stability_hint(example1_params())
    assert h.radii_a[0] == pytest.approx(1.0, abs=1e-15)
    assert h.flagged


def test_half_identity_not_flagged():
    p = ModelParams(A_c=[0.5 * np.eye(2)], A_a=[0.5 * np.eye(2)], C_c=[[[1.0, 0.0]]], C_a=[[[0.0, 1.0]]],
                    Sigma_c=[np.eye(2)], Sigma_a=[np.eye(2)], Sigma_m=[[1.0]], pi_c=[1.0], pi_a=[1.0])
    h = spectral_stability_hint(p)
    np.testing.assert_allclose(h.radii_c, [0.5])
    assert not h.flagged


def test_radius_matches_characteristic_polynomial():
    A = np.array([[1.0, 0.2], [0.3, 0.8]])
    tr, det = np.trace(A), A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    roots = (tr + np.array([1, -1]) * np.sqrt(tr**2 - 4 * det)) / 2
    oracle = np.max(np.abs(roots))
    assert oracle == pytest.approx(1.1645751311064592, abs=1e-15)  # frozen
    assert spectral_radius(A) == pytest.approx(oracle, rel=1e-13)
    assert spectral_stability_hint(example1_params()).radii_c[0] == pytest.approx(oracle, rel=1e-13)


def test_sequence_range_check():
    seq = SwitchingSequence([0, 1, 2], [0, 0, 0])
    with pytest.raises(ValueError):
        seq.check(Dims(1, 1, 1, 2, 1))


def test_params_frozen():
    p = example1_params()
    with pytest.raises(ValueError):
        p.A_c[0, 0, 0] = 5.0


@settings(max_examples=30, deadline=None)
@given(st.permutations([0, 1]), st.permutations([0, 1]))
def test_permuted_twice_is_identity(pc, pa):
    p = example1_params()
    q = p.permuted(pc, pa)
    inv_c, inv_a = np.argsort(pc), np.argsort(pa)
    assert q.permuted(inv_c, inv_a).allclose(p)
