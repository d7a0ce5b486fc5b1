import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmtequiv.model import (
    EvaluationPoint,
    ModelSpec,
    ModelSpecError,
    SpectralResolvent,
    bilinear_form,
    check_rank_one_identities,
    child_seed,
    co_resolvent,
    matrix_from_json,
    matrix_to_json,
    parse_complex,
    resolvent,
    resolvent_solve,
    sample_from_matrix,
    sample_sigma,
)

from conftest import random_spec


# ---------------------------------------------------------------- ModelSpec

def test_zero_profile_rejected():
    with pytest.raises(ModelSpecError) as err:
        ModelSpec(3, 3, np.zeros(3), np.ones(3), np.zeros((3, 3)))
    assert err.value.field == "d"


@pytest.mark.parametrize("field,kwargs", [
    ("d", dict(d=[1.0, -1.0, 1.0])),
    ("d_tilde", dict(d_tilde=[1.0, np.nan])),
    ("A", dict(A=np.zeros((2, 2)))),
    ("entry_law", dict(entry_law="cauchy")),
])
def test_invalid_fields_named(field, kwargs):
    base = dict(N=3, n=2, d=np.ones(3), d_tilde=np.ones(2), A=np.zeros((3, 2)))
    base.update(kwargs)
    with pytest.raises(ModelSpecError) as err:
        ModelSpec(**base)
    assert err.value.field == field


def test_json_roundtrip_exact(rng, tmp_path):
    spec = random_spec(rng, 5, 7, rank=2)
    spec.dump(tmp_path / "s.json")
    back = ModelSpec.load(tmp_path / "s.json")
    assert np.array_equal(back.d, spec.d)
    assert np.array_equal(back.d_tilde, spec.d_tilde)
    assert np.array_equal(back.A, spec.A)


def test_from_dict_defaults_and_compact_matrices():
    spec = ModelSpec.from_dict({"N": 3, "n": 3, "d": 2.0, "d_tilde": [1, 1, 1],
                                "A": {"kind": "diag", "values": [1, 0, 0]}})
    assert np.allclose(spec.d, 2.0)
    assert spec.A[0, 0] == 1 and np.count_nonzero(spec.A) == 1
    assert ModelSpec.from_dict({"N": 2, "n": 3, "d": 1, "d_tilde": 1}).is_centered


def test_matrix_json_roundtrip(rng):
    M = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    doc = json.loads(json.dumps(matrix_to_json(M)))
    assert np.array_equal(matrix_from_json(doc, (3, 4)), M)
    with pytest.raises(ValueError):
        matrix_from_json(doc, (4, 3))


def test_rescaled_keeps_ratio_and_profile():
    spec = ModelSpec(4, 8, [1, 1, 2, 2], np.ones(8), np.zeros((4, 8)))
    big = spec.rescaled(16)
    assert (big.N, big.n) == (8, 16)
    assert np.allclose(big.d, [1, 1, 1, 1, 2, 2, 2, 2])


@pytest.mark.parametrize("text,value", [("-1+0i", -1 + 0j), ("i", 1j), ("-2-0.5i", -2 - 0.5j),
                                        ("0.3", 0.3 + 0j), ("1j", 1j)])
def test_parse_complex(text, value):
    assert parse_complex(text) == value


def test_evaluation_point_domain():
    with pytest.raises(ValueError):
        EvaluationPoint(2.0)
    with pytest.raises(ValueError):
        EvaluationPoint(0.0)
    assert EvaluationPoint(-3 + 4j).dist_to_R_plus == pytest.approx(5.0)
    assert EvaluationPoint(2 + 0.5j).dist_to_R_plus == pytest.approx(0.5)


# ---------------------------------------------------------------- sampling

def test_sampling_deterministic(rng):
    spec = random_spec(rng, 6, 9, rank=0)
    s1, s2 = sample_sigma(spec, 17), sample_sigma(spec, 17)
    assert np.array_equal(s1.sigma, s2.sigma)
    assert not np.array_equal(s1.sigma, sample_sigma(spec, 18).sigma)


def test_child_seeds_distinct_and_stable():
    seeds = [child_seed(5, r) for r in range(200)]
    assert len(set(seeds)) == 200
    assert seeds == [child_seed(5, r) for r in range(200)]


@pytest.mark.parametrize("law", ["circular-complex-gaussian", "complex-rademacher", "uniform-phase"])
def test_entry_variance(law):
    spec = ModelSpec.marchenko_pastur(200, entry_law=law)
    X = sample_sigma(spec, 3).sigma * np.sqrt(200)
    assert 0.98 <= np.mean(np.abs(X) ** 2) <= 1.02
    assert abs(np.mean(X)) < 0.02


# ---------------------------------------------------------------- resolvents

def test_zero_sigma_resolvent_is_identity():
    sample = sample_from_matrix(np.zeros((3, 5)))
    assert np.allclose(resolvent(sample, -1), np.eye(3), atol=0)
    assert np.allclose(co_resolvent(sample, -1), np.eye(5), atol=0)


def test_resolvent_norm_bound(rng):
    sample = sample_sigma(random_spec(rng, 10, 7, rank=2), 1)
    assert np.linalg.norm(resolvent(sample, 1j), 2) <= 1.0 + 1e-12


def test_resolvent_matches_eigendecomposition(rng):
    sample = sample_sigma(random_spec(rng, 8, 8, rank=3), 2)
    G = sample.gram()
    lam, U = np.linalg.eigh(G)
    oracle = (U / (lam + 2.0)) @ U.conj().T
    assert np.abs(resolvent(sample, -2) - oracle).max() < 1e-12
    sr = SpectralResolvent(sample)
    assert np.abs(sr.matrix(-2) - oracle).max() < 1e-12
    v = rng.standard_normal(8) + 0j
    assert np.allclose(resolvent_solve(sample, -2, v), oracle @ v, atol=1e-12)


def test_trace_identity_sign(rng):
    # spectra of the two Gram matrices differ by |n - N| zeros, each giving -1/z
    for N, n in ((5, 9), (9, 5)):
        sample = sample_sigma(random_spec(rng, N, n, rank=1), 4)
        z = -0.7 + 0.3j
        diff = np.trace(resolvent(sample, z)) - np.trace(co_resolvent(sample, z))
        assert abs(diff - (N - n) * (-1 / z)) < 1e-10


def test_spectral_traces(rng):
    sample = sample_sigma(random_spec(rng, 6, 9, rank=2), 0)
    sr = SpectralResolvent(sample)
    z = 0.4 + 0.2j
    Q, Qt = resolvent(sample, z), co_resolvent(sample, z)
    assert abs(sr.trace(z) - np.trace(Q)) < 1e-11
    assert abs(sr.trace(z, 2) - np.trace(Q @ Q)) < 1e-10
    assert abs(sr.co_trace(z) - np.trace(Qt)) < 1e-11
    assert abs(sr.co_trace(z, 2) - np.trace(Qt @ Qt)) < 1e-10


def test_co_resolvent_diagonal_formula(rng):
    sample = sample_sigma(random_spec(rng, 8, 6, rank=2), 5)
    z = 1j
    Qt = co_resolvent(sample, z)
    for j in range(6):
        eta = sample.sigma[:, j]
        S = np.delete(sample.sigma, j, axis=1)
        Qj = np.linalg.inv(S @ S.conj().T - z * np.eye(8))
        assert abs(Qt[j, j] + 1 / (z * (1 + np.vdot(eta, Qj @ eta)))) < 1e-10


# ---------------------------------------------------------------- bilinear form

def test_bilinear_trivial():
    I = np.eye(3)
    e1, e2 = I[0], I[1]
    assert bilinear_form(e1, I, e1) == 1
    assert bilinear_form(e1, I, e2) == 0
    with pytest.raises(ValueError):
        bilinear_form(e1, np.eye(4), e1)


def test_bilinear_naive_loop(rng):
    n = 7
    u, v = (rng.standard_normal(n) + 1j * rng.standard_normal(n) for _ in range(2))
    M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    naive = sum(np.conj(u[i]) * M[i, j] * v[j] for i in range(n) for j in range(n))
    assert abs(bilinear_form(u, M, v) - naive) < 1e-13


# ---------------------------------------------------------------- rank-one identities

def test_identities_twenty_seeds():
    spec = ModelSpec(6, 4, np.linspace(0.5, 1.5, 6), np.linspace(0.8, 1.2, 4),
                     np.full((6, 4), 0.3 + 0.1j))
    for seed in range(20):
        sample = sample_sigma(spec, seed)
        for j in range(4):
            rep = check_rank_one_identities(sample, -1 + 0.5j, j)
            assert rep.max_residual < 1e-9, rep.residuals
            assert rep.st_bound_ok


def test_zero_column_leaves_resolvent_unchanged(rng):
    sigma = rng.standard_normal((5, 4)) + 0j
    sigma[:, 2] = 0
    sample = sample_from_matrix(sigma)
    S = np.delete(sigma, 2, axis=1)
    Qj = np.linalg.inv(S @ S.conj().T + np.eye(5))
    assert np.array_equal(resolvent(sample, -1), resolvent(sample_from_matrix(sigma.copy()), -1))
    assert np.allclose(resolvent(sample, -1), Qj, atol=1e-15)
    assert check_rank_one_identities(sample, -1, 2).max_residual == pytest.approx(0, abs=1e-15)


def test_identity_index_checked(rng):
    sample = sample_sigma(random_spec(rng, 3, 2), 0)
    with pytest.raises(IndexError):
        check_rank_one_identities(sample, -1, 2)


@settings(max_examples=25, deadline=None)
@given(N=st.integers(1, 9), n=st.integers(1, 9), seed=st.integers(0, 2**31),
       re=st.floats(-3, 3), im=st.floats(-2, 2))
def test_identities_property(N, n, seed, re, im):
    z = complex(re, im)
    if z.imag == 0 and z.real >= 0 or abs(z) < 1e-2 or (z.real > 0 and abs(z.imag) < 1e-2):
        return
    spec = random_spec(np.random.default_rng(seed), N, n)
    sample = sample_sigma(spec, seed)
    for j in range(n):
        rep = check_rank_one_identities(sample, z, j)
        assert rep.max_residual <= 1e-10 * rep.scale
