import numpy as np
import pytest
from scipy import integrate

from rmtequiv.canonical import ConvergenceError, SolverOptions
from rmtequiv.mimo import (
    OPT_CSV_HEADER,
    PrecoderCandidate,
    PrecoderProblem,
    mmse_capacity_equiv,
    mmse_capacity_mc,
    mmse_terms,
    optimize_precoder,
    project_budget,
    sample_channel,
    trace_norm,
)

from conftest import GOLDEN


def white_problem(N, n=None, a=1.0):
    n = N if n is None else n
    return PrecoderProblem(np.zeros((N, n)), np.eye(N), np.eye(n), a)


def haar_unitary(rng, N):
    Q, R = np.linalg.qr(rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N)))
    return Q * (np.diag(R) / np.abs(np.diag(R)))


# ---------------------------------------------------------------- problem

def test_problem_validation():
    with pytest.raises(ValueError):
        PrecoderProblem(np.zeros((2, 3)), np.eye(3), np.eye(3))
    with pytest.raises(ValueError):
        PrecoderProblem(np.zeros((2, 2)), np.diag([1.0, -0.1]), np.eye(2))
    with pytest.raises(ValueError):
        PrecoderProblem(np.zeros((2, 2)), np.array([[1, 1], [0, 1]]), np.eye(2))
    with pytest.raises(ValueError):
        PrecoderProblem(np.zeros((2, 2)), np.eye(2), np.eye(2), a=0)


def test_problem_json_roundtrip(tmp_path, rng):
    G = rng.standard_normal((3, 3))
    prob = PrecoderProblem(rng.standard_normal((3, 4)), G @ G.T, np.eye(4), 2.0)
    import json
    (tmp_path / "p.json").write_text(json.dumps(prob.to_dict()))
    back = PrecoderProblem.load(tmp_path / "p.json")
    assert np.array_equal(back.B, prob.B) and np.array_equal(back.R, prob.R) and back.a == 2.0


def test_candidate_and_projection(rng):
    K = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    assert PrecoderCandidate(K).trace_norm == pytest.approx(np.trace(K @ K.conj().T).real / 4)
    P = project_budget(K, 0.5)
    assert trace_norm(P) == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(P / np.linalg.norm(P), K / np.linalg.norm(K))
    small = 0.01 * K
    assert project_budget(small, 10.0) is small


def test_infeasible_precoder_rejected():
    with pytest.raises(ValueError):
        mmse_capacity_equiv(white_problem(2), 2 * np.eye(2))


# ---------------------------------------------------------------- channel

def test_channel_without_noise_is_los(rng):
    B = rng.standard_normal((3, 5)) + 0j
    prob = PrecoderProblem(B, np.zeros((3, 3)), np.zeros((5, 5)))
    assert np.array_equal(sample_channel(prob, 4), B)


def test_channel_second_moment_and_determinism():
    prob = white_problem(100)
    H = sample_channel(prob, 7)
    assert np.array_equal(H, sample_channel(prob, 7))
    assert np.mean(np.abs(H) ** 2) * 100 == pytest.approx(1.0, abs=0.03)


# ---------------------------------------------------------------- capacity

def test_zero_precoder():
    prob = white_problem(4)
    K = np.zeros((4, 4))
    assert mmse_capacity_mc(prob, K, replicates=3).value == 0
    assert mmse_capacity_equiv(prob, K) == 0


def test_mmse_terms_direct(rng):
    K = rng.standard_normal((3, 3)) * 0.3
    H = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    M = np.linalg.inv(np.eye(3) + K @ H @ H.conj().T @ K.T)
    assert np.allclose(mmse_terms(K, H), np.log(np.diag(M).real))


def test_scalar_channel_integral_oracle():
    # |h|^2 ~ Exp(1): E log(1/(1 + |h|^2)) by 1-D integration
    oracle = -integrate.quad(lambda t: np.log1p(t) * np.exp(-t), 0, np.inf)[0]
    est = mmse_capacity_mc(white_problem(1), np.eye(1), replicates=20000, seed=1)
    assert abs(est.value - oracle) < 4 * est.std_error
    assert oracle == pytest.approx(-0.5963473623, abs=1e-9)


def test_mc_standard_error_shrinks():
    prob = white_problem(3)
    a = mmse_capacity_mc(prob, np.eye(3), replicates=100, seed=2)
    b = mmse_capacity_mc(prob, np.eye(3), replicates=1600, seed=2)
    assert b.std_error / a.std_error == pytest.approx(0.25, rel=0.3)


def test_mc_worker_independent():
    prob = white_problem(4)
    assert mmse_capacity_mc(prob, np.eye(4), 30, 5, workers=1) == mmse_capacity_mc(prob, np.eye(4), 30, 5, workers=3)


def test_unitary_invariance(rng):
    prob = white_problem(4, 6)
    K = project_budget(rng.standard_normal((4, 4)) + 0j, 1.0)
    U = haar_unitary(rng, 4)
    a = mmse_capacity_mc(prob, K, replicates=2000, seed=3)
    b = mmse_capacity_mc(prob, K @ U, replicates=2000, seed=4)
    assert abs(a.value - b.value) < 4 * np.hypot(a.std_error, b.std_error)
    assert mmse_capacity_equiv(prob, K @ U) == pytest.approx(mmse_capacity_equiv(prob, K), abs=1e-10)


def test_equivalent_closed_form():
    val = mmse_capacity_equiv(white_problem(8), np.eye(8))
    assert abs(val + 8 * np.log(1 + GOLDEN)) < 1e-10


def test_equivalent_gap_shrinks():
    gaps = []
    for N in (20, 80):
        prob = white_problem(N)
        mc = mmse_capacity_mc(prob, np.eye(N), replicates=200, seed=0)
        gaps.append(abs(mc.value - mmse_capacity_equiv(prob, np.eye(N))) / N)
    assert gaps[1] < gaps[0]


def test_equivalent_continuous(rng):
    G = rng.standard_normal((3, 3))
    prob = PrecoderProblem(rng.standard_normal((3, 4)) * 0.5, G @ G.T / 3 + np.eye(3), np.eye(4))
    K = 0.5 * np.eye(3) + 0j
    E = (rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))) * 1e-6
    f0, f1 = mmse_capacity_equiv(prob, K), mmse_capacity_equiv(prob, K + E)
    assert np.isfinite(f0) and abs(f1 - f0) < 1e-4


# ---------------------------------------------------------------- optimizer

@pytest.fixture(scope="module")
def small_problem():
    return PrecoderProblem(np.zeros((2, 2)), np.diag([2.0, 1.0]), np.eye(2), 1.0)


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_optimizer_beats_baseline(small_problem, sign):
    res = optimize_precoder(small_problem, max_iter=20, sign=sign)
    base = sign * mmse_capacity_equiv(small_problem, np.eye(2))
    assert res.candidate.trace_norm <= small_problem.a + 1e-10
    assert res.objective >= base - 1e-12
    objs = [row[1] for row in res.trace]
    assert all(b >= a for a, b in zip(objs, objs[1:]))
    assert res.csv().splitlines()[0] == OPT_CSV_HEADER


def test_optimizer_small_budget():
    prob = PrecoderProblem(np.zeros((2, 2)), np.diag([2.0, 1.0]), np.eye(2), 1e-8)
    res = optimize_precoder(prob, max_iter=5)
    assert abs(res.objective) < 1e-6


def test_optimizer_restarts_deterministic(small_problem):
    a = optimize_precoder(small_problem, max_iter=5, restarts=2, seed=3, sign=-1.0)
    b = optimize_precoder(small_problem, max_iter=5, restarts=2, seed=3, sign=-1.0)
    assert np.array_equal(a.candidate.K, b.candidate.K) and a.trace == b.trace


def test_optimizer_surfaces_solver_failure(small_problem):
    with pytest.raises(ConvergenceError):
        optimize_precoder(small_problem, max_iter=2, opts=SolverOptions(max_iter=1))
