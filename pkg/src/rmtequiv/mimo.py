"""MMSE capacity of a bi-correlated Ricean MIMO channel: Monte Carlo value,
large-system approximation and a projected-gradient precoder search."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._parallel import map_replicates
from .canonical import ConvergenceError, PrecoderMap, SolverOptions, solve_precoder_system
from .model import child_seed, draw_entries, matrix_from_json, matrix_to_json, rng_from_seed

OPT_CSV_HEADER = "iter,objective,trace_norm,step"


def _psd_sqrt(M: np.ndarray, name: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(M)
    if vals.min(initial=0.0) < -1e-12 * max(1.0, np.abs(vals).max(initial=0.0)):
        raise ValueError(f"{name} is not positive semi-definite")
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.conj().T


@dataclass(frozen=True, eq=False)
class PrecoderProblem:
    B: np.ndarray
    R: np.ndarray
    R_tilde: np.ndarray
    a: float = 1.0

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=complex))
        R = np.atleast_2d(np.asarray(self.R, dtype=complex))
        Rt = np.atleast_2d(np.asarray(self.R_tilde, dtype=complex))
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "R_tilde", Rt)
        N, n = B.shape
        if R.shape != (N, N) or Rt.shape != (n, n):
            raise ValueError("R must be N x N and R_tilde n x n")
        if not self.a > 0:
            raise ValueError("trace budget a must be positive")
        for name, M in (("R", R), ("R_tilde", Rt)):
            if not np.allclose(M, M.conj().T, atol=1e-12):
                raise ValueError(f"{name} is not Hermitian")
        object.__setattr__(self, "_R_half", _psd_sqrt(R, "R"))
        object.__setattr__(self, "_Rt_half", _psd_sqrt(Rt, "R_tilde"))

    @property
    def N(self) -> int:
        return self.B.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[1]

    @classmethod
    def from_dict(cls, doc: dict) -> "PrecoderProblem":
        B = matrix_from_json(doc["B"])
        N, n = B.shape
        R = matrix_from_json(doc["R"], (N, N)) if "R" in doc else np.eye(N)
        Rt = matrix_from_json(doc["R_tilde"], (n, n)) if "R_tilde" in doc else np.eye(n)
        return cls(B, R, Rt, float(doc.get("a", 1.0)))

    def to_dict(self) -> dict:
        return {"B": matrix_to_json(self.B), "R": matrix_to_json(self.R),
                "R_tilde": matrix_to_json(self.R_tilde), "a": self.a}

    @classmethod
    def load(cls, path) -> "PrecoderProblem":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class PrecoderCandidate:
    K: np.ndarray
    trace_norm: float = field(init=False)

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=complex))
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "trace_norm", trace_norm(K))


def trace_norm(K) -> float:
    K = np.asarray(K)
    return float(np.sum(np.abs(K) ** 2) / K.shape[0])


def project_budget(K: np.ndarray, a: float) -> np.ndarray:
    """Radial projection onto {(1/N) Tr K K^* <= a}."""
    t = trace_norm(K)
    return K if t <= a else K * np.sqrt(a / t)


def _as_K(K, problem: PrecoderProblem) -> np.ndarray:
    K = K.K if isinstance(K, PrecoderCandidate) else np.atleast_2d(np.asarray(K, dtype=complex))
    if K.shape != (problem.N, problem.N):
        raise ValueError(f"K must be {problem.N} x {problem.N}")
    if trace_norm(K) > problem.a + 1e-10:
        raise ValueError("K violates the trace budget")
    return K


def sample_channel(problem: PrecoderProblem, seed: int) -> np.ndarray:
    """H = B + R^{1/2} V R_tilde^{1/2} / sqrt(n), V standard circular Gaussian."""
    V = draw_entries(rng_from_seed(seed), (problem.N, problem.n), "circular-complex-gaussian")
    return problem.B + problem._R_half @ V @ problem._Rt_half / np.sqrt(problem.n)


def mmse_terms(K: np.ndarray, H: np.ndarray) -> np.ndarray:
    """log [(I + K H H^* K^*)^{-1}]_{jj} for every j."""
    G = K @ H
    M = np.eye(K.shape[0]) + G @ G.conj().T
    Minv = sla.cho_solve(sla.cho_factor(M, check_finite=False), np.eye(K.shape[0]), check_finite=False)
    diag = np.diag(Minv).real
    if np.any(diag <= 0):
        raise FloatingPointError("non-positive diagonal entry of (I + K H H^* K^*)^{-1}")
    return np.log(diag)


@dataclass(frozen=True)
class CapacityEstimate:
    value: float
    std_error: float
    replicates: int


def mmse_capacity_mc(problem: PrecoderProblem, K, replicates: int = 100, seed: int = 0,
                     workers: int | None = None) -> CapacityEstimate:
    """Monte Carlo average of sum_j log[(I + K H H^* K^*)^{-1}]_{jj}."""
    K = _as_K(K, problem)

    def one(r):
        return float(np.sum(mmse_terms(K, sample_channel(problem, child_seed(seed, r)))))

    vals = np.array(map_replicates(one, replicates, workers))
    se = float(vals.std(ddof=1) / np.sqrt(replicates)) if replicates > 1 else float("nan")
    return CapacityEstimate(float(vals.mean()), se, replicates)


def _equiv_with_solution(problem: PrecoderProblem, K: np.ndarray, opts=None, init=None):
    sol = solve_precoder_system(problem.B, problem.R, problem.R_tilde, K, opts, init=init)
    pmap = PrecoderMap(problem.B, problem.R, problem.R_tilde, K)
    T = pmap.T(sol.delta, sol.delta_tilde)
    return float(np.sum(np.log(np.diag(T).real))), sol


def mmse_capacity_equiv(problem: PrecoderProblem, K, opts: SolverOptions | None = None) -> float:
    """sum_j log [T(K)]_{jj}, T(K) built from the solved (delta(K), delta_tilde(K))."""
    return _equiv_with_solution(problem, _as_K(K, problem), opts)[0]


@dataclass
class OptimizationResult:
    candidate: PrecoderCandidate
    objective: float
    trace: list  # (iter, objective, trace_norm, step) rows of the best restart
    restart: int

    def csv(self) -> str:
        lines = [OPT_CSV_HEADER]
        lines += [f"{i},{f:.17g},{t:.17g},{s:.17g}" for i, f, t, s in self.trace]
        return "\n".join(lines) + "\n"


def optimize_precoder(problem: PrecoderProblem, max_iter: int = 50, step: float = 0.5,
                      fd_step: float = 1e-6, restarts: int = 1, seed: int = 0,
                      sign: float = 1.0, opts: SolverOptions | None = None) -> OptimizationResult:
    """Projected gradient ascent of K -> sign * Ibar_mmse(K) under the trace budget.

    ``sign=+1`` maximizes the approximation as written (its supremum, 0, is
    reached at K = 0); ``sign=-1`` maximizes -Ibar_mmse, the usual
    engineering convention. Gradients are central finite differences over the
    real and imaginary parts of every entry of K. A step is accepted only if
    the objective does not decrease; otherwise it is halved.
    """
    N, a = problem.N, problem.a
    best: OptimizationResult | None = None
    rng = rng_from_seed(seed)

    def objective(K, init):
        val, sol = _equiv_with_solution(problem, K, opts, init)
        return sign * val, (sol.delta, sol.delta_tilde)

    for rs in range(restarts):
        if rs == 0:
            K = np.sqrt(a) * np.eye(N, dtype=complex)
        else:
            K = project_budget(draw_entries(rng, (N, N), "circular-complex-gaussian") * np.sqrt(a), a)
            K = K * np.sqrt(a / trace_norm(K))
        f, warm = objective(K, None)
        eta = step
        rows = [(0, f, trace_norm(K), eta)]
        for it in range(1, max_iter + 1):
            grad = np.zeros((N, N), dtype=complex)
            for i in range(N):
                for j in range(N):
                    for unit in (1.0, 1j):
                        E = np.zeros((N, N), dtype=complex)
                        E[i, j] = fd_step * unit
                        fp, _ = objective(K + E, warm)
                        fm, _ = objective(K - E, warm)
                        grad[i, j] += unit * (fp - fm) / (2 * fd_step)
            if not np.all(np.isfinite(grad)) or np.linalg.norm(grad) < 1e-12:
                break
            failures, tries, last_exc = 0, 0, None
            while eta > 1e-12:
                K_new = project_budget(K + eta * grad, a)
                tries += 1
                try:
                    f_new, warm_new = objective(K_new, warm)
                except (ConvergenceError, np.linalg.LinAlgError) as exc:
                    failures, last_exc = failures + 1, exc
                    eta *= 0.5
                    continue
                if f_new >= f:
                    break
                eta *= 0.5
            else:
                if tries and failures == tries:
                    raise RuntimeError(f"objective evaluation failed at every step size "
                                       f"(iteration {it}, restart {rs})") from last_exc
                break
            if f_new - f <= 1e-14 * max(1.0, abs(f)):
                K, f, warm = K_new, f_new, warm_new
                rows.append((it, f, trace_norm(K), eta))
                break
            K, f, warm = K_new, f_new, warm_new
            rows.append((it, f, trace_norm(K), eta))
            eta = min(2 * eta, step)
        res = OptimizationResult(PrecoderCandidate(K), f, rows, rs)
        if best is None or res.objective > best.objective:
            best = res
    return best
