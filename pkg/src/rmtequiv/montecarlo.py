"""Seeded Monte Carlo checks of the bilinear-form concentration bound,
first-order trace convergence and the quadratic-form lemmas."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._parallel import map_replicates
from .canonical import SolverOptions, solve_canonical
from .equivalents import build_T
from .model import (
    ModelSpec,
    as_point,
    child_seed,
    co_resolvent,
    draw_entries,
    resolvent,
    resolvent_solve,
    rng_from_seed,
    sample_sigma,
)

MOMENT_CSV_HEADER = "n,p,z_re,z_im,mean_moment,std_error,replicates,seed"


def unit_vector(kind: str, N: int) -> np.ndarray:
    """``"e1"`` (localized) or ``"flat"`` (entries 1/sqrt(N))."""
    if kind == "e1":
        u = np.zeros(N, dtype=complex)
        u[0] = 1.0
        return u
    if kind == "flat":
        return np.full(N, 1.0 / np.sqrt(N), dtype=complex)
    raise ValueError(f"unknown vector kind {kind!r}")


def _normalized(u, N: int) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (N,):
        raise ValueError(f"vector must have length {N}")
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValueError("zero vector")
    return u / norm


@dataclass(frozen=True)
class MomentEstimate:
    n: int
    p: int
    z: complex
    mean_moment: float
    std_error: float
    replicates: int
    seed: int

    def csv_row(self) -> str:
        return (f"{self.n},{self.p},{self.z.real:.17g},{self.z.imag:.17g},"
                f"{self.mean_moment:.17g},{self.std_error:.17g},{self.replicates},{self.seed}")


def estimate_bilinear_moments(spec: ModelSpec, pt, u=None, v=None, p: int = 1,
                              replicates: int = 100, master_seed: int = 0,
                              workers: int | None = None,
                              opts: SolverOptions | None = None) -> MomentEstimate:
    """Sample mean and standard error of |u^*(Q(z) - T(z))v|^{2p}.

    ``u`` defaults to e1 and ``v`` to ``u``; both are normalized.
    """
    pt = as_point(pt)
    spec.validate()
    if p < 1:
        raise ValueError("p must be >= 1")
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    u = unit_vector("e1", spec.N) if u is None else _normalized(u, spec.N)
    v = u if v is None else _normalized(v, spec.N)
    T = build_T(spec, solve_canonical(spec, pt, opts)).T
    uTv = np.vdot(u, T @ v)

    def one(r):
        sample = sample_sigma(spec, child_seed(master_seed, r))
        return abs(np.vdot(u, resolvent_solve(sample, pt, v)) - uTv) ** (2 * p)

    vals = np.array(map_replicates(one, replicates, workers))
    return MomentEstimate(spec.n, p, pt.z, float(vals.mean()),
                          float(vals.std(ddof=1) / np.sqrt(replicates)), replicates, int(master_seed))


def moment_grid(spec: ModelSpec, pt, n_grid, p: int = 1, replicates: int = 100,
                master_seed: int = 0, u_kind: str = "e1", v_kind: str | None = None,
                workers: int | None = None, opts: SolverOptions | None = None) -> list[MomentEstimate]:
    """Moment estimates over a grid of n with N/n and the profiles held fixed."""
    out = []
    for n in n_grid:
        s = spec.rescaled(int(n))
        u = unit_vector(u_kind, s.N)
        v = None if v_kind is None else unit_vector(v_kind, s.N)
        out.append(estimate_bilinear_moments(s, pt, u, v, p, replicates, master_seed, workers, opts))
    return out


@dataclass(frozen=True)
class RateFit:
    n_grid: list
    log_moments: list
    slope: float
    intercept: float
    slope_ci: tuple

    def to_json(self) -> str:
        return json.dumps({"slope": self.slope, "intercept": self.intercept,
                           "ci_lo": self.slope_ci[0], "ci_hi": self.slope_ci[1],
                           "n_grid": list(self.n_grid)})


def rate_regression(estimates) -> RateFit:
    """Least-squares fit of log(mean_moment) against log(n), with a 95% slope interval."""
    est = sorted(estimates, key=lambda e: e.n)
    if len(est) < 3:
        raise ValueError("rate regression needs at least 3 estimates")
    ns = [e.n for e in est]
    if len(set(ns)) != len(ns):
        raise ValueError("n values must be distinct")
    if len({e.p for e in est}) != 1 or len({e.z for e in est}) != 1:
        raise ValueError("estimates must share p and z")
    x = np.log(np.array(ns, dtype=float))
    y = np.log(np.array([e.mean_moment for e in est]))
    fit = stats.linregress(x, y)
    half = stats.t.ppf(0.975, len(x) - 2) * fit.stderr
    return RateFit(ns, y.tolist(), float(fit.slope), float(fit.intercept),
                   (float(fit.slope - half), float(fit.slope + half)))


@dataclass(frozen=True, eq=False)
class TraceGapResult:
    """Per-replicate gaps (1/N) Tr(Q - T), (1/n) Tr D Q - delta and the tilde analogue."""

    z: complex
    gaps: np.ndarray
    alpha_gaps: np.ndarray
    alpha_tilde_gaps: np.ndarray
    delta: complex
    delta_tilde: complex
    seed: int

    @property
    def replicates(self) -> int:
        return self.gaps.size

    @property
    def mean_gap(self) -> complex:
        return complex(self.gaps.mean())

    @property
    def abs_mean_gap(self) -> float:
        """Mean over replicates of |(1/N) Tr(Q - T)|."""
        return float(np.abs(self.gaps).mean())

    @property
    def alpha_hat(self) -> complex:
        return complex(self.delta + self.alpha_gaps.mean())

    @property
    def alpha_tilde_hat(self) -> complex:
        return complex(self.delta_tilde + self.alpha_tilde_gaps.mean())

    def summary(self) -> dict:
        return {
            "z_re": self.z.real, "z_im": self.z.imag, "replicates": self.replicates,
            "seed": self.seed,
            "mean_gap_re": self.mean_gap.real, "mean_gap_im": self.mean_gap.imag,
            "abs_mean_gap": self.abs_mean_gap,
            "alpha_hat_re": self.alpha_hat.real, "alpha_hat_im": self.alpha_hat.imag,
            "alpha_tilde_hat_re": self.alpha_tilde_hat.real,
            "alpha_tilde_hat_im": self.alpha_tilde_hat.imag,
            "delta_re": self.delta.real, "delta_im": self.delta.imag,
            "delta_tilde_re": self.delta_tilde.real, "delta_tilde_im": self.delta_tilde.imag,
        }


def trace_gap(spec: ModelSpec, pt, replicates: int = 100, master_seed: int = 0,
              workers: int | None = None, opts: SolverOptions | None = None) -> TraceGapResult:
    pt = as_point(pt)
    spec.validate()
    sol = solve_canonical(spec, pt, opts)
    trT = np.trace(build_T(spec, sol).T)

    def one(r):
        sample = sample_sigma(spec, child_seed(master_seed, r))
        Q = resolvent(sample, pt)
        Qt = co_resolvent(sample, pt)
        return ((np.trace(Q) - trT) / spec.N,
                np.sum(spec.d * np.diag(Q)) / spec.n - sol.delta,
                np.sum(spec.d_tilde * np.diag(Qt)) / spec.n - sol.delta_tilde)

    rows = np.array(map_replicates(one, replicates, workers), dtype=complex)
    return TraceGapResult(pt.z, rows[:, 0], rows[:, 1], rows[:, 2],
                          sol.delta, sol.delta_tilde, int(master_seed))


@dataclass(frozen=True)
class QuadFormProbe:
    ratio: float
    std_error: float
    replicates: int
    degenerate: bool = False


def quadratic_form_probe(M, entry_law: str = "circular-complex-gaussian", p: int = 2,
                         replicates: int = 1000, seed: int = 0) -> QuadFormProbe:
    """E|x^* M x - Tr M|^p / (Tr M M^*)^{p/2} for x with i.i.d. entries of ``entry_law``."""
    if p < 2:
        raise ValueError("p must be >= 2")
    M = np.asarray(M, dtype=complex)
    denom = np.trace(M @ M.conj().T).real ** (p / 2)
    if denom == 0:
        return QuadFormProbe(0.0, 0.0, replicates, degenerate=True)
    X = draw_entries(rng_from_seed(seed), (replicates, M.shape[0]), entry_law)
    vals = np.abs(np.einsum("ri,ij,rj->r", X.conj(), M, X) - np.trace(M)) ** p / denom
    return QuadFormProbe(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(replicates)), replicates)


@dataclass(frozen=True, eq=False)
class LemmaSumProbe:
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std_error(self) -> float:
        return float(self.values.std(ddof=1) / np.sqrt(self.values.size)) if self.values.size > 1 else 0.0


def column_removed_forms(sample, pt, u) -> np.ndarray:
    """u^* Q_j(z) a_j for every column j, via the rank-one update of Q."""
    spec = sample.spec
    Q = resolvent(sample, pt)
    S, A = sample.sigma, spec.A
    uQ = u.conj() @ Q
    b = uQ @ A
    c = uQ @ S
    QA = Q @ A
    e = np.einsum("ij,ij->j", S.conj(), QA)
    f = np.einsum("ij,ij->j", S.conj(), Q @ S)
    return b + c * e / (1.0 - f)


def lemma_sum_probe(spec: ModelSpec, pt, u=None, replicates: int = 50, seed: int = 0,
                    workers: int | None = None) -> LemmaSumProbe:
    """Per-replicate sum_j (u^* Q_j a_j a_j^* Q_j^* u)^2 with ``u`` normalized."""
    pt = as_point(pt)
    u = unit_vector("e1", spec.N) if u is None else _normalized(u, spec.N)

    def one(r):
        sample = sample_sigma(spec, child_seed(seed, r))
        return float(np.sum(np.abs(column_removed_forms(sample, pt, u)) ** 4))

    return LemmaSumProbe(np.array(map_replicates(one, replicates, workers)))
