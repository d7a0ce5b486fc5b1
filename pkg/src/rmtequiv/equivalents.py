"""Deterministic equivalents T, Tt, intermediate matrices R, Rt, and the
stability coefficients of the 2x2 systems controlling alpha - delta."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .canonical import CanonicalSolution
from .model import ModelSpec, as_point

STABILITY_CSV_HEADER = "z_re,z_im,u1,u1t,v1,v1t,w1,w1t,det"


@dataclass(frozen=True, eq=False)
class EquivalentPair:
    z: complex
    T: np.ndarray
    T_tilde: np.ndarray
    solution: CanonicalSolution | None = None


def _inverse(M: np.ndarray) -> np.ndarray:
    try:
        return sla.inv(M, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise np.linalg.LinAlgError("factorization of the equivalent system failed") from exc


def equivalent_matrices(spec: ModelSpec, z: complex, a: complex, a_t: complex):
    """(-z(I + a_t D) + A(I + a Dt)^{-1}A^*)^{-1} and its n x n counterpart."""
    d, dt, A = spec.d, spec.d_tilde, spec.A
    if spec.is_centered:
        return np.diag(1.0 / (-z * (1.0 + a_t * d))), np.diag(1.0 / (-z * (1.0 + a * dt)))
    M = (A / (1.0 + a * dt)) @ A.conj().T
    M[np.diag_indices_from(M)] += -z * (1.0 + a_t * d)
    Mt = (A.conj().T / (1.0 + a_t * d)) @ A
    Mt[np.diag_indices_from(Mt)] += -z * (1.0 + a * dt)
    return _inverse(M), _inverse(Mt)


def build_T(spec: ModelSpec, sol: CanonicalSolution) -> EquivalentPair:
    if not sol.converged:
        raise ValueError("build_T needs a converged canonical solution")
    T, Tt = equivalent_matrices(spec, sol.z, sol.delta, sol.delta_tilde)
    return EquivalentPair(sol.z, T, Tt, sol)


def build_R(spec: ModelSpec, pt, alpha: complex, alpha_tilde: complex) -> EquivalentPair:
    """R and Rt built from externally supplied (alpha, alpha_tilde).

    Typically alpha, alpha_tilde are Monte Carlo estimates of
    (1/n) Tr D E[Q] and (1/n) Tr Dt E[Qt]. Raises if the norm bound
    ||R|| <= 1/dist(z, R+) fails, which signals inputs outside the
    Stieltjes class.
    """
    pt = as_point(pt)
    R, Rt = equivalent_matrices(spec, pt.z, complex(alpha), complex(alpha_tilde))
    bound = (1.0 + 1e-10) / pt.dist_to_R_plus
    for name, M in (("R", R), ("R_tilde", Rt)):
        if np.linalg.norm(M, 2) > bound:
            raise ValueError(f"||{name}|| exceeds 1/dist(z, R+); alpha values look invalid")
    return EquivalentPair(pt.z, R, Rt, None)


def w_of_z(pt, sol: CanonicalSolution) -> complex:
    z = as_point(pt).z
    return z * (1.0 + sol.delta) * (1.0 + sol.delta_tilde)


def white_noise_T(A, pt, sol: CanonicalSolution) -> np.ndarray:
    """T in the white-noise case: (1 + delta) (A A^* - w(z) I)^{-1}."""
    A = np.asarray(A, dtype=complex)
    w = w_of_z(pt, sol)
    M = A @ A.conj().T - w * np.eye(A.shape[0])
    return (1.0 + sol.delta) * _inverse(M)


def trace_consistency(spec: ModelSpec, pair: EquivalentPair) -> tuple[float, float]:
    """|(1/n) Tr D T - delta| and |(1/n) Tr Dt Tt - delta_tilde|."""
    sol = pair.solution
    n = spec.n
    e = abs(np.sum(spec.d * np.diag(pair.T)) / n - sol.delta)
    et = abs(np.sum(spec.d_tilde * np.diag(pair.T_tilde)) / n - sol.delta_tilde)
    return float(e), float(et)


def duality_residual(spec: ModelSpec, pair: EquivalentPair) -> float:
    """max-abs of (I + delta Dt)^{-1} A^* T - Tt A^* (I + delta_t D)^{-1}."""
    sol = pair.solution
    Ah = spec.A.conj().T
    lhs = (Ah / (1.0 + sol.delta * spec.d_tilde)[:, None]) @ pair.T
    rhs = pair.T_tilde @ (Ah / (1.0 + sol.delta_tilde * spec.d)[None, :])
    return float(np.abs(lhs - rhs).max())


@dataclass(frozen=True)
class StabilityReport:
    z: complex
    u1: float
    u1_tilde: float
    v1: float
    v1_tilde: float
    w1: float
    w1_tilde: float
    det_I_minus_C1: float

    def csv_row(self) -> str:
        vals = (self.z.real, self.z.imag, self.u1, self.u1_tilde, self.v1, self.v1_tilde,
                self.w1, self.w1_tilde, self.det_I_minus_C1)
        return ",".join(f"{v:.17g}" for v in vals)


def stability_report(spec: ModelSpec, pt, sol: CanonicalSolution,
                     pair: EquivalentPair | None = None) -> StabilityReport:
    """Coefficients of C1 = [[u1, v1], [|z|^2 v1t, u1t]] and det(I - C1)."""
    z = as_point(pt).z
    pair = pair or build_T(spec, sol)
    T, Tt = pair.T, pair.T_tilde
    d, dt, A, n = spec.d, spec.d_tilde, spec.A, spec.n
    # (I + conj(delta) Dt)^{-1} Dt (I + delta Dt)^{-1} is diagonal and real
    g = dt / np.abs(1.0 + sol.delta * dt) ** 2
    gt = d / np.abs(1.0 + sol.delta_tilde * d) ** 2
    TA = T @ A
    TtAh = Tt @ A.conj().T
    u1 = np.sum(d[:, None] * np.abs(TA) ** 2 * g[None, :]) / n
    u1t = np.sum(dt[:, None] * np.abs(TtAh) ** 2 * gt[None, :]) / n
    aT = np.abs(T) ** 2
    aTt = np.abs(Tt) ** 2
    v1 = d @ aT @ d / n
    v1t = dt @ aTt @ dt / n
    w1 = np.sum(d[:, None] * aT) / n
    w1t = np.sum(dt[:, None] * aTt) / n
    det = (1.0 - u1) * (1.0 - u1t) - abs(z) ** 2 * v1 * v1t
    return StabilityReport(z, float(u1), float(u1t), float(v1), float(v1t),
                           float(w1), float(w1t), float(det))


@dataclass(frozen=True)
class ExtendedStabilityReport:
    """C0 and C2 coefficients; these need (alpha, alpha_tilde)."""

    z: complex
    u0: complex
    u0_tilde: complex
    v0: complex
    v0_tilde: complex
    det_I_minus_C0: complex
    u2: float
    u2_tilde: float
    v2: float
    v2_tilde: float
    det_I_minus_C2: float
    det_lower_bound: float


def extended_stability_report(spec: ModelSpec, pt, sol: CanonicalSolution,
                              alpha: complex, alpha_tilde: complex) -> ExtendedStabilityReport:
    z = as_point(pt).z
    tp = build_T(spec, sol)
    rp = build_R(spec, z, alpha, alpha_tilde)
    T, Tt, R, Rt = tp.T, tp.T_tilde, rp.T, rp.T_tilde
    d, dt, A, n = spec.d, spec.d_tilde, spec.A, spec.n
    Ah = A.conj().T
    delta, delta_t = sol.delta, sol.delta_tilde

    mid0 = dt / ((1.0 + alpha * dt) * (1.0 + delta * dt))
    mid0t = d / ((1.0 + alpha_tilde * d) * (1.0 + delta_t * d))
    u0 = np.trace(d[:, None] * (R @ (A * mid0) @ Ah @ T)) / n
    u0t = np.trace(dt[:, None] * (Rt @ (Ah * mid0t) @ A @ Tt)) / n
    v0 = np.trace(d[:, None] * R @ (d[:, None] * T)) / n
    v0t = np.trace(dt[:, None] * Rt @ (dt[:, None] * Tt)) / n
    det0 = (1.0 - u0) * (1.0 - u0t) - z**2 * v0 * v0t

    g2 = dt / np.abs(1.0 + alpha * dt) ** 2
    g2t = d / np.abs(1.0 + alpha_tilde * d) ** 2
    u2 = np.sum(d[:, None] * np.abs(R @ A) ** 2 * g2[None, :]) / n
    u2t = np.sum(dt[:, None] * np.abs(Rt @ Ah) ** 2 * g2t[None, :]) / n
    v2 = d @ np.abs(R) ** 2 @ d / n
    v2t = dt @ np.abs(Rt) ** 2 @ dt / n
    det2 = (1.0 - u2) * (1.0 - u2t) - abs(z) ** 2 * v2 * v2t

    s1 = stability_report(spec, z, sol, tp)
    lower = ((1.0 - np.sqrt(s1.u1_tilde * u2)) * (1.0 - np.sqrt(s1.u1 * u2t))
             - abs(z) ** 2 * np.sqrt(s1.v1 * v2 * s1.v1_tilde * v2t))
    return ExtendedStabilityReport(z, complex(u0), complex(u0t), complex(v0), complex(v0t),
                                   complex(det0), float(u2), float(u2t), float(v2), float(v2t),
                                   float(det2), float(lower))
