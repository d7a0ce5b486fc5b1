"""Fixed-point solver for the canonical system defining (delta, delta_tilde).

    delta  = (1/n) Tr D  (-z(I + delta_t D)  + A (I + delta Dt)^{-1} A^*)^{-1}
    delta_t = (1/n) Tr Dt (-z(I + delta Dt) + A^* (I + delta_t D)^{-1} A)^{-1}

The solution is unique among Stieltjes transforms of non-negative measures
on R+. It is computed by damped Picard iteration in Gauss-Seidel order.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .model import EvaluationPoint, ModelSpec, as_point


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-12
    max_iter: int = 10_000
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class CanonicalSolution:
    z: complex
    delta: complex
    delta_tilde: complex
    residual: float
    iterations: int
    converged: bool


class ConvergenceError(RuntimeError):
    """Raised when the iteration does not converge; ``last`` is the final iterate."""

    def __init__(self, message: str, last: CanonicalSolution, index: int | None = None):
        super().__init__(message)
        self.last = last
        self.index = index


def _trace_weighted_inverse(M: np.ndarray, weights: np.ndarray, hermitian: bool) -> complex:
    """Tr(W M^{-1}) for W = diag(weights)."""
    eye = np.eye(M.shape[0], dtype=M.dtype)
    if hermitian:
        Minv = sla.cho_solve(sla.cho_factor(M, check_finite=False), eye, check_finite=False)
    else:
        Minv = sla.lu_solve(sla.lu_factor(M, check_finite=False), eye, check_finite=False)
    return np.sum(weights * np.diag(Minv))


class CanonicalMap:
    """Right-hand sides of the canonical system for one model.

    Three evaluation paths, picked from the structure of the model:
    ``centered`` (A = 0, everything diagonal), ``isotropic`` (D and Dt are
    multiples of the identity; uses the spectrum of A A^*) and ``dense``.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.N, self.n = spec.N, spec.n
        self.d, self.dt = spec.d, spec.d_tilde
        if spec.is_centered:
            self.mode = "centered"
        elif np.all(self.d == self.d[0]) and np.all(self.dt == self.dt[0]):
            self.mode = "isotropic"
            s2 = np.linalg.svd(spec.A, compute_uv=False) ** 2
            self.sa = np.zeros(self.N)
            self.sa[: s2.size] = s2
            self.sat = np.zeros(self.n)
            self.sat[: s2.size] = s2
        else:
            self.mode = "dense"

    def F(self, delta: complex, delta_t: complex, z: complex) -> complex:
        d, dt, n = self.d, self.dt, self.n
        if self.mode == "centered":
            val = np.sum(d / (-z * (1.0 + delta_t * d))) / n
        elif self.mode == "isotropic":
            c, ct = d[0], dt[0]
            val = c * np.sum(1.0 / (-z * (1.0 + delta_t * c) + self.sa / (1.0 + delta * ct))) / n
        else:
            A = self.spec.A
            M = (A / (1.0 + delta * dt)) @ A.conj().T
            M[np.diag_indices_from(M)] += -z * (1.0 + delta_t * d)
            val = _trace_weighted_inverse(M, d, self._hermitian(z, delta, delta_t)) / n
        return val.real + 0j if z.imag == 0 else complex(val)

    def Ft(self, delta: complex, delta_t: complex, z: complex) -> complex:
        d, dt, n = self.d, self.dt, self.n
        if self.mode == "centered":
            val = np.sum(dt / (-z * (1.0 + delta * dt))) / n
        elif self.mode == "isotropic":
            c, ct = d[0], dt[0]
            val = ct * np.sum(1.0 / (-z * (1.0 + delta * ct) + self.sat / (1.0 + delta_t * c))) / n
        else:
            A = self.spec.A
            M = (A.conj().T / (1.0 + delta_t * d)) @ A
            M[np.diag_indices_from(M)] += -z * (1.0 + delta * dt)
            val = _trace_weighted_inverse(M, dt, self._hermitian(z, delta, delta_t)) / n
        return val.real + 0j if z.imag == 0 else complex(val)

    @staticmethod
    def _hermitian(z, delta, delta_t) -> bool:
        return z.imag == 0 and z.real < 0 and complex(delta).imag == 0 and complex(delta_t).imag == 0

    def residual(self, delta, delta_t, z) -> float:
        return max(abs(delta - self.F(delta, delta_t, z)), abs(delta_t - self.Ft(delta, delta_t, z)))


def _picard(F, Ft, residual, x0, opts: SolverOptions, z, floor: float | None = None) -> CanonicalSolution:
    """Damped Gauss-Seidel fixed-point loop shared by both canonical systems."""
    delta, delta_t = x0
    omega = opts.damping
    prev_step = np.inf
    rising = 0
    res = np.inf
    for it in range(1, opts.max_iter + 1):
        new = (1 - omega) * delta + omega * F(delta, delta_t, z)
        if floor is not None and new.real < 0:
            new = floor + 0j
        new_t = (1 - omega) * delta_t + omega * Ft(new, delta_t, z)
        if floor is not None and new_t.real < 0:
            new_t = floor + 0j
        step = max(abs(new - delta), abs(new_t - delta_t))
        delta, delta_t = new, new_t
        scale = 1.0 + abs(delta) + abs(delta_t)
        if step <= opts.tol * scale:
            res = residual(delta, delta_t, z)
            if res <= opts.tol * scale:
                return CanonicalSolution(z, complex(delta), complex(delta_t), float(res), it, True)
        # Plain Picard can cycle close to R+; halve the damping when the
        # update grows three times in a row.
        rising = rising + 1 if step > prev_step else 0
        if rising >= 3:
            omega *= 0.5
            rising = 0
        prev_step = step
    res = residual(delta, delta_t, z)
    last = CanonicalSolution(z, complex(delta), complex(delta_t), float(res), opts.max_iter, False)
    raise ConvergenceError(f"no convergence at z={z} after {opts.max_iter} iterations "
                           f"(residual {res:.3e})", last)


def initial_iterate(spec: ModelSpec, z: complex) -> tuple[complex, complex]:
    return (spec.d.sum() / spec.n * (-1.0 / z), spec.d_tilde.sum() / spec.n * (-1.0 / z))


def solve_canonical(spec: ModelSpec, pt, opts: SolverOptions | None = None, init=None,
                    cmap: CanonicalMap | None = None) -> CanonicalSolution:
    """Solve the canonical system at ``pt``.

    ``init`` is an optional (delta, delta_tilde) starting pair; ``cmap`` lets
    callers reuse the precomputed structure of the model across many points.
    """
    opts = opts or SolverOptions()
    z = as_point(pt).z
    cmap = cmap or CanonicalMap(spec)
    x0 = initial_iterate(spec, z) if init is None else tuple(complex(v) for v in init)
    return _picard(cmap.F, cmap.Ft, cmap.residual, x0, opts, z)


def solve_canonical_grid(spec: ModelSpec, points, opts: SolverOptions | None = None,
                         warm_start: bool = True) -> list[CanonicalSolution]:
    """Solve along an ordered path of points, warm-starting from the previous point."""
    opts = opts or SolverOptions()
    cmap = CanonicalMap(spec)
    out: list[CanonicalSolution] = []
    prev = None
    for k, pt in enumerate(points):
        z = as_point(pt).z
        init = None
        if warm_start and prev is not None:
            init = (prev.delta, prev.delta_tilde)
            # Warm starts must stay in the Stieltjes class of the new point.
            if z.imag * prev.z.imag < 0 or (z.imag == 0) != (prev.z.imag == 0):
                init = None
        try:
            sol = solve_canonical(spec, z, opts, init=init, cmap=cmap)
        except ConvergenceError as exc:
            raise ConvergenceError(f"point {k}: {exc}", exc.last, index=k) from exc
        out.append(sol)
        prev = sol
    return out


def default_step(z: complex) -> float:
    return 1e-6 * max(1.0, abs(z))


def derivative_delta(spec: ModelSpec, pt, sol: CanonicalSolution | None = None,
                     h: float | None = None, direction: complex = 1.0,
                     opts: SolverOptions | None = None,
                     cmap: CanonicalMap | None = None) -> tuple[complex, complex]:
    """Central finite-difference derivatives (delta', delta_tilde') at ``pt``.

    The difference is taken along the unit complex ``direction`` (the contour
    tangent); for holomorphic delta the result does not depend on it.
    Inner solves run at tol <= 1e-14 so the difference quotient is not
    dominated by solver error.
    """
    pt = as_point(pt)
    z = pt.z
    h = default_step(z) if h is None else float(h)
    direction = complex(direction) / abs(direction)
    dz = h * direction
    zp, zm = z + dz, z - dz
    for w in (zp, zm):
        if (abs(w.imag) if w.real >= 0 else abs(w)) <= 0 or (w.imag == 0 and w.real >= 0):
            raise ValueError(f"finite-difference point {w} leaves C minus R+")
        if w.imag * z.imag < 0:
            raise ValueError(f"finite-difference step h={h} crosses the real axis at z={z}")
    opts = opts or SolverOptions()
    inner = replace(opts, tol=min(opts.tol, 1e-14))
    cmap = cmap or CanonicalMap(spec)
    init = None if sol is None else (sol.delta, sol.delta_tilde)
    sp = solve_canonical(spec, zp, inner, init=init, cmap=cmap)
    sm = solve_canonical(spec, zm, inner, init=init, cmap=cmap)
    return ((sp.delta - sm.delta) / (2 * dz), (sp.delta_tilde - sm.delta_tilde) / (2 * dz))


# ---------------------------------------------------------- precoder system

class PrecoderMap:
    """Right-hand sides of the K-dependent system.

    Same structure as the canonical system at z = -1 with D replaced by
    K R K^*, A by K B and Dt by R_tilde (both possibly non-diagonal).
    """

    def __init__(self, B, R, R_tilde, K):
        B, R, Rt, K = (np.asarray(M, dtype=complex) for M in (B, R, R_tilde, K))
        N, n = B.shape
        if R.shape != (N, N) or Rt.shape != (n, n) or K.shape != (N, N):
            raise ValueError("dimension mismatch in precoder system")
        self.n = n
        self.DK = K @ R @ K.conj().T
        self.AK = K @ B
        self.Rt = Rt
        self.IN = np.eye(N)
        self.In = np.eye(n)

    @staticmethod
    def _trace_solve(M, W) -> float:
        c = sla.cho_factor(M, check_finite=False)
        return float(np.trace(sla.cho_solve(c, W, check_finite=False)).real)

    def T(self, delta, delta_t) -> np.ndarray:
        """[(I + delta_t K R K^*) + K B (I + delta R_tilde)^{-1} B^* K^*]^{-1}."""
        M = self._M(delta, delta_t)
        return sla.cho_solve(sla.cho_factor(M, check_finite=False), self.IN, check_finite=False)

    def _M(self, delta, delta_t):
        delta, delta_t = complex(delta).real, complex(delta_t).real
        inner = sla.solve(self.In + delta * self.Rt, self.AK.conj().T, assume_a="pos")
        M = self.IN + delta_t * self.DK + self.AK @ inner
        return 0.5 * (M + M.conj().T)

    def F(self, delta, delta_t, z=None) -> complex:
        return self._trace_solve(self._M(delta, delta_t), self.DK) / self.n + 0j

    def Ft(self, delta, delta_t, z=None) -> complex:
        delta, delta_t = complex(delta).real, complex(delta_t).real
        inner = sla.solve(self.IN + delta_t * self.DK, self.AK, assume_a="pos")
        M = self.In + delta * self.Rt + self.AK.conj().T @ inner
        M = 0.5 * (M + M.conj().T)
        return self._trace_solve(M, self.Rt) / self.n + 0j

    def residual(self, delta, delta_t, z=None) -> float:
        return max(abs(delta - self.F(delta, delta_t)), abs(delta_t - self.Ft(delta, delta_t)))


def solve_precoder_system(B, R, R_tilde, K, opts: SolverOptions | None = None,
                          init=None) -> CanonicalSolution:
    """Positive solution (delta(K), delta_tilde(K)) of the precoder system.

    Returned as a ``CanonicalSolution`` at z = -1 with real delta values.
    """
    opts = opts or SolverOptions()
    pmap = PrecoderMap(B, R, R_tilde, K)
    if init is None:
        x0 = (np.trace(pmap.DK).real / pmap.n + 0j, np.trace(pmap.Rt).real / pmap.n + 0j)
    else:
        x0 = tuple(complex(v) for v in init)
    sol = _picard(pmap.F, pmap.Ft, pmap.residual, x0, opts, -1.0 + 0j, floor=1e-14)
    return replace(sol, delta=complex(sol.delta.real), delta_tilde=complex(sol.delta_tilde.real))


def in_stieltjes_class(sol: CanonicalSolution) -> bool:
    z = sol.z
    if z.imag > 0:
        return sol.delta.imag > 0 and sol.delta_tilde.imag > 0
    if z.imag < 0:
        return sol.delta.imag < 0 and sol.delta_tilde.imag < 0
    return sol.delta.real > 0 and sol.delta_tilde.real > 0


__all__ = [
    "CanonicalMap",
    "CanonicalSolution",
    "ConvergenceError",
    "EvaluationPoint",
    "SolverOptions",
    "derivative_delta",
    "in_stieltjes_class",
    "solve_canonical",
    "solve_canonical_grid",
    "solve_precoder_system",
]
