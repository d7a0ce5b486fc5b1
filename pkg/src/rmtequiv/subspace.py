"""Consistent estimation of u^* Pi u, Pi the projector on the orthogonal
complement of the column space of A, in the white-noise model.

The estimate is the clockwise contour integral over the boundary of the
rectangle [x_minus, x_plus] x [-y, y] of

    u^* Q(z) u * w_hat'(z) / (1 + delta_hat(z)),   w_hat = z (1 + delta_hat)(1 + delta_tilde_hat),

with delta_hat = Tr Q / n and delta_tilde_hat = Tr Qt / n. Replacing the
empirical quantities by T, delta, delta_tilde gives the deterministic
counterpart, which equals u^* Pi u when w maps the rectangle boundary onto a
contour enclosing 0 and none of the non-zero eigenvalues of A A^*.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import CanonicalMap, SolverOptions, derivative_delta, solve_canonical_grid
from .model import ModelSpec, SampleHandle, SpectralResolvent, as_point, co_resolvent, resolvent

PANEL_SIZE = 16
SUBSPACE_CSV_HEADER = "seed,N,n,r,u_kind,estimate,oracle,abs_err,nodes_per_edge,x_minus,x_plus,y"


class SeparationError(RuntimeError):
    """No usable gap between the noise bulk and the signal eigenvalues."""


@dataclass(frozen=True)
class ContourSpec:
    x_minus: float
    x_plus: float
    y: float
    nodes_per_edge: int = 64
    rank: int | None = None
    degenerate: bool = False

    def __post_init__(self):
        if not self.x_minus < self.x_plus:
            raise ValueError("x_minus must be < x_plus")
        if not self.y > 0:
            raise ValueError("y must be positive")
        if self.nodes_per_edge < 4:
            raise ValueError("nodes_per_edge must be >= 4")

    def refined(self, factor: int = 2) -> "ContourSpec":
        return ContourSpec(self.x_minus, self.x_plus, self.y, self.nodes_per_edge * factor,
                           self.rank, self.degenerate)

    def with_y(self, y: float) -> "ContourSpec":
        return ContourSpec(self.x_minus, self.x_plus, y, self.nodes_per_edge, self.rank, self.degenerate)


def _composite_gauss(a: float, b: float, m: int):
    """Composite Gauss-Legendre nodes/weights on [a, b] (a > b allowed) with m nodes."""
    panels = -(-m // PANEL_SIZE)
    sizes = [len(c) for c in np.array_split(np.arange(m), panels)]
    edges = np.linspace(a, b, panels + 1)
    xs, ws = [], []
    for k, size in enumerate(sizes):
        t, w = np.polynomial.legendre.leggauss(size)
        lo, hi = edges[k], edges[k + 1]
        xs.append(0.5 * (hi - lo) * t + 0.5 * (hi + lo))
        ws.append(0.5 * (hi - lo) * w)
    return np.concatenate(xs), np.concatenate(ws)


def contour_nodes(contour: ContourSpec):
    """Nodes z_k and complex weights dz_k of the clockwise rectangle boundary.

    Vertical edges are split at the real axis so that no Gauss node lies on R.
    Nodes are ordered along the path, starting at the top-left corner.
    """
    xm, xp, y, m = contour.x_minus, contour.x_plus, contour.y, contour.nodes_per_edge
    lo, hi = m // 2, m - m // 2
    pieces = []
    # top edge, left to right
    x, w = _composite_gauss(xm, xp, m)
    pieces.append((x + 1j * y, w + 0j))
    # right edge, downwards
    for a, b, k in ((y, 0.0, hi), (0.0, -y, lo)):
        t, w = _composite_gauss(a, b, k)
        pieces.append((xp + 1j * t, 1j * w))
    # bottom edge, right to left
    x, w = _composite_gauss(xp, xm, m)
    pieces.append((x - 1j * y, w + 0j))
    # left edge, upwards
    for a, b, k in ((-y, 0.0, hi), (0.0, y, lo)):
        t, w = _composite_gauss(a, b, k)
        pieces.append((xm + 1j * t, 1j * w))
    z = np.concatenate([p[0] for p in pieces])
    dz = np.concatenate([p[1] for p in pieces])
    return z, dz


def true_projector(A, tol: float | None = None) -> np.ndarray:
    """I - U_r U_r^*, U_r an orthonormal basis of the column space of A."""
    A = np.asarray(A, dtype=complex)
    N = A.shape[0]
    U, s, _ = np.linalg.svd(A, full_matrices=True)
    if tol is None:
        tol = (s.max() if s.size else 0.0) * max(A.shape) * np.finfo(float).eps
    r = int(np.sum(s > tol))
    if r >= N:
        raise ValueError("A has full row rank: no noise subspace")
    Ur = U[:, :r]
    return np.eye(N) - Ur @ Ur.conj().T


def signal_basis(A, r: int | None = None) -> np.ndarray:
    U, s, _ = np.linalg.svd(np.asarray(A, dtype=complex), full_matrices=False)
    if r is None:
        r = int(np.sum(s > s.max() * max(np.shape(A)) * np.finfo(float).eps)) if s.size else 0
    return U[:, :r]


def planted_signal(N: int, n: int, strengths, seed: int = 0) -> np.ndarray:
    """A = U diag(strengths) V^* with Haar-like orthonormal U (N x r), V (n x r)."""
    rng = np.random.default_rng(seed)
    r = len(strengths)
    gu = rng.standard_normal((N, r)) + 1j * rng.standard_normal((N, r))
    gv = rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r))
    U, _ = np.linalg.qr(gu)
    V, _ = np.linalg.qr(gv)
    return (U * np.asarray(strengths, dtype=float)) @ V.conj().T


def _require_white(spec: ModelSpec) -> None:
    if not spec.is_white:
        raise ValueError("the subspace pipeline assumes D = I and D_tilde = I")


def empirical_stieltjes(sample: SampleHandle, pt, spectral: SpectralResolvent | None = None):
    """(delta_hat, delta_tilde_hat, delta_hat', delta_tilde_hat') at z.

    Derivatives are exact: d/dz (1/n) Tr Q = (1/n) Tr Q^2.
    """
    z = as_point(pt).z
    n = sample.n
    if spectral is not None:
        return (complex(spectral.trace(z) / n), complex(spectral.co_trace(z) / n),
                complex(spectral.trace(z, 2) / n), complex(spectral.co_trace(z, 2) / n))
    Q = resolvent(sample, z)
    Qt = co_resolvent(sample, z)
    return (complex(np.trace(Q) / n), complex(np.trace(Qt) / n),
            complex(np.sum(Q * Q.T) / n), complex(np.sum(Qt * Qt.T) / n))


def w_from_transforms(z, dh, dth, dh1, dth1):
    """w = z(1+d)(1+dt) and w' from the transforms and their derivatives."""
    w = z * (1 + dh) * (1 + dth)
    wp = (1 + dh) * (1 + dth) + z * dh1 * (1 + dth) + z * dth1 * (1 + dh)
    return w, wp


def w_hat_and_derivative(sample: SampleHandle, pt, spectral: SpectralResolvent | None = None):
    z = as_point(pt).z
    return w_from_transforms(z, *empirical_stieltjes(sample, z, spectral))


def auto_contour(sample: SampleHandle, r_hint: int | None = None, y: float = 1.0,
                 nodes_per_edge: int = 64, gap_factor: float = 2.0,
                 spectral: SpectralResolvent | None = None) -> ContourSpec:
    """Rectangle enclosing the noise bulk of Sigma Sigma^* and excluding the signal eigenvalues.

    x_minus = -max(0.5, 0.1 lambda_max). x_plus is the midpoint of the gap
    between eigenvalues N-r and N-r+1 (ascending). Without ``r_hint`` the
    split is the largest relative gap (lambda_{k+1} - lambda_k) / lambda_{k+1},
    accepted only if that gap exceeds ``gap_factor`` times the median spacing.
    """
    lam = np.sort((spectral or SpectralResolvent(sample)).eigvals)
    N = lam.size
    lam_max = lam[-1]
    x_minus = -max(0.5, 0.1 * lam_max)
    if r_hint == 0:
        return ContourSpec(x_minus, 1.1 * lam_max if lam_max > 0 else 1.0, y, nodes_per_edge,
                           rank=0, degenerate=True)
    if r_hint is not None:
        if not 0 < r_hint < N:
            raise ValueError(f"r_hint must lie in [0, {N - 1}]")
        r = int(r_hint)
    else:
        gaps = np.diff(lam)
        if gaps.size == 0:
            raise SeparationError("need at least two eigenvalues to detect a gap")
        rel = gaps / np.maximum(lam[1:], np.finfo(float).tiny)
        k = int(np.argmax(rel))
        if not gaps[k] > gap_factor * np.median(gaps):
            raise SeparationError("no eigenvalue gap exceeds the detection threshold; pass r_hint")
        r = N - 1 - k
    lo, hi = lam[N - r - 1], lam[N - r]
    if not hi > lo:
        raise SeparationError(f"eigenvalues {N - r} and {N - r + 1} coincide")
    return ContourSpec(x_minus, 0.5 * (lo + hi), y, nodes_per_edge, rank=r)


@dataclass(frozen=True)
class ProjectorEstimate:
    value: float
    contour: ContourSpec
    n_used: int
    raw_complex: complex
    imag_flag: bool


def _finish(raw: complex, contour: ContourSpec, nodes: int) -> ProjectorEstimate:
    raw = complex(raw)
    flag = abs(raw.imag) > 0.1 * abs(raw)
    return ProjectorEstimate(raw.real, contour, nodes, raw, bool(flag))


def estimate_projector_quadform(sample: SampleHandle, u, contour: ContourSpec,
                                spectral: SpectralResolvent | None = None) -> ProjectorEstimate:
    """Empirical estimate of u^* Pi u by quadrature over the rectangle boundary.

    ``n_used`` is the number of quadrature nodes.
    """
    _require_white(sample.spec)
    u = np.asarray(u, dtype=complex)
    u = u / np.linalg.norm(u)
    sr = spectral or SpectralResolvent(sample)
    z, dz = contour_nodes(contour)
    n = sample.n
    dh, dth = sr.trace(z) / n, sr.co_trace(z) / n
    dh1, dth1 = sr.trace(z, 2) / n, sr.co_trace(z, 2) / n
    _, wp = w_from_transforms(z, dh, dth, dh1, dth1)
    denom = 1.0 + dh
    if np.min(np.abs(denom)) < 1e-10:
        raise ZeroDivisionError("1 + delta_hat vanishes at a quadrature node")
    f = sr.quadform(u, z) * wp / denom
    raw = np.sum(f * dz) / (2j * np.pi)
    return _finish(raw, contour, z.size)


class _DeterministicContour:
    """Deterministic quantities (delta, delta', w, w') at the contour nodes."""

    def __init__(self, spec: ModelSpec, contour: ContourSpec, opts: SolverOptions | None = None):
        _require_white(spec)
        self.spec = spec
        self.z, self.dz = contour_nodes(contour)
        cmap = CanonicalMap(spec)
        sols = solve_canonical_grid(spec, self.z, opts)
        delta = np.array([s.delta for s in sols])
        delta_t = np.array([s.delta_tilde for s in sols])
        d1 = np.empty_like(delta)
        dt1 = np.empty_like(delta)
        for k, (zk, s) in enumerate(zip(self.z, sols)):
            d1[k], dt1[k] = derivative_delta(spec, zk, s, direction=self.dz[k], opts=opts, cmap=cmap)
        self.delta, self.delta_tilde = delta, delta_t
        self.w, self.wp = w_from_transforms(self.z, delta, delta_t, d1, dt1)
        self.lam, self.U = np.linalg.eigh(spec.A @ spec.A.conj().T)

    def integral(self, u) -> complex:
        c = np.abs(self.U.conj().T @ u) ** 2
        # u^* T u (1 + delta)^{-1} = u^* (A A^* - w)^{-1} u
        g = np.sum(c / (self.lam - self.w[:, None]), axis=1)
        return complex(np.sum(g * self.wp * self.dz) / (2j * np.pi))

    def winding(self, points) -> np.ndarray:
        """Winding number of the closed path w(contour) around each point."""
        w = np.append(self.w, self.w[0])
        out = []
        for p in np.atleast_1d(points):
            ang = np.angle(w - p)
            out.append(np.sum(np.angle(np.exp(1j * np.diff(ang)))) / (2 * np.pi))
        return np.rint(np.array(out)).astype(int)


def oracle_projector_quadform(spec: ModelSpec, u, contour: ContourSpec,
                              opts: SolverOptions | None = None) -> ProjectorEstimate:
    """Deterministic contour integral of u^* T u w'/(1 + delta) over the rectangle."""
    u = np.asarray(u, dtype=complex)
    u = u / np.linalg.norm(u)
    det = _DeterministicContour(spec, contour, opts)
    return _finish(det.integral(u), contour, det.z.size)


def w_image_winding(spec: ModelSpec, contour: ContourSpec, opts: SolverOptions | None = None) -> dict:
    """Winding numbers of w(boundary) around the distinct eigenvalues of A A^*.

    Clockwise enclosure of an eigenvalue gives -1; the deterministic formula
    recovers Pi exactly when 0 has winding -1 and every non-zero eigenvalue 0.
    """
    det = _DeterministicContour(spec, contour, opts)
    lam = det.lam
    scale = max(1.0, lam.max())
    distinct = []
    for v in np.sort(lam):
        v = 0.0 if abs(v) < 1e-10 * scale else float(v)
        if not distinct or abs(v - distinct[-1]) > 1e-9 * scale:
            distinct.append(v)
    return dict(zip(distinct, det.winding(distinct).tolist()))
