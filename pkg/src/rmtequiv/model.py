"""Random matrix model, sampling, resolvents and exact rank-one identities.

The model is the non-centered Gram matrix with separable variance profile

    Sigma = D^{1/2} X Dt^{1/2} / sqrt(n) + A

where D (N x N) and Dt (n x n) are non-negative diagonal, A is deterministic
and X has i.i.d. centered unit-variance complex entries.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

ENTRY_LAWS = ("circular-complex-gaussian", "complex-rademacher", "uniform-phase")


class ModelSpecError(ValueError):
    """Invalid model specification. ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True, eq=False)
class ModelSpec:
    N: int
    n: int
    d: np.ndarray
    d_tilde: np.ndarray
    A: np.ndarray
    entry_law: str = "circular-complex-gaussian"

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float).reshape(-1)
        dt = np.asarray(self.d_tilde, dtype=float).reshape(-1)
        A = np.asarray(self.A, dtype=complex)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "d_tilde", dt)
        object.__setattr__(self, "A", A)
        self.validate()

    def validate(self) -> None:
        if int(self.N) != self.N or self.N < 1:
            raise ModelSpecError(f"N must be a positive integer, got {self.N}", "N")
        if int(self.n) != self.n or self.n < 1:
            raise ModelSpecError(f"n must be a positive integer, got {self.n}", "n")
        if self.d.shape != (self.N,):
            raise ModelSpecError(f"d must have length N={self.N}, got {self.d.shape}", "d")
        if self.d_tilde.shape != (self.n,):
            raise ModelSpecError(
                f"d_tilde must have length n={self.n}, got {self.d_tilde.shape}", "d_tilde")
        if self.A.shape != (self.N, self.n):
            raise ModelSpecError(f"A must be {self.N}x{self.n}, got {self.A.shape}", "A")
        for name, v in (("d", self.d), ("d_tilde", self.d_tilde)):
            if not np.all(np.isfinite(v)):
                raise ModelSpecError(f"{name} has non-finite entries", name)
            if np.any(v < 0):
                raise ModelSpecError(f"{name} has negative entries", name)
            if v.mean() <= 0:
                raise ModelSpecError(f"{name} has zero mean (d_min > 0 violated)", name)
        if not np.all(np.isfinite(self.A)):
            raise ModelSpecError("A has non-finite entries", "A")
        if self.entry_law not in ENTRY_LAWS:
            raise ModelSpecError(
                f"unknown entry_law {self.entry_law!r}; expected one of {ENTRY_LAWS}", "entry_law")

    # Constants appearing in the assumptions.
    @property
    def d_max(self) -> float:
        return float(self.d.max())

    @property
    def d_tilde_max(self) -> float:
        return float(self.d_tilde.max())

    @property
    def d_min(self) -> float:
        return float(self.d.mean())

    @property
    def d_tilde_min(self) -> float:
        return float(self.d_tilde.mean())

    @property
    def a_max(self) -> float:
        if not self.A.any():
            return 0.0
        return float(np.linalg.norm(self.A, 2))

    @property
    def is_centered(self) -> bool:
        return not self.A.any()

    @property
    def is_white(self) -> bool:
        return bool(np.all(self.d == 1.0) and np.all(self.d_tilde == 1.0))

    @classmethod
    def marchenko_pastur(cls, N: int, n: int | None = None, entry_law: str = "circular-complex-gaussian"):
        """Centered white-noise model (D = I, Dt = I, A = 0)."""
        n = N if n is None else n
        return cls(N, n, np.ones(N), np.ones(n), np.zeros((N, n)), entry_law)

    def with_A(self, A) -> "ModelSpec":
        return ModelSpec(self.N, self.n, self.d, self.d_tilde, A, self.entry_law)

    def rescaled(self, n_new: int) -> "ModelSpec":
        """Same model family at column dimension ``n_new`` with N/n kept fixed.

        Variance profiles are resampled as piecewise-constant functions of
        i/N. ``A`` must be zero or diagonal (finite rank, fixed spectral norm).
        """
        N_new = max(1, int(round(self.N * n_new / self.n)))
        d = self.d[(np.arange(N_new) * self.N) // N_new]
        dt = self.d_tilde[(np.arange(n_new) * self.n) // n_new]
        A = np.zeros((N_new, n_new), dtype=complex)
        if self.A.any():
            vals = np.diag(self.A)
            k = np.arange(vals.size)
            diag_part = np.zeros_like(self.A)
            diag_part[k, k] = vals
            if np.any(self.A != diag_part):
                raise ModelSpecError("only zero or diagonal A can be rescaled", "A")
            nz = np.flatnonzero(vals)
            m = nz.max() + 1
            if m > min(N_new, n_new):
                raise ModelSpecError("diagonal A does not fit the rescaled dimensions", "A")
            A[np.arange(m), np.arange(m)] = vals[:m]
        return ModelSpec(N_new, n_new, d, dt, A, self.entry_law)

    # JSON round trip
    def to_dict(self) -> dict:
        return {
            "N": int(self.N),
            "n": int(self.n),
            "d": self.d.tolist(),
            "d_tilde": self.d_tilde.tolist(),
            "A": matrix_to_json(self.A),
            "entry_law": self.entry_law,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        for key in ("N", "n"):
            if key not in doc:
                raise ModelSpecError(f"missing field {key!r}", key)
        N, n = doc["N"], doc["n"]
        if not isinstance(N, int) or not isinstance(n, int):
            raise ModelSpecError("N and n must be integers", "N" if not isinstance(N, int) else "n")
        d = _profile(doc.get("d", 1.0), N, "d")
        dt = _profile(doc.get("d_tilde", 1.0), n, "d_tilde")
        A = matrix_from_json(doc.get("A", {"kind": "zero"}), (N, n))
        return cls(N, n, d, dt, A, doc.get("entry_law", "circular-complex-gaussian"))

    @classmethod
    def load(cls, path) -> "ModelSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def _profile(value, length: int, name: str) -> np.ndarray:
    if isinstance(value, (int, float)):
        return np.full(length, float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (length,):
        raise ModelSpecError(f"{name} must have length {length}", name)
    return arr


def matrix_to_json(M) -> dict:
    """Row-major ``{"re": [[...]], "im": [[...]]}`` encoding of a complex matrix."""
    M = np.asarray(M)
    return {"re": np.real(M).tolist(), "im": np.imag(M).tolist()}


def matrix_from_json(doc: dict, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Decode a matrix document.

    Accepted forms: ``{"re": .., "im": ..}`` (``im`` optional),
    ``{"kind": "zero"}`` and ``{"kind": "diag", "values": [...]}``; the last
    two need ``shape``.
    """
    if not isinstance(doc, dict):
        raise ModelSpecError("matrix must be a JSON object", "A")
    kind = doc.get("kind")
    if kind is not None:
        if shape is None:
            raise ModelSpecError(f"matrix kind {kind!r} needs explicit dimensions", "A")
        M = np.zeros(shape, dtype=complex)
        if kind == "zero":
            return M
        if kind == "diag":
            re = np.asarray(doc.get("values", []), dtype=float)
            im = np.asarray(doc.get("values_im", np.zeros_like(re)), dtype=float)
            if re.size > min(shape):
                raise ModelSpecError("too many diagonal values", "A")
            k = np.arange(re.size)
            M[k, k] = re + 1j * im
            return M
        raise ModelSpecError(f"unknown matrix kind {kind!r}", "A")
    if "re" not in doc:
        raise ModelSpecError("matrix needs 're' or 'kind'", "A")
    re = np.asarray(doc["re"], dtype=float)
    im = np.asarray(doc.get("im", np.zeros_like(re)), dtype=float)
    if re.ndim != 2 or re.shape != im.shape:
        raise ModelSpecError("matrix 're'/'im' must be equal-shape 2-D arrays", "A")
    if shape is not None and re.shape != tuple(shape):
        raise ModelSpecError(f"matrix must be {shape[0]}x{shape[1]}, got {re.shape}", "A")
    return re + 1j * im


@dataclass(frozen=True)
class EvaluationPoint:
    """A point z of C minus R+, with its distance to R+."""

    z: complex
    dist_to_R_plus: float = field(init=False)

    def __post_init__(self):
        z = complex(self.z)
        object.__setattr__(self, "z", z)
        dist = abs(z.imag) if z.real >= 0 else abs(z)
        if not dist > 0:
            raise ValueError(f"z={z} lies on R+")
        object.__setattr__(self, "dist_to_R_plus", dist)

    def conj(self) -> "EvaluationPoint":
        return EvaluationPoint(self.z.conjugate())


def as_point(pt) -> EvaluationPoint:
    return pt if isinstance(pt, EvaluationPoint) else EvaluationPoint(pt)


def parse_complex(text: str) -> complex:
    """Parse ``"-1+0i"``, ``"0.5-2j"``, ``"i"`` and plain reals."""
    s = str(text).strip().replace(" ", "").replace("i", "j")
    if s in ("j", "+j"):
        return 1j
    if s == "-j":
        return -1j
    return complex(s)


# ---------------------------------------------------------------- sampling

def child_seed(master_seed: int, index: int) -> int:
    """64-bit seed of stream ``index`` split off ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def draw_entries(rng: np.random.Generator, shape, entry_law: str) -> np.ndarray:
    """I.i.d. centered unit-variance complex entries."""
    if entry_law == "circular-complex-gaussian":
        g = rng.standard_normal((2,) + tuple(np.atleast_1d(shape)))
        return (g[0] + 1j * g[1]) / np.sqrt(2.0)
    if entry_law == "complex-rademacher":
        s = rng.integers(0, 2, size=(2,) + tuple(np.atleast_1d(shape))) * 2 - 1
        return (s[0] + 1j * s[1]) / np.sqrt(2.0)
    if entry_law == "uniform-phase":
        return np.exp(2j * np.pi * rng.random(shape))
    raise ModelSpecError(f"unknown entry_law {entry_law!r}", "entry_law")


@dataclass(frozen=True, eq=False)
class SampleHandle:
    sigma: np.ndarray
    seed: int
    spec: ModelSpec

    @property
    def N(self) -> int:
        return self.sigma.shape[0]

    @property
    def n(self) -> int:
        return self.sigma.shape[1]

    def gram(self) -> np.ndarray:
        return self.sigma @ self.sigma.conj().T

    def co_gram(self) -> np.ndarray:
        return self.sigma.conj().T @ self.sigma


def sample_sigma(spec: ModelSpec, seed: int) -> SampleHandle:
    spec.validate()
    X = draw_entries(rng_from_seed(seed), (spec.N, spec.n), spec.entry_law)
    Y = np.sqrt(spec.d)[:, None] * X * np.sqrt(spec.d_tilde)[None, :] / np.sqrt(spec.n)
    return SampleHandle(Y + spec.A, int(seed), spec)


def sample_from_matrix(sigma, spec: ModelSpec | None = None) -> SampleHandle:
    """Wrap a given matrix (e.g. a degenerate test case) as a sample."""
    sigma = np.asarray(sigma, dtype=complex)
    if spec is None:
        N, n = sigma.shape
        spec = ModelSpec(N, n, np.ones(N), np.ones(n), np.zeros((N, n)))
    return SampleHandle(sigma, -1, spec)


# --------------------------------------------------------------- resolvents

class ResolventError(RuntimeError):
    pass


def _shifted_inverse(G: np.ndarray, z: complex) -> np.ndarray:
    M = G - z * np.eye(G.shape[0])
    try:
        lu = sla.lu_factor(M, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ResolventError(f"factorization failed at z={z}") from exc
    if not np.all(np.isfinite(lu[0])) or np.any(np.diag(lu[0]) == 0):
        raise ResolventError(f"singular shifted Gram matrix at z={z}")
    return sla.lu_solve(lu, np.eye(G.shape[0], dtype=complex), check_finite=False)


def resolvent(sample: SampleHandle, pt) -> np.ndarray:
    """Q(z) = (Sigma Sigma^* - z I_N)^{-1}."""
    return _shifted_inverse(sample.gram(), as_point(pt).z)


def co_resolvent(sample: SampleHandle, pt) -> np.ndarray:
    """Qt(z) = (Sigma^* Sigma - z I_n)^{-1}."""
    return _shifted_inverse(sample.co_gram(), as_point(pt).z)


def resolvent_solve(sample: SampleHandle, pt, v: np.ndarray) -> np.ndarray:
    """Q(z) v without forming Q."""
    z = as_point(pt).z
    M = sample.gram() - z * np.eye(sample.N)
    return sla.solve(M, v, check_finite=False)


class SpectralResolvent:
    """Eigendecomposition of Sigma Sigma^*, for sweeps over many z on one sample.

    Also gives the co-resolvent traces through the shared non-zero spectrum.
    """

    def __init__(self, sample: SampleHandle):
        self.sample = sample
        self.eigvals, self.eigvecs = np.linalg.eigh(sample.gram())
        self.N, self.n = sample.N, sample.n

    def matrix(self, z: complex) -> np.ndarray:
        V = self.eigvecs
        return (V / (self.eigvals - z)) @ V.conj().T

    def quadform(self, u: np.ndarray, z) -> complex | np.ndarray:
        """u^* Q(z) u for scalar or array z."""
        w = np.abs(self.eigvecs.conj().T @ u) ** 2
        z = np.asarray(z)
        return np.sum(w / (self.eigvals - z[..., None]), axis=-1)

    def trace(self, z, power: int = 1):
        """Tr Q(z)^power."""
        z = np.asarray(z)
        return np.sum((self.eigvals - z[..., None]) ** (-power), axis=-1)

    def co_trace(self, z, power: int = 1):
        """Tr Qt(z)^power; the n - N extra eigenvalues of Sigma^*Sigma are 0."""
        z = np.asarray(z)
        return self.trace(z, power) + (self.n - self.N) * (-z) ** (-power)


def bilinear_form(u, M, v) -> complex:
    u = np.asarray(u)
    v = np.asarray(v)
    M = np.asarray(M)
    if u.ndim != 1 or v.ndim != 1 or M.shape != (u.size, v.size):
        raise ValueError(f"dimension mismatch: u{u.shape}, M{M.shape}, v{v.shape}")
    return complex(np.vdot(u, M @ v))


# ------------------------------------------------------- rank-one identities

@dataclass
class IdentityReport:
    j: int
    z: complex
    residuals: dict
    scale: float
    st_bound_ok: bool

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())


def check_rank_one_identities(sample: SampleHandle, pt, j: int) -> IdentityReport:
    """Residuals of the rank-one perturbation identities for column ``j``.

    ``Q_j`` is inverted from scratch with column ``j`` deleted, so the check
    does not rely on the identities it verifies.
    """
    pt = as_point(pt)
    z = pt.z
    if not 0 <= j < sample.n:
        raise IndexError(f"column index {j} out of range for n={sample.n}")
    sigma = sample.sigma
    eta = sigma[:, j]
    Q = resolvent(sample, pt)
    Qt = co_resolvent(sample, pt)
    sigma_j = np.delete(sigma, j, axis=1)
    Qj = _shifted_inverse(sigma_j @ sigma_j.conj().T, z)

    eQje = np.vdot(eta, Qj @ eta)
    eQe = np.vdot(eta, Q @ eta)
    Qj_eta = Qj @ eta
    Q_eta = Q @ eta
    eta_Qj = eta.conj() @ Qj
    eta_Q = eta.conj() @ Q
    qt_jj = Qt[j, j]

    res = {
        "diag_coresolvent": abs(qt_jj + 1.0 / (z * (1.0 + eQje))),
        "remove_column": np.abs(Q - (Qj - np.outer(Qj_eta, eta_Qj) / (1.0 + eQje))).max(),
        "add_column": np.abs(Qj - (Q + np.outer(Q_eta, eta_Q) / (1.0 - eQe))).max(),
        "quadform_ratio": abs((1.0 + eQje) - 1.0 / (1.0 - eQe)),
        "row_identity": np.abs(eta_Q + z * qt_jj * eta_Qj).max(),
    }
    res = {k: float(v) for k, v in res.items()}
    qnorm = np.linalg.norm(Q, 2)
    scale = max(1.0, qnorm**2 * float(np.vdot(eta, eta).real))
    st_ok = 1.0 / abs(1.0 + eQje) <= abs(z) / pt.dist_to_R_plus * (1 + 1e-10)
    return IdentityReport(j, z, res, scale, bool(st_ok))
