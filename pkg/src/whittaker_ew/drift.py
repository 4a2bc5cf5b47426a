"""Finitely supported drift stencils, their Fourier symbol and limit coefficients.

A stencil stores the translation-invariant coefficients ``a(d) = A_{0,d}``;
the symbol is ``A_hat(k) = sum_d a(d) exp(i <d, k>)``. Near k = 0,

    A_hat(k) = -i <k, U> + <k, Q k> / 2 + O(|k|^3),

and V is the symmetric positive root of -Q^{-1}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WhittakerParams:
    D: float
    C: float
    B: float
    v: float


@dataclass(frozen=True)
class DriftStencil:
    offsets: np.ndarray  # (n, 2) int displacements d
    weights: np.ndarray  # (n,) real coefficients a(d)

    @classmethod
    def from_dict(cls, coeffs: dict) -> "DriftStencil":
        if not coeffs:
            return cls(np.zeros((0, 2), dtype=np.int64), np.zeros(0))
        offs = np.array([tuple(d) for d in coeffs], dtype=np.int64).reshape(-1, 2)
        w = np.array([float(coeffs[d]) for d in coeffs])
        return cls(offs, w)

    @property
    def coeffs(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(w) for (a, b), w in zip(self.offsets, self.weights)}

    @property
    def row_sum(self) -> float:
        return math.fsum(self.weights)


@dataclass(frozen=True)
class LimitCoefficients:
    U: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    detV: float

    @property
    def Vinv(self) -> np.ndarray:
        return np.linalg.inv(self.V)


@dataclass
class AssumptionReport:
    max_abs_Ahat0: float
    min_R_margin: float
    unique_zero_ok: bool
    Q_eigs: tuple[float, float]
    taylor_residual: float
    zero_margin: float = float("nan")
    row_sum_ok: bool = True
    max_R: float = float("nan")

    @property
    def checks(self) -> dict[str, bool]:
        return {
            "Ahat(0) = 0": self.max_abs_Ahat0 < 1e-12,
            "R <= 0 on grid": self.max_R <= 1e-12,
            "unique zero of R": self.unique_zero_ok,
            "Q negative definite": bool(max(self.Q_eigs) < 0),
            "Taylor residual finite": bool(np.isfinite(self.taylor_residual)),
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def build_whittaker_stencil(D: float, C: float) -> tuple[DriftStencil, WhittakerParams]:
    """Drift coefficients and noise level of the Whittaker driven SDEs."""
    D, C = float(D), float(C)
    if not D > 0:
        raise ValueError(f"D must be positive, got {D}")
    if not 0 < C < D:
        raise ValueError(f"need 0 < C < D, got C={C}, D={D}")
    B = D - C
    eB, eC, eD = math.exp(-B), math.exp(-C), math.exp(-D)
    a_diag_up = eB * (1 - eD) / (1 - eC)
    a_down = eC * (1 - eB) * (1 - eD) / (1 - eC) ** 2
    a_left = -eD * (1 - eB) / (1 - eC)
    a_self = -a_diag_up - a_down - a_left
    v = (1 - eB) * (1 - eD) / (1 - eC)
    stencil = DriftStencil.from_dict({
        (0, 0): a_self,
        (1, -1): a_diag_up,
        (0, -1): a_down,
        (-1, 0): a_left,
    })
    return stencil, WhittakerParams(D=D, C=C, B=B, v=v)


def a_hat(s: DriftStencil, k) -> np.ndarray | complex:
    """Symbol sum_d a(d) e^{i<d,k>}, vectorised over the leading axes of k."""
    k = np.asarray(k, dtype=np.float64)
    phase = k @ s.offsets.T.astype(np.float64)
    out = np.exp(1j * phase) @ s.weights if s.weights.size else np.zeros(k.shape[:-1], complex)
    return complex(out) if np.ndim(out) == 0 else out


def r_and_i(s: DriftStencil, k):
    """R(k) = 2 Re A_hat(k) and I(k) = 2 Im A_hat(k)."""
    a = a_hat(s, k)
    return 2 * np.real(a), 2 * np.imag(a)


def drift_velocity(s: DriftStencil) -> np.ndarray:
    # A_hat'(0) = i sum_d a(d) d, and U = i grad A_hat(0)
    return -(s.weights @ s.offsets.astype(np.float64))


def diffusion_form(s: DriftStencil) -> np.ndarray:
    # R(k) = -sum_d a(d) <d,k>^2 + O(|k|^4)
    d = s.offsets.astype(np.float64)
    return -np.einsum("n,ni,nj->ij", s.weights, d, d)


def validate_assumptions(s: DriftStencil, grid_n: int = 64) -> AssumptionReport:
    """Numerical check of the structural conditions on the drift symbol.

    Evaluates R on a grid_n x grid_n grid of [-pi, pi]^2 and on a refined
    polar set near the origin. A violated condition is flagged in the report.
    """
    if grid_n < 8:
        raise ValueError("grid_n must be >= 8")
    a0 = abs(a_hat(s, np.zeros(2)))

    g = -np.pi + 2 * np.pi * np.arange(grid_n + 1) / grid_n
    K = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    rho = np.geomspace(1e-3, 0.5, 40)
    theta = np.linspace(0, 2 * np.pi, 48, endpoint=False)
    near = (rho[:, None, None] * np.stack([np.cos(theta), np.sin(theta)], -1)[None]).reshape(-1, 2)
    K = np.concatenate([K, near])
    nrm2 = np.einsum("ij,ij->i", K, K)
    K = K[nrm2 > 0]
    nrm2 = nrm2[nrm2 > 0]
    R, _ = r_and_i(s, K)

    max_R = float(R.max()) if R.size else 0.0
    zero_margin = float(np.min(-R / nrm2))
    min_R_margin = max_R

    Q = diffusion_form(s)
    eigs = np.linalg.eigvalsh(Q)
    small = near[np.linalg.norm(near, axis=1) <= 0.1]
    Rs, _ = r_and_i(s, small)
    quad = np.einsum("ni,ij,nj->n", small, Q, small)
    taylor = float(np.max(np.abs(Rs - quad) / np.linalg.norm(small, axis=1) ** 3))

    return AssumptionReport(
        max_abs_Ahat0=float(a0),
        min_R_margin=min_R_margin,
        unique_zero_ok=bool(zero_margin > 1e-6),
        Q_eigs=(float(eigs[0]), float(eigs[1])),
        taylor_residual=taylor,
        zero_margin=zero_margin,
        row_sum_ok=abs(s.row_sum) < 1e-12,
        max_R=max_R,
    )


def limit_coefficients(s: DriftStencil) -> LimitCoefficients:
    U = drift_velocity(s)
    Q = diffusion_form(s)
    w, vecs = np.linalg.eigh(Q)
    if not np.all(w < 0):
        raise ValueError(f"Q is not negative definite (eigenvalues {w})")
    # V = (-Q^{-1})^{1/2}: same eigenvectors, eigenvalues (-w)^{-1/2}
    V = (vecs * (1.0 / np.sqrt(-w))) @ vecs.T
    V = 0.5 * (V + V.T)
    return LimitCoefficients(U=U, Q=Q, V=V, detV=float(np.linalg.det(V)))


def torus_matrix(s: DriftStencil, p) -> np.ndarray:
    """Dense drift matrix A_{x,y} = a(y - x) on the torus, for small m."""
    from .torus import site_indices

    n = p.size
    A = np.zeros((n, n))
    for d, w in zip(s.offsets, s.weights):
        cols = site_indices(p.sites + d, p)
        np.add.at(A, (np.arange(n), cols), w)
    return A
