"""Diffusive rescaling of the lattice field along time-adaptive floor meshes.

For a test function phi the rescaled field is

    X_t(phi) = int dz xi_{t/delta}( floor(U t/delta + delta^{-1/2} V^{-1} z) ) phi(z).

The field is constant on the preimage cells of the floor map, so X_t(phi)
is a finite weighted sum of site values; the weights are computed once per
(phi, t, delta) and reused across replicas.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drift import DriftStencil, a_hat, limit_coefficients
from .spectral_sim import (ModeState, RngStream, evaluate_dual, evolve_exact, weights_dual,
                           zero_modes)
from .torus import TorusParams, sparse_forward

DEFAULT_EPS = 1e-8


@dataclass(frozen=True)
class GaussianTestFunction:
    """phi(z) = sum_j a_j exp(-|z - c_j|^2 / (2 sigma_j^2))."""
    components: tuple = ()

    def __post_init__(self):
        comps = []
        for a, c, sig in self.components:
            if not sig > 0:
                raise ValueError(f"sigma must be positive, got {sig}")
            comps.append((float(a), (float(c[0]), float(c[1])), float(sig)))
        object.__setattr__(self, "components", tuple(comps))

    @classmethod
    def unit(cls, center=(0.0, 0.0), amplitude: float = 1.0, sigma: float = 1.0):
        return cls(((amplitude, center, sigma),))

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        out = np.zeros(z.shape[:-1])
        for a, c, sig in self.components:
            d = z - np.asarray(c)
            out = out + a * np.exp(-np.einsum("...i,...i->...", d, d) / (2 * sig * sig))
        return out

    def __add__(self, other: "GaussianTestFunction") -> "GaussianTestFunction":
        return GaussianTestFunction(self.components + other.components)

    def scaled(self, c: float) -> "GaussianTestFunction":
        return GaussianTestFunction(tuple((c * a, cc, s) for a, cc, s in self.components))

    @property
    def is_zero(self) -> bool:
        return all(a == 0 for a, _, _ in self.components)

    @property
    def mass(self) -> float:
        return math.fsum(a * 2 * math.pi * s * s for a, _, s in self.components)

    def peak(self) -> float:
        if not self.components:
            return 0.0
        centers = np.array([c for _, c, _ in self.components])
        return float(np.max(np.abs(self(centers))))

    def support_radius(self, eps: float = DEFAULT_EPS) -> float:
        """Radius around the origin outside which |phi| < eps * peak."""
        peak = self.peak()
        if peak == 0:
            return 0.0
        r = 0.0
        for a, c, s in self.components:
            if a == 0:
                continue
            ratio = abs(a) * len(self.components) / (eps * peak)
            reach = s * math.sqrt(2 * math.log(ratio)) if ratio > 1 else 0.0
            r = max(r, math.hypot(*c) + reach)
        return r

    def to_json(self) -> list:
        return [[a, list(c), s] for a, c, s in self.components]


@dataclass(frozen=True)
class RescaleScheme:
    delta: float
    U: np.ndarray
    V: np.ndarray
    torus: TorusParams
    stencil: DriftStencil
    v: float

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")

    @classmethod
    def from_stencil(cls, stencil: DriftStencil, v: float, delta: float, torus: TorusParams):
        lc = limit_coefficients(stencil)
        return cls(delta, lc.U, lc.V, torus, stencil, v)

    @property
    def Vinv(self) -> np.ndarray:
        return np.linalg.inv(self.V)

    @property
    def detV(self) -> float:
        return abs(float(np.linalg.det(self.V)))

    def shift(self, t: float) -> np.ndarray:
        return np.asarray(self.U, dtype=np.float64) * t / self.delta


@dataclass(frozen=True)
class WeightTable:
    points: np.ndarray
    weights: np.ndarray
    t: float
    delta: float
    total: float

    @property
    def entries(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(w) for (a, b), w in zip(self.points, self.weights)}

    def extent(self) -> int:
        if len(self.points) == 0:
            return 0
        return int(np.max(self.points.max(axis=0) - self.points.min(axis=0)))


def floor_mesh(z, t: float, sch: RescaleScheme) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    y = sch.shift(t) + (z @ sch.Vinv.T) / math.sqrt(sch.delta)
    return np.floor(y).astype(np.int64)


def modified_floor(z, t: float, delta: float, U) -> np.ndarray:
    """Nearest point of delta^{1/2} Z - delta^{-1/2} U_j t at or left of z_j, per axis."""
    z = np.asarray(z, dtype=np.float64)
    h = math.sqrt(delta)
    off = -np.asarray(U, dtype=np.float64) * t / h
    out = off + h * np.floor((z - off) / h)
    # guard against rounding at cell edges: keep out <= z < out + h in floating point
    out = np.where(z >= out + h, out + h, out)
    out = np.where(z < out, out - h, out)
    return out


def _gl01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1) / 2, w / 2


def _unit_square_rule(n: int):
    x, w = _gl01(n)
    X = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
    return X, np.outer(w, w).ravel()


def cell_weights(phi: GaussianTestFunction, t: float, sch: RescaleScheme,
                 eps: float = DEFAULT_EPS, quad_n: int = 8) -> WeightTable:
    """w_x = integral of phi over the cell {z : floor_mesh(z, t) = x}."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if quad_n < 2:
        raise ValueError("quad_n must be >= 2")
    h = math.sqrt(sch.delta)
    Vinv = sch.Vinv
    shift = sch.shift(t)
    peak = phi.peak()
    if peak == 0:
        return WeightTable(np.zeros((0, 2), dtype=np.int64), np.zeros(0), t, sch.delta, 0.0)

    cand = []
    for a, c, s in phi.components:
        if a == 0:
            continue
        ratio = abs(a) * len(phi.components) / (eps * peak)
        rho = s * math.sqrt(2 * math.log(max(ratio, 1.0))) + h * np.linalg.norm(sch.V, 2) * 2
        centre = shift + Vinv @ np.asarray(c) / h
        reach = rho * np.linalg.norm(Vinv, axis=1) / h
        lo = np.floor(centre - reach).astype(int) - 1
        hi = np.ceil(centre + reach).astype(int) + 1
        g1, g2 = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1),
                             indexing="ij")
        cand.append(np.column_stack([g1.ravel(), g2.ravel()]))
    pts = np.unique(np.concatenate(cand), axis=0)

    def to_z(w):
        return h * (w - shift) @ sch.V.T

    centre_vals = phi(to_z(pts + 0.5))
    pts = pts[np.abs(centre_vals) >= eps * peak]

    X, W = _unit_square_rule(quad_n)
    jac = sch.delta * sch.detV
    vals = np.empty(len(pts))
    chunk = max(1, 200_000 // len(W))
    for lo in range(0, len(pts), chunk):
        block = pts[lo:lo + chunk]
        z = to_z(block[:, None, :] + X[None, :, :])
        vals[lo:lo + chunk] = jac * (phi(z) @ W)
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    pts, vals = pts[order], vals[order]
    return WeightTable(pts, vals, t, sch.delta, math.fsum(vals))


def check_wrap_safe(tables, sch: RescaleScheme, t_max: float) -> None:
    """Raise if the weight support plus the drift displacement reaches half the torus."""
    pts = [tb.points for tb in tables if len(tb.points)]
    if not pts:
        return
    allp = np.concatenate(pts)
    diameter = int(np.max(allp.max(axis=0) - allp.min(axis=0)))
    disp = float(np.max(np.abs(sch.shift(t_max))))
    if diameter + disp >= sch.torus.m / 2:
        raise WrapSafetyError(
            f"torus m={sch.torus.m} too small: support diameter {diameter} + drift "
            f"displacement {disp:.2f} >= m/2")


class WrapSafetyError(ValueError):
    pass


def spectral_weight_transform(w: WeightTable, p: TorusParams) -> np.ndarray:
    """Dual vector g(k) = sum_x w_x conj(f_k(x)); X = sum_k y(k) g(k)."""
    return weights_dual(w.points, w.weights, p)


def x_delta_sample(sch: RescaleScheme, phi: GaussianTestFunction, times, rng: RngStream,
                   replicas: int | None = None, initial: ModeState | None = None,
                   eps: float = DEFAULT_EPS, quad_n: int = 8, check_wrap: bool = True):
    """Sample X_t(phi) at increasing times along one exactly simulated path.

    Returns an array of shape (len(times),), or (replicas, len(times)) when
    ``replicas`` is given, together with the advanced stream.
    """
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    p = sch.torus
    tables = [cell_weights(phi, t, sch, eps, quad_n) for t in times]
    if check_wrap and times:
        check_wrap_safe(tables, sch, times[-1])
    duals = [spectral_weight_transform(tb, p) for tb in tables]
    st = initial if initial is not None else zero_modes(p, replicas)
    out = []
    for t, g in zip(times, duals):
        target = t / sch.delta
        if target > st.t:
            st, rng = evolve_exact(st, target - st.t, sch.stencil, sch.v, rng)
        out.append(evaluate_dual(st, g))
    return np.stack(out, axis=-1), rng


def ic_field(psi: GaussianTestFunction, delta: float, p: TorusParams) -> np.ndarray:
    """mu(x) = psi(delta^{1/2} x) on the canonical sites."""
    return psi(math.sqrt(delta) * p.sites.astype(np.float64))


def y_delta(mu_delta, phi: GaussianTestFunction, t: float, sch: RescaleScheme,
            eps: float = DEFAULT_EPS, quad_n: int = 8, check_wrap: bool = True) -> float:
    """Deterministic part Y_t(phi) = sum_x w_x eta_{t/delta}(x) on the torus.

    ``mu_delta`` is either an array over the canonical sites or a callable on
    (n, 2) integer points.
    """
    p = sch.torus
    mu = mu_delta(p.sites) if callable(mu_delta) else np.asarray(mu_delta, dtype=np.float64)
    if mu.shape != (p.size,):
        raise ValueError("initial field must be given on all canonical sites")
    tb = cell_weights(phi, t, sch, eps, quad_n)
    if check_wrap:
        check_wrap_safe([tb], sch, t)
    keep = np.abs(mu) >= eps * np.max(np.abs(mu)) if mu.size else mu.astype(bool)
    if not keep.any() or len(tb.points) == 0:
        return 0.0
    mu_hat = sparse_forward(mu[keep], p.sites[keep], p)
    g = spectral_weight_transform(tb, p)
    T = t / sch.delta
    val = np.sum(np.exp(T * a_hat(sch.stencil, p.k)) * mu_hat * g)
    if abs(val.imag) > 1e-9 * max(1.0, abs(val.real)):
        raise ValueError("imaginary residue in mean functional")
    return float(val.real)


def s_delta(k, delta: float):
    """Sine-like symbol (e^{i delta^{1/2} k} - 1) / (i delta^{1/2})."""
    k = np.asarray(k, dtype=np.float64)
    h = math.sqrt(delta)
    if np.any(np.abs(k) * h > np.pi * (1 + 1e-15)):
        raise ValueError("k must lie in delta^{-1/2} [-pi, pi]")
    half = np.exp(0.5j * h * k)
    out = half * (half - np.conj(half)) / (1j * h)
    return complex(out) if out.ndim == 0 else out


def _as_sequence(f):
    if isinstance(f, dict):
        if not f:
            return 0, np.zeros(0)
        lo, hi = min(f), max(f)
        vals = np.zeros(hi - lo + 1)
        for x, val in f.items():
            vals[x - lo] = val
        return lo, vals
    lo, vals = f
    return int(lo), np.asarray(vals, dtype=np.float64)


def difference_1d(start: int, vals: np.ndarray, delta: float, n: int = 1):
    """Backward difference (f(x) - f(x-1)) / delta^{1/2}, applied n times."""
    h = math.sqrt(delta)
    for _ in range(n):
        vals = (np.append(vals, 0.0) - np.insert(vals, 0, 0.0)) / h
    return start, vals


def ibp_check_1d(f, k: float, delta: float, n: int):
    """Both sides of the summation-by-parts identity for a finitely supported f."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > 0 and k == 0:
        raise ValueError("k = 0 with n > 0 divides by S(0) = 0")
    start, vals = _as_sequence(f)
    h = math.sqrt(delta)
    x = start + np.arange(len(vals))
    lhs = np.sum(np.exp(1j * h * k * x) * vals)
    s2, d = difference_1d(start, vals, delta, n)
    x2 = s2 + np.arange(len(d))
    rhs_sum = np.sum(np.exp(1j * h * k * x2) * d)
    rhs = rhs_sum if n == 0 else (-1) ** n / (1j * s_delta(k, delta)) ** n * rhs_sum
    return complex(lhs), complex(rhs)


def partial_difference(phi, delta: float, j: int, n: int):
    """Callable z -> Delta_{delta,j}^n phi(z) with step delta^{1/2} along axis j."""
    h = math.sqrt(delta)
    e = np.zeros(2)
    e[j - 1] = h

    def g(z):
        z = np.asarray(z, dtype=np.float64)
        acc = np.zeros(z.shape[:-1])
        for ell in range(n + 1):
            acc = acc + (-1) ** ell * math.comb(n, ell) * phi(z - ell * e)
        return acc / h ** n
    return g


def _cell_sum(func, k, delta: float, t: float, U, reach: float, quad_n: int):
    h = math.sqrt(delta)
    k = np.asarray(k, dtype=np.float64)
    shift = np.asarray(U, dtype=np.float64) * t / delta
    lo = np.floor(-reach / h + shift).astype(int) - 1
    hi = np.ceil(reach / h + shift).astype(int) + 1
    g1, g2 = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()]).astype(np.float64)
    X, W = _unit_square_rule(quad_n)
    corner = h * (pts - shift)
    phase = np.exp(1j * ((pts - shift) * h) @ k)
    total = 0j
    chunk = max(1, 200_000 // len(W))
    for a in range(0, len(pts), chunk):
        z = corner[a:a + chunk, None, :] + h * X[None]
        cell = h * h * (func(z) @ W)
        total += np.sum(phase[a:a + chunk] * cell)
    return total


def ibp_check_2d(phi: GaussianTestFunction, t: float, delta: float, U, k, j: int, n: int,
                 quad: int = 8, eps: float = 1e-14):
    """Both sides of the two-dimensional semi-discrete integration by parts.

    The left side integrates phi against exp(i<delta^{1/2} k, floor(U t/delta +
    delta^{-1/2} z) - U t/delta>), the right side Delta_{delta,j}^n phi against
    exp(i<k, floor_{delta,t}(z)>) divided by (-i S_delta(k_j))^n. Both are
    evaluated cell by cell with Gauss-Legendre rules of order ``quad``.
    """
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    k = np.asarray(k, dtype=np.float64)
    if n > 0 and k[j - 1] == 0:
        raise ValueError("k_j = 0 with n > 0 divides by S(0) = 0")
    reach = phi.support_radius(eps) + (n + 2) * math.sqrt(delta)
    lhs = _cell_sum(phi, k, delta, t, U, reach, quad)
    rhs = _cell_sum(partial_difference(phi, delta, j, n), k, delta, t, U, reach, quad)
    if n > 0:
        rhs = (-1) ** n / (1j * s_delta(k[j - 1], delta)) ** n * rhs
    return complex(lhs), complex(rhs)
