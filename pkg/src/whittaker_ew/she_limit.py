"""Mean, covariance and kernel of the limiting additive stochastic heat equation

    dX = (1/2) Laplacian X dt + sqrt(v |det V|) dW,   X_0 = |det V| mu^0,

evaluated on Gaussian-mixture test functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .drift import DriftStencil, limit_coefficients
from .rescaled_field import GaussianTestFunction


@dataclass(frozen=True)
class LimitSpec:
    v: float
    Q: np.ndarray
    V: np.ndarray
    detV: float

    @classmethod
    def from_stencil(cls, stencil: DriftStencil, v: float) -> "LimitSpec":
        lc = limit_coefficients(stencil)
        return cls(v, lc.Q, lc.V, abs(lc.detV))

    @property
    def sigma_eff_sq(self) -> float:
        return self.v * abs(self.detV)


def heat_semigroup(phi: GaussianTestFunction, t: float) -> GaussianTestFunction:
    """P_t phi for the standard two-dimensional Brownian semigroup."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    comps = []
    for a, c, s in phi.components:
        s2 = s * s
        comps.append((a * (s2 / (s2 + t)), c, math.sqrt(s2 + t)))
    return GaussianTestFunction(tuple(comps))


def _gauss_pair_integral(a1, c1, C1, a2, c2, C2) -> float:
    """int a1 exp(-(y-c1)' C1^{-1} (y-c1)/2) a2 exp(-(y-c2)' C2^{-1} (y-c2)/2) dy."""
    # each factor is a * 2 pi sqrt(det C) * N(c, C); the product integrates to N(c1 - c2; 0, C1 + C2)
    S = C1 + C2
    d = np.asarray(c1) - np.asarray(c2)
    dens = math.exp(-0.5 * d @ np.linalg.solve(S, d)) / (2 * math.pi * math.sqrt(np.linalg.det(S)))
    return a1 * a2 * (2 * math.pi) ** 2 * math.sqrt(np.linalg.det(C1) * np.linalg.det(C2)) * dens


def y0_limit(psi: GaussianTestFunction, phi: GaussianTestFunction, t: float,
             spec: LimitSpec) -> float:
    """int psi(V^{-1} y) (P_t phi)(y) dy in closed form."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    V = np.asarray(spec.V)
    VVt = V @ V.T
    total = []
    for a1, c1, s1 in psi.components:
        # psi(V^{-1} y) has mean V c1 and covariance s1^2 V V'
        for a2, c2, s2 in heat_semigroup(phi, t).components:
            total.append(_gauss_pair_integral(a1, V @ np.asarray(c1), s1 * s1 * VVt,
                                              a2, c2, s2 * s2 * np.eye(2)))
    return math.fsum(total)


def _time_factor(q, s, t):
    """(e^{-(t-s) q/2} - e^{-(t+s) q/2}) / q with the value s at q = 0."""
    q = np.asarray(q, dtype=np.float64)
    small = q < 1e-8
    safe = np.where(small, 1.0, q)
    full = np.exp(-(t - s) * safe / 2) * (-np.expm1(-s * safe)) / safe
    return np.where(small, s * (1 - t * q / 2), full)


def _fourier_pair(phi1, phi2, j):
    """Re[F(phi1)(j) conj(F(phi2)(j))] with F phi(j) = (1/2pi) int phi(y) e^{i<j,y>} dy."""
    n = np.einsum("...i,...i->...", j, j)
    out = np.zeros(j.shape[:-1])
    for a1, c1, s1 in phi1.components:
        for a2, c2, s2 in phi2.components:
            d = np.asarray(c1) - np.asarray(c2)
            out = out + a1 * a2 * (s1 * s2) ** 2 * np.cos(j @ d) * np.exp(-(s1 * s1 + s2 * s2) * n / 2)
    return out


def z0_covariance(phi1: GaussianTestFunction, phi2: GaussianTestFunction, s: float, t: float,
                  spec: LimitSpec, radial_n: int = 64, angular_n: int = 32) -> float:
    """Cov[Z0_s(phi1); Z0_t(phi2)] from the spectral representation.

    The frequency integral is done in the whitened variable j = V^{-1} k,
    where q(k) = -<k, Q k> = |j|^2 and dk = |det V| dj, with a polar rule:
    Gauss-Legendre panels in the radius (the panel count grows until the
    result is stable) and the trapezoid rule in the angle.
    """
    if s > t:
        raise ValueError("need s <= t")
    if s < 0:
        raise ValueError("times must be nonnegative")
    if s == 0:
        return 0.0
    smin = min(sig for _, _, sig in phi1.components + phi2.components)
    # Gaussian envelope exp(-smin^2 r^2) below 1e-16
    rmax = math.sqrt(math.log(1e16)) / smin
    theta = 2 * np.pi * np.arange(angular_n) / angular_n
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    def polar(panels, ang_dirs, ang_w):
        xr, wr = np.polynomial.legendre.leggauss(radial_n)
        edges = np.linspace(0, rmax, panels + 1)
        r = np.concatenate([a + (b - a) * (xr + 1) / 2 for a, b in zip(edges[:-1], edges[1:])])
        w = np.concatenate([wr * (b - a) / 2 for a, b in zip(edges[:-1], edges[1:])])
        j = r[:, None, None] * ang_dirs[None]
        f = _fourier_pair(phi1, phi2, j) * _time_factor(r * r, s, t)[:, None]
        return math.fsum(((f @ ang_w) * r * w).tolist())

    ang_w = np.full(angular_n, 2 * np.pi / angular_n)
    prev = polar(1, dirs, ang_w)
    panels = 2
    while True:
        cur = polar(panels, dirs, ang_w)
        if abs(cur - prev) <= 1e-13 * max(abs(cur), 1e-300) or panels >= 64:
            break
        prev, panels = cur, panels * 2
    # centres not at the origin make the angular integrand oscillate; refine until stable
    n_ang = angular_n
    while n_ang < 4096:
        th2 = 2 * np.pi * np.arange(2 * n_ang) / (2 * n_ang)
        d2 = np.stack([np.cos(th2), np.sin(th2)], axis=-1)
        nxt = polar(panels, d2, np.full(2 * n_ang, np.pi / n_ang))
        done = abs(nxt - cur) <= 1e-13 * max(abs(nxt), 1e-300)
        cur, n_ang = nxt, 2 * n_ang
        if done:
            break
    return spec.v * abs(spec.detV) * cur


def z0_covariance_kernel(phi1: GaussianTestFunction, phi2: GaussianTestFunction, s: float,
                         t: float, spec: LimitSpec) -> float:
    """sigma_eff^2 int_0^s dr int int phi1(x) phi2(y) p_{s+t-2r}(x-y) dx dy.

    The space integrals are Gaussian convolutions; the remaining time
    integral of exp(-d^2/(2S))/S over S = sigma1^2 + sigma2^2 + s + t - 2r
    reduces to exponential integrals.
    """
    if s > t:
        raise ValueError("need s <= t")
    if s == 0:
        return 0.0
    acc = []
    for a1, c1, s1 in phi1.components:
        for a2, c2, s2 in phi2.components:
            base = s1 * s1 + s2 * s2
            lo, hi = base + t - s, base + t + s
            d2 = float(np.sum((np.asarray(c1) - np.asarray(c2)) ** 2))
            pref = a1 * a2 * (2 * math.pi) ** 2 * (s1 * s2) ** 2 / (2 * math.pi)
            if d2 == 0:
                r_int = 0.5 * math.log(hi / lo)
            else:
                r_int = 0.5 * (special.exp1(d2 / (2 * hi)) - special.exp1(d2 / (2 * lo)))
            acc.append(pref * r_int)
    return spec.sigma_eff_sq * math.fsum(acc)


def heat_kernel(x, tau):
    """Standard two-dimensional heat kernel p_tau(x) = exp(-|x|^2/(2 tau)) / (2 pi tau)."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.sum(x * x, axis=-1) / (2 * tau)) / (2 * math.pi * tau)


def she_kernel(x, s: float, y, t: float, spec: LimitSpec) -> float:
    """Covariance kernel sigma_eff^2 int_0^{min(s,t)} p_{s+t-2r}(x - y) dr."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    if s == t and not np.any(d):
        raise ValueError("kernel diverges on the diagonal")
    lo = min(s, t)
    if lo <= 0:
        return 0.0
    val, _ = integrate.quad(lambda r: float(heat_kernel(d, s + t - 2 * r)), 0.0, lo,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return spec.sigma_eff_sq * val


def she_kernel_equal_time(x, y, t: float, spec: LimitSpec) -> float:
    """(sigma_eff^2 / 4 pi) E1(|x - y|^2 / (4 t)), the equal-time kernel."""
    d2 = float(np.sum((np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)) ** 2))
    if d2 == 0:
        raise ValueError("kernel diverges on the diagonal")
    if t <= 0:
        return 0.0
    return spec.sigma_eff_sq / (4 * math.pi) * float(special.exp1(d2 / (4 * t)))
