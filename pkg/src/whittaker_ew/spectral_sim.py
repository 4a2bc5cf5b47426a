"""Exact-in-law simulation of the linear SDE system through its Fourier modes.

Each mode obeys the complex Ornstein-Uhlenbeck equation

    d y(k) = A_hat(k) y(k) dt + sqrt(v) dW_hat(k),

with W_hat(-k) = conj(W_hat(k)) because the driving noise is real. The
transition over a step dt is Gaussian with mean e^{dt A_hat(k)} y(k) and
E|eps(k)|^2 = v (e^{dt R(k)} - 1) / R(k), so the sampled law does not depend
on how a time interval is partitioned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .drift import DriftStencil, a_hat
from .torus import TorusParams, characters, fourier_forward, site_indices, sparse_forward

SMALL_R = 1e-10


def growth_factor(R, s):
    """(e^{sR} - 1) / R, with the removable point R = 0 handled by s (1 + sR/2)."""
    R = np.asarray(R, dtype=np.float64)
    small = np.abs(R) < SMALL_R
    safe = np.where(small, 1.0, R)
    out = np.where(small, s * (1 + s * R / 2), np.expm1(s * safe) / safe)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RngStream:
    """Counter-based normal stream keyed by (seed, replica).

    Draws for a given step come from a Philox generator whose key is
    (seed, replica) and whose counter starts at the step index, so a stream
    reproduces the same numbers whatever thread consumes it. The ``replica``
    key may address a block of replicas; row i of a block draw then belongs
    to replica ``block * block_size + i``.
    """
    seed: int
    replica: int = 0
    counter: int = 0

    def generator(self, step: int | None = None) -> np.random.Generator:
        step = self.counter if step is None else step
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.replica & 0xFFFFFFFFFFFFFFFF],
                       dtype=np.uint64)
        ctr = np.array([0, 0, 0, step], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=ctr))

    def normals(self, shape) -> tuple[np.ndarray, "RngStream"]:
        z = self.generator().standard_normal(shape)
        return z, replace(self, counter=self.counter + 1)


@dataclass(frozen=True)
class ModeState:
    """Fourier amplitudes at time t, ordered like ``torus.freq_index``.

    ``amps`` may carry a leading replica axis; the last axis is always the mode.
    """
    t: float
    amps: np.ndarray
    torus: TorusParams

    @property
    def pairing(self) -> np.ndarray:
        return self.torus.partner

    @property
    def self_paired(self) -> np.ndarray:
        return self.torus.self_paired


@dataclass
class FieldPath:
    times: list[float] = field(default_factory=list)
    states: list[ModeState] = field(default_factory=list)

    def append(self, st: ModeState) -> None:
        if self.times and not st.t > self.times[-1]:
            raise ValueError("times must be strictly increasing")
        if self.states and st.torus != self.states[0].torus:
            raise ValueError("inconsistent torus along path")
        self.times.append(st.t)
        self.states.append(st)


def init_modes(mu0, p: TorusParams, replicas: int | None = None) -> ModeState:
    """Initial amplitudes from a real field given on the canonical sites."""
    if callable(mu0):
        mu0 = np.array([mu0(x) for x in map(tuple, p.sites)], dtype=np.float64)
    amps = fourier_forward(np.asarray(mu0, dtype=np.float64), p)
    if replicas is not None:
        amps = np.broadcast_to(amps, (replicas, p.size)).copy()
    return ModeState(0.0, amps, p)


def zero_modes(p: TorusParams, replicas: int | None = None) -> ModeState:
    shape = (p.size,) if replicas is None else (replicas, p.size)
    return ModeState(0.0, np.zeros(shape, dtype=np.complex128), p)


def pair_noise(z: np.ndarray, var: np.ndarray, p: TorusParams) -> np.ndarray:
    """Map standard normals z (..., m^2) to paired complex increments.

    For a pair {k, -k} with k the lower index, Re and Im of eps(k) use z[k]
    and z[-k]; the partner gets the conjugate. Self-paired modes are real
    with the full variance.
    """
    partner = p.partner
    idx = np.arange(p.size)
    lead = idx < partner
    sp = p.self_paired
    eps = np.zeros(z.shape, dtype=np.complex128)
    sd = np.sqrt(var / 2)
    eps[..., lead] = sd[lead] * (z[..., lead] + 1j * z[..., partner[lead]])
    eps[..., partner[lead]] = np.conj(eps[..., lead])
    eps[..., sp] = np.sqrt(var[sp]) * z[..., sp]
    return eps


def transition(p: TorusParams, s: DriftStencil, dt: float):
    """Mode multipliers e^{dt A_hat(k)} and increment variances per unit v."""
    ah = a_hat(s, p.k)
    return np.exp(dt * ah), growth_factor(2 * ah.real, dt)


def evolve_exact(st: ModeState, dt: float, s: DriftStencil, v: float, rng: RngStream):
    """Advance every mode by dt using the exact Gaussian transition.

    Returns the new state and the advanced stream.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    p = st.torus
    mult, var = transition(p, s, dt)
    amps = st.amps * mult
    if v != 0:
        z, rng = rng.normals(st.amps.shape)
        amps = amps + pair_noise(z, v * var, p)
    return ModeState(st.t + dt, amps, p), rng


def simulate_path(st: ModeState, times, s: DriftStencil, v: float, rng: RngStream) -> FieldPath:
    path = FieldPath()
    for t in times:
        if t > st.t:
            st, rng = evolve_exact(st, t - st.t, s, v, rng)
        elif t < st.t:
            raise ValueError("times must be increasing")
        path.append(st)
    return path


def _real_part(vals: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(vals.real)))) if vals.size else 1.0
    resid = float(np.max(np.abs(vals.imag))) if vals.size else 0.0
    if resid > tol * scale:
        raise ValueError(f"imaginary residue {resid:.3e} exceeds tolerance; pairing broken")
    return vals.real


def field_at_sites(st: ModeState, sites, budget: int = 4_000_000) -> np.ndarray:
    """Real field values xi(x) = sum_k y(k) conj(f_k(x)) at the given sites."""
    p = st.torus
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, 2)
    chunk = max(1, budget // p.size)
    parts = []
    for lo in range(0, len(sites), chunk):
        chars = characters(p.freq_index, sites[lo:lo + chunk], p).conj() / p.m  # (K, S)
        parts.append(st.amps @ chars)
    if not parts:
        return np.zeros(st.amps.shape[:-1] + (0,))
    return _real_part(np.concatenate(parts, axis=-1))


def mean_field(mu0, t: float, s: DriftStencil, p: TorusParams, sites) -> np.ndarray:
    """Deterministic part eta_t(x) = sum_k e^{t A_hat(k)} mu_hat(k) conj(f_k(x))."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    st = init_modes(mu0, p)
    amps = st.amps * np.exp(t * a_hat(s, p.k))
    return field_at_sites(ModeState(t, amps, p), sites)


def covariance_spectrum(p: TorusParams, s: DriftStencil, v: float, s_time: float, t_time: float):
    """Per-mode E[y_s(k) conj(y_t(k))] for the stochastic part, 0 <= s <= t."""
    if s_time > t_time:
        raise ValueError("need s <= t")
    ah = a_hat(s, p.k)
    return v * np.exp((t_time - s_time) * np.conj(ah)) * growth_factor(2 * ah.real, s_time)


def analytic_covariance_torus(x, s_time: float, y, t_time: float, stencil: DriftStencil,
                              v: float, p: TorusParams) -> float:
    """Cov[xi_s(x); xi_t(y)] of the stochastic part on the finite torus."""
    if s_time > t_time:
        raise ValueError("need s <= t")
    if s_time < 0:
        raise ValueError("times must be nonnegative")
    d = np.asarray(x, dtype=np.int64) - np.asarray(y, dtype=np.int64)
    ah_neg = a_hat(stencil, -p.k)
    R = 2 * ah_neg.real
    phase = np.exp(1j * (p.k @ d.astype(np.float64)))
    terms = np.exp((t_time - s_time) * ah_neg) * phase * growth_factor(R, s_time)
    return v / p.size * math.fsum(terms.real)


def gauss_legendre_square(n: int, lo: float = -np.pi, hi: float = np.pi):
    x, w = np.polynomial.legendre.leggauss(n)
    x = lo + (hi - lo) * (x + 1) / 2
    w = w * (hi - lo) / 2
    K = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
    W = np.outer(w, w).ravel()
    return K, W


def analytic_covariance_infinite(x, s_time: float, y, t_time: float, stencil: DriftStencil,
                                 v: float, quad: int = 128, panels: int = 4) -> float:
    """Cov[xi^inf_s(x); xi^inf_t(y)] by tensor Gauss-Legendre over [-pi, pi]^2.

    ``quad`` is the per-panel order and ``panels`` the number of panels per axis.
    """
    if s_time > t_time:
        raise ValueError("need s <= t")
    edges = np.linspace(-np.pi, np.pi, panels + 1)
    x_all, w_all = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        xx, ww = np.polynomial.legendre.leggauss(quad)
        x_all.append(a + (b - a) * (xx + 1) / 2)
        w_all.append(ww * (b - a) / 2)
    g, w = np.concatenate(x_all), np.concatenate(w_all)
    K = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    W = np.outer(w, w).ravel()
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    ah_neg = a_hat(stencil, -K)
    vals = np.exp((t_time - s_time) * ah_neg) * np.exp(1j * (K @ d)) \
        * growth_factor(2 * ah_neg.real, s_time)
    return v / (2 * np.pi) ** 2 * math.fsum((W * vals.real))


def weights_dual(points, weights, p: TorusParams) -> np.ndarray:
    """Dual vector g(k) = sum_x w_x conj(f_k(x)), so sum_x w_x xi(x) = sum_k y(k) g(k)."""
    return np.conj(sparse_forward(np.asarray(weights, dtype=np.float64), points, p))


def evaluate_dual(st: ModeState, g: np.ndarray) -> np.ndarray:
    return _real_part(st.amps @ g)


def field_indices(sites, p: TorusParams) -> np.ndarray:
    return site_indices(sites, p)
