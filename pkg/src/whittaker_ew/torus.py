"""Skewed discrete torus R_m and its dual frequency set K_m.

R_m is Z^2 modulo the lattice spanned by (m, 0) and (-m2, m). Sites are
stored in the canonical parallelogram

    -m/2 <= x2 < m/2,   -m/2 - (m2/m) x2 <= x1 < m/2 - (m2/m) x2,

and frequencies by their integer indices (r1, r2), with

    k = (2 pi r1 / m, 2 pi (m2 r1 / m + r2) / m).

Fields on the torus are numpy arrays ordered like :func:`enumerate_sites`;
Fourier coefficients are arrays ordered like :func:`dual_frequencies`.
Characters are evaluated through the exact integer phase
``m^2 <k, x> / (2 pi)``, so equivalent sites give bitwise-equal values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple

import numpy as np


class Site(NamedTuple):
    x1: int
    x2: int


@dataclass(frozen=True)
class Frequency:
    r1: int
    r2: int
    k: tuple[float, float] = field(compare=False, hash=False)


def _lower(m: int) -> int:
    # smallest integer j with j >= -m/2
    return -(m // 2)


@dataclass(frozen=True)
class TorusParams:
    m: int
    m2: int

    def __post_init__(self):
        if int(self.m) != self.m or int(self.m2) != self.m2:
            raise ValueError("m and m2 must be integers")
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if not 0 < self.m2 < self.m:
            raise ValueError(f"need 0 < m2 < m, got m2={self.m2}, m={self.m}")

    @property
    def size(self) -> int:
        return self.m * self.m

    @cached_property
    def sites(self) -> np.ndarray:
        """(m^2, 2) int array of canonical sites, row-major in x2 then x1."""
        m, m2 = self.m, self.m2
        rows = []
        for x2 in range(_lower(m), _lower(m) + m):
            lo = _x1_lower(m, m2, x2)
            x1 = np.arange(lo, lo + m, dtype=np.int64)
            rows.append(np.column_stack([x1, np.full(m, x2, dtype=np.int64)]))
        return np.concatenate(rows)

    @cached_property
    def freq_index(self) -> np.ndarray:
        """(m^2, 2) int array of (r1, r2), row-major in r2 then r1."""
        r = np.arange(_lower(self.m), _lower(self.m) + self.m, dtype=np.int64)
        r2, r1 = np.meshgrid(r, r, indexing="ij")
        return np.column_stack([r1.ravel(), r2.ravel()])

    @cached_property
    def k(self) -> np.ndarray:
        """(m^2, 2) float array of the real frequency vectors."""
        return freq_vectors(self.freq_index, self)

    @cached_property
    def site_lookup(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.sites)}

    @cached_property
    def freq_lookup(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.freq_index)}

    @cached_property
    def partner(self) -> np.ndarray:
        """Index of the frequency -k reduced into K_m, for every k."""
        neg = reduce_frequency(-self.freq_index, self)
        look = self.freq_lookup
        return np.array([look[(int(a), int(b))] for a, b in neg], dtype=np.int64)

    @cached_property
    def self_paired(self) -> np.ndarray:
        return self.partner == np.arange(self.size)

    @cached_property
    def roots(self) -> np.ndarray:
        """e^{-2 pi i n / m^2} for n = 0, ..., m^2 - 1."""
        return np.exp(-2j * np.pi * np.arange(self.size) / self.size)


def _x1_lower(m: int, m2: int, x2: int) -> int:
    return math.ceil(Fraction(-m * m - 2 * m2 * x2, 2 * m))


def canonical_sites(x, p: TorusParams) -> np.ndarray:
    """Vectorised canonical representatives of integer points ``x`` (..., 2)."""
    x = np.asarray(x, dtype=np.int64)
    m, m2 = p.m, p.m2
    x1, x2 = x[..., 0], x[..., 1]
    q = np.floor_divide(x2 - _lower(m), m)
    x2 = x2 - q * m
    x1 = x1 + q * m2
    # lower x1 bound: ceil((-m^2 - 2 m2 x2) / (2m)) in exact integer arithmetic
    lo = -np.floor_divide(m * m + 2 * m2 * x2, 2 * m)
    x1 = lo + np.mod(x1 - lo, m)
    return np.stack([x1, x2], axis=-1)


def canonical_site(x, p: TorusParams) -> Site:
    """Canonical representative of the integer point ``x`` in R_m."""
    c = canonical_sites(np.asarray(x, dtype=np.int64), p)
    return Site(int(c[0]), int(c[1]))


def site_indices(x, p: TorusParams) -> np.ndarray:
    """Positions in :func:`enumerate_sites` order of arbitrary integer points."""
    c = canonical_sites(x, p)
    m = p.m
    row = c[..., 1] - _lower(m)
    lo = -np.floor_divide(m * m + 2 * p.m2 * c[..., 1], 2 * m)
    return row * m + (c[..., 0] - lo)


def equivalent(x, y, p: TorusParams) -> bool:
    """Brute-force free test of x ~ y: the difference lies in the relation lattice."""
    d1 = int(x[0]) - int(y[0])
    d2 = int(x[1]) - int(y[1])
    if d2 % p.m:
        return False
    j = d2 // p.m
    return (d1 + j * p.m2) % p.m == 0


def enumerate_sites(p: TorusParams) -> list[Site]:
    return [Site(int(a), int(b)) for a, b in p.sites]


def reduce_frequency(r, p: TorusParams) -> np.ndarray:
    """Reduce integer indices (..., 2) into the fundamental range of K_m.

    The dual relations are (r1, r2) ~ (r1 + m, r2 - m2) ~ (r1, r2 + m).
    """
    r = np.asarray(r, dtype=np.int64)
    m = p.m
    r1, r2 = r[..., 0], r[..., 1]
    q = np.floor_divide(r1 - _lower(m), m)
    r1 = r1 - q * m
    r2 = r2 + q * p.m2
    r2 = _lower(m) + np.mod(r2 - _lower(m), m)
    return np.stack([r1, r2], axis=-1)


def freq_vectors(r, p: TorusParams) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    m = p.m
    k1 = 2 * np.pi * r[..., 0] / m
    k2 = 2 * np.pi * (p.m2 * r[..., 0] / m + r[..., 1]) / m
    return np.stack([k1, k2], axis=-1)


def dual_frequencies(p: TorusParams) -> list[Frequency]:
    return [Frequency(int(a), int(b), (float(k[0]), float(k[1])))
            for (a, b), k in zip(p.freq_index, p.k)]


def phase_numerators(r, x, p: TorusParams) -> np.ndarray:
    """Integer n in [0, m^2) with <k, x> = 2 pi n / m^2, outer over r and x."""
    r = np.asarray(r, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    m, m2 = p.m, p.m2
    a = (r[:, 0] * m)[:, None] * x[None, :, 0]
    b = (m2 * r[:, 0] + m * r[:, 1])[:, None] * x[None, :, 1]
    return np.mod(a + b, m * m)


def characters(r, x, p: TorusParams) -> np.ndarray:
    """Matrix of e^{-i<k, x>} for frequency indices r (F, 2) and sites x (S, 2)."""
    return p.roots[phase_numerators(r, x, p)]


def basis(p: TorusParams) -> np.ndarray:
    """Matrix f_k(x) = e^{-i<k,x>}/m, rows indexed by k, columns by x."""
    return characters(p.freq_index, p.sites, p) / p.m


def fourier_forward(f, p: TorusParams) -> np.ndarray:
    """xi_hat(k) = sum_x xi(x) f_k(x) by direct summation."""
    f = np.asarray(f)
    if f.shape != (p.size,):
        raise ValueError(f"field must have shape ({p.size},), got {f.shape}")
    return basis(p) @ f


def fourier_inverse(coeffs, p: TorusParams) -> np.ndarray:
    """xi(x) = sum_k xi_hat(k) conj(f_k(x)) by direct summation."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape != (p.size,):
        raise ValueError(f"coefficients must have shape ({p.size},), got {coeffs.shape}")
    return basis(p).conj().T @ coeffs


def sparse_forward(values, points, p: TorusParams, budget: int = 4_000_000) -> np.ndarray:
    """Forward transform of a field given only on a few (possibly unreduced) points.

    Costs O(m^2 * len(points)); used when the field is supported on a small patch
    of a large torus.
    """
    values = np.asarray(values)
    points = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    out = np.zeros(p.size, dtype=np.complex128)
    if len(points) == 0:
        return out
    r = p.freq_index
    chunk = max(1, budget // len(points))
    for lo in range(0, p.size, chunk):
        out[lo:lo + chunk] = characters(r[lo:lo + chunk], points, p) @ values
    return out / p.m
