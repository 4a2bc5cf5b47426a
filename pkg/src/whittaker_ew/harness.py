"""Monte-Carlo estimation, convergence sweeps and validation runs.

Replicas are processed in fixed blocks of ``REPLICA_BLOCK``; block b draws
from the stream keyed by (seed, b), so the per-replica values, and anything
reduced from them in replica order, do not depend on the thread count.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .drift import (AssumptionReport, DriftStencil, a_hat, build_whittaker_stencil,
                    drift_velocity, limit_coefficients, validate_assumptions)
from .rescaled_field import (DEFAULT_EPS, GaussianTestFunction, RescaleScheme, WrapSafetyError,
                             cell_weights, check_wrap_safe, ibp_check_1d, ibp_check_2d,
                             ic_field, s_delta, spectral_weight_transform, y_delta)
from .she_limit import LimitSpec, y0_limit, z0_covariance
from .spectral_sim import (RngStream, covariance_spectrum, evaluate_dual, evolve_exact,
                           growth_factor, zero_modes)
from .torus import TorusParams

log = logging.getLogger(__name__)

REPLICA_BLOCK = 128
CSV_HEADER = ["delta", "m", "s", "t", "estimate", "stderr", "limit_value", "abs_err", "rel_err"]


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "torus": {"m", "m2"},
    "drift": {"D", "C"},
    "rescale": {"delta_list", "s", "t"},
    "test_function": {"components"},
    "ic": {"psi"},
    "mc": {"replicas", "seed"},
    "quadrature": {"quad_n", "eps", "radial_n", "angular_n"},
}


def _components(raw, where: str) -> GaussianTestFunction:
    try:
        comps = tuple((float(a), (float(c[0]), float(c[1])), float(s)) for a, c, s in raw)
        return GaussianTestFunction(comps)
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"{where}: expected [[amplitude, [c1, c2], sigma], ...]") from exc


@dataclass
class ExperimentConfig:
    D: float = 2.0
    C: float = 1.0
    m: int | None = None
    m2: int | None = None
    delta_list: list[float] = field(default_factory=lambda: [0.25, 0.1, 0.04])
    s: float = 0.5
    t: float = 0.5
    phi: GaussianTestFunction = field(default_factory=GaussianTestFunction.unit)
    psi: GaussianTestFunction | None = None
    replicas: int = 100_000
    seed: int = 0
    quad_n: int = 8
    eps: float = DEFAULT_EPS
    radial_n: int = 64
    angular_n: int = 32

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - set(_SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for sec, keys in _SCHEMA.items():
            body = raw.get(sec, {})
            if body is None:
                body = {}
            if not isinstance(body, dict):
                raise ConfigError(f"section {sec!r} must be an object")
            bad = set(body) - keys
            if bad:
                raise ConfigError(f"unknown keys in {sec!r}: {sorted(bad)}")
        cfg = cls()
        g = lambda sec: raw.get(sec) or {}
        try:
            dr = g("drift")
            cfg.D = float(dr.get("D", cfg.D))
            cfg.C = float(dr.get("C", cfg.C))
            to = g("torus")
            cfg.m = None if to.get("m") is None else int(to["m"])
            cfg.m2 = None if to.get("m2") is None else int(to["m2"])
            rs = g("rescale")
            cfg.delta_list = [float(d) for d in rs.get("delta_list", cfg.delta_list)]
            cfg.s = float(rs.get("s", cfg.s))
            cfg.t = float(rs.get("t", cfg.t))
            mc = g("mc")
            cfg.replicas = int(mc.get("replicas", cfg.replicas))
            cfg.seed = int(mc.get("seed", cfg.seed))
            qd = g("quadrature")
            cfg.quad_n = int(qd.get("quad_n", cfg.quad_n))
            cfg.eps = float(qd.get("eps", cfg.eps))
            cfg.radial_n = int(qd.get("radial_n", cfg.radial_n))
            cfg.angular_n = int(qd.get("angular_n", cfg.angular_n))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        tf = g("test_function")
        if "components" in tf:
            cfg.phi = _components(tf["components"], "test_function.components")
        psi = g("ic").get("psi")
        if psi not in (None, "zero"):
            cfg.psi = _components(psi, "ic.psi")
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def check(self) -> None:
        if not self.D > 0 or not 0 < self.C < self.D:
            raise ConfigError(f"need D > 0 and 0 < C < D, got D={self.D}, C={self.C}")
        if any(not 0 < d < 1 for d in self.delta_list):
            raise ConfigError("every delta must lie in (0, 1)")
        if any(b >= a for a, b in zip(self.delta_list, self.delta_list[1:])):
            raise ConfigError("delta_list must be decreasing")
        if self.s < 0 or self.t < self.s:
            raise ConfigError("need 0 <= s <= t")
        if self.replicas < 1:
            raise ConfigError("replicas must be positive")
        if self.quad_n < 2 or not self.eps > 0:
            raise ConfigError("need quad_n >= 2 and eps > 0")
        if self.m2 is not None and self.m is None:
            raise ConfigError("torus.m2 given without torus.m")
        if self.m is not None:
            if self.m2 is not None and abs(self.m2 / self.m - self.C / self.D) > 1e-12:
                raise ConfigError(f"torus m2/m = {self.m2}/{self.m} does not match C/D = {self.C}/{self.D}")
            try:
                self.torus()
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc

    def torus(self) -> TorusParams | None:
        """The configured torus; m2 follows C/D when only m is given."""
        if self.m is None:
            return None
        m2 = self.m2 if self.m2 is not None else round(self.m * self.C / self.D)
        return TorusParams(self.m, m2)

    def stencil(self) -> tuple[DriftStencil, float]:
        st, wp = build_whittaker_stencil(self.D, self.C)
        return st, wp.v


@dataclass(frozen=True)
class CovarianceEstimate:
    mean: float
    stderr: float
    n: int


@dataclass(frozen=True)
class SweepRow:
    delta: float
    m: int
    s: float
    t: float
    estimate: float
    stderr: float
    limit_value: float
    abs_err: float
    rel_err: float

    @classmethod
    def build(cls, delta, m, s, t, estimate, stderr, limit_value) -> "SweepRow":
        abs_err = abs(estimate - limit_value)
        rel_err = abs_err / abs(limit_value) if limit_value != 0 else (0.0 if abs_err == 0 else math.inf)
        return cls(delta, m, s, t, estimate, stderr, limit_value, abs_err, rel_err)


def tie_in_torus(m_min: float, C: float, D: float, floor_m: int | None = None) -> TorusParams:
    """Smallest m >= m_min (and >= floor_m) with m2/m = C/D when the ratio is a small fraction."""
    m_min = max(int(math.ceil(m_min)), floor_m or 0, 4)
    ratio = Fraction(C / D).limit_denominator(64)
    if abs(float(ratio) - C / D) < 1e-12:
        q = ratio.denominator
        m = q * int(math.ceil(m_min / q))
        return TorusParams(m, int(m * ratio))
    log.warning("C/D=%r is not a small rational; m2 rounded", C / D)
    m2 = min(max(1, round(m_min * C / D)), m_min - 1)
    return TorusParams(m_min, m2)


def wrap_safe_m(delta: float, t_max: float, U, Vinv, site_radius: float) -> float:
    """4 (|U|_inf t/delta + delta^{-1/2} * radius), radius already in z-units times ||V^{-1}||."""
    return 4 * (t_max / delta * float(np.max(np.abs(U))) + site_radius / math.sqrt(delta))


def choose_torus(cfg: ExperimentConfig, delta: float, t_max: float, with_ic: bool = False):
    stencil, _ = cfg.stencil()
    lc = limit_coefficients(stencil)
    radius = cfg.phi.support_radius(cfg.eps) * float(np.linalg.norm(lc.Vinv, 2))
    if with_ic and cfg.psi is not None:
        radius = max(radius, cfg.psi.support_radius(cfg.eps))
    return tie_in_torus(wrap_safe_m(delta, t_max, lc.U, lc.Vinv, radius), cfg.C, cfg.D, cfg.m)


def sample_covariance(a: np.ndarray, b: np.ndarray) -> CovarianceEstimate:
    """Unbiased sample covariance with stderr = std(centred products) / sqrt(n)."""
    n = len(a)
    if n < 2:
        raise ValueError("need at least two replicas")
    am = math.fsum(a.tolist()) / n
    bm = math.fsum(b.tolist()) / n
    prod = (a - am) * (b - bm)
    cov = math.fsum(prod.tolist()) / (n - 1)
    pm = math.fsum(prod.tolist()) / n
    var_p = math.fsum(((prod - pm) ** 2).tolist()) / (n - 1)
    return CovarianceEstimate(cov, math.sqrt(var_p / n), n)


def _reduced_coefficients(g: np.ndarray, var: np.ndarray, p: TorusParams) -> np.ndarray:
    """Real c with sum_k eps(k) g(k) = z @ c for eps = pair_noise(z, var, p)."""
    partner = p.partner
    lead = np.arange(p.size) < partner
    sp = p.self_paired
    c = np.zeros(p.size)
    sd = np.sqrt(var[lead] / 2)
    c[lead] = 2 * sd * g[lead].real
    c[partner[lead]] = -2 * sd * g[lead].imag
    c[sp] = np.sqrt(var[sp]) * g[sp].real
    return c


def sample_functionals(sch: RescaleScheme, duals, lattice_times, replicas: int, seed: int,
                       threads: int = 1, reduced: bool = True) -> np.ndarray:
    """Values sum_k y_T(k) g(k) for each (dual g, lattice time T), per replica.

    The path starts from zero and is advanced to each requested time in
    order, consuming one draw per step exactly as :func:`evolve_exact` does.
    With ``reduced`` the functionals are formed directly from those draws as
    real linear combinations instead of materialising the mode amplitudes;
    the law and the draws are the same. Returns (replicas, len(duals)).
    """
    p = sch.torus
    T = [float(x) for x in lattice_times]
    if any(b < a for a, b in zip(T, T[1:])) or (T and T[0] < 0):
        raise ValueError("lattice times must be nonnegative and nondecreasing")
    steps = []  # (start, end) of each evolution step
    cur = 0.0
    for x in T:
        if x > cur:
            steps.append((cur, x))
            cur = x
    coefs = None
    if reduced and steps:
        ah = a_hat(sch.stencil, p.k)
        R = 2 * ah.real
        coefs = []
        for a, b in steps:
            var = sch.v * growth_factor(R, b - a)
            cols = [_reduced_coefficients(g * np.exp((tj - b) * ah), var, p) if tj >= b
                    else np.zeros(p.size) for g, tj in zip(duals, T)]
            coefs.append(np.stack(cols, axis=-1))
    nblocks = -(-replicas // REPLICA_BLOCK)

    def run(b):
        size = min(REPLICA_BLOCK, replicas - b * REPLICA_BLOCK)
        rng = RngStream(seed, b)
        if coefs is not None:
            out = np.zeros((size, len(duals)))
            for c in coefs:
                z, rng = rng.normals((size, p.size))
                out += z @ c
            return out
        st = zero_modes(p, size)
        vals = []
        for g, tj in zip(duals, T):
            if tj > st.t:
                st, rng = evolve_exact(st, tj - st.t, sch.stencil, sch.v, rng)
            vals.append(evaluate_dual(st, g))
        return np.stack(vals, axis=-1)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, range(nblocks)))
    else:
        parts = [run(b) for b in range(nblocks)]
    return np.concatenate(parts)


def _scheme(cfg: ExperimentConfig, delta: float, torus: TorusParams, v: float | None = None):
    stencil, v0 = cfg.stencil()
    return RescaleScheme.from_stencil(stencil, v0 if v is None else v, delta, torus)


def estimate_x_covariance(cfg: ExperimentConfig, phi1, phi2, s: float, t: float, delta: float,
                          torus: TorusParams | None = None, v: float | None = None,
                          seed: int | None = None, replicas: int | None = None,
                          threads: int = 1) -> CovarianceEstimate:
    """Monte-Carlo Cov[X_s(phi1); X_t(phi2)] under zero initial data."""
    if s > t:
        raise ValueError("need s <= t")
    torus = torus or choose_torus(cfg, delta, t)
    sch = _scheme(cfg, delta, torus, v)
    tb1 = cell_weights(phi1, s, sch, cfg.eps, cfg.quad_n)
    tb2 = cell_weights(phi2, t, sch, cfg.eps, cfg.quad_n)
    check_wrap_safe([tb1, tb2], sch, t)
    g1 = spectral_weight_transform(tb1, torus)
    g2 = spectral_weight_transform(tb2, torus)
    vals = sample_functionals(sch, [g1, g2], [s / delta, t / delta],
                              replicas or cfg.replicas, cfg.seed if seed is None else seed,
                              threads)
    return sample_covariance(vals[:, 0], vals[:, 1])


def exact_x_covariance(cfg: ExperimentConfig, phi1, phi2, s: float, t: float, delta: float,
                       torus: TorusParams | None = None, v: float | None = None) -> float:
    """sum_{x,y} w_x w_y Cov_torus, evaluated mode by mode."""
    torus = torus or choose_torus(cfg, delta, t)
    sch = _scheme(cfg, delta, torus, v)
    g1 = spectral_weight_transform(cell_weights(phi1, s, sch, cfg.eps, cfg.quad_n), torus)
    g2 = spectral_weight_transform(cell_weights(phi2, t, sch, cfg.eps, cfg.quad_n), torus)
    c = covariance_spectrum(torus, sch.stencil, sch.v, s / delta, t / delta)
    return float(math.fsum((g1 * np.conj(g2) * c).real.tolist()))


def limit_spec(cfg: ExperimentConfig) -> LimitSpec:
    stencil, v = cfg.stencil()
    return LimitSpec.from_stencil(stencil, v)


def sweep_delta(cfg: ExperimentConfig, threads: int = 1):
    """Covariance of X at (s, t) for each delta against the limiting SHE value.

    Returns (rows, failures); a failing delta is logged and skipped.
    """
    rows, failures = [], []
    if not cfg.delta_list:
        return rows, failures
    limit = z0_covariance(cfg.phi, cfg.phi, cfg.s, cfg.t, limit_spec(cfg),
                          cfg.radial_n, cfg.angular_n)
    for delta in cfg.delta_list:
        try:
            torus = choose_torus(cfg, delta, cfg.t)
            est = estimate_x_covariance(cfg, cfg.phi, cfg.phi, cfg.s, cfg.t, delta, torus,
                                        threads=threads)
        except (WrapSafetyError, ValueError) as exc:
            log.error("delta=%g failed: %s", delta, exc)
            failures.append((delta, str(exc)))
            continue
        rows.append(SweepRow.build(delta, torus.m, cfg.s, cfg.t, est.mean, est.stderr, limit))
    return rows, failures


def sweep_mean(cfg: ExperimentConfig):
    """Deterministic part Y_t(phi) for each delta against |det V| mu0(P_t phi)."""
    rows, failures = [], []
    stencil, v = cfg.stencil()
    spec = LimitSpec.from_stencil(stencil, v)
    for delta in cfg.delta_list:
        try:
            torus = choose_torus(cfg, delta, cfg.t, with_ic=True)
            sch = RescaleScheme.from_stencil(stencil, v, delta, torus)
            if cfg.psi is None:
                est, lim = 0.0, 0.0
            else:
                est = y_delta(ic_field(cfg.psi, delta, torus), cfg.phi, cfg.t, sch,
                              cfg.eps, cfg.quad_n)
                lim = y0_limit(cfg.psi, cfg.phi, cfg.t, spec)
        except (WrapSafetyError, ValueError) as exc:
            log.error("delta=%g failed: %s", delta, exc)
            failures.append((delta, str(exc)))
            continue
        rows.append(SweepRow.build(delta, torus.m, cfg.t, cfg.t, est, 0.0, lim))
    return rows, failures


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([format_float(r.delta), str(r.m)] +
                   [format_float(getattr(r, k)) for k in CSV_HEADER[2:]])
    return buf.getvalue()


def delta_sweep_converges(rows, slack: float = 2.0, final_rel: float = 0.1) -> bool:
    """abs_err nonincreasing up to slack * stderr and a small final error."""
    if not rows:
        return True
    for a, b in zip(rows, rows[1:]):
        if b.abs_err > a.abs_err + slack * math.hypot(a.stderr, b.stderr):
            return False
    last = rows[-1]
    return last.abs_err <= max(final_rel * abs(last.limit_value), 4 * last.stderr)


@dataclass
class ValidationResult:
    report: AssumptionReport | None
    checks: dict[str, bool]
    details: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


IBP_K_VALUES = (-2.3, -0.9, 0.4, 1.7, 3.1)


def ibp_battery(U, seed: int = 2024):
    """Fixed battery of 1-D and 2-D integration-by-parts checks.

    Returns (max 1-D absolute defect, max 2-D relative defect).
    """
    rng = np.random.default_rng(seed)
    worst1 = 0.0
    for delta in (0.25, 0.1):
        for n in (1, 2):
            for k in IBP_K_VALUES:
                f = (-5, rng.standard_normal(11))
                lhs, rhs = ibp_check_1d(f, k, delta, n)
                worst1 = max(worst1, abs(lhs - rhs))
    phi = GaussianTestFunction.unit()
    worst2 = 0.0
    for j, k in ((1, (1.2, 0.0)), (2, (0.5, -1.1))):
        for n in (1, 2):
            lhs, rhs = ibp_check_2d(phi, 0.7, 0.25, U, k, j, n, quad=8)
            worst2 = max(worst2, abs(lhs - rhs) / abs(lhs))
    return worst1, worst2


def jordan_defect(samples: int = 10_000, seed: int = 7) -> float:
    """Largest violation of (2/pi)|k| <= |S_delta(k)| <= |k| over random (k, delta)."""
    rng = np.random.default_rng(seed)
    delta = rng.uniform(1e-6, 1.0, samples)
    k = rng.uniform(-np.pi, np.pi, samples) / np.sqrt(delta)
    S = np.abs(s_delta_vec(k, delta))
    low = 2 / np.pi * np.abs(k) - S
    high = S - np.abs(k)
    return float(max(low.max(), high.max()))


def s_delta_vec(k, delta):
    return np.array([s_delta(kk, dd) for kk, dd in zip(np.atleast_1d(k), np.atleast_1d(delta))])


def run_validate(cfg: ExperimentConfig | None = None, stencil: DriftStencil | None = None,
                 grid_n: int = 64) -> ValidationResult:
    if stencil is None:
        stencil, _ = (cfg or ExperimentConfig()).stencil()
    rep = validate_assumptions(stencil, grid_n)
    checks = dict(rep.checks)
    U = drift_velocity(stencil)
    w1, w2 = ibp_battery(U)
    jd = jordan_defect()
    checks["1-D summation by parts"] = w1 < 1e-10
    checks["2-D summation by parts"] = w2 < 1e-5
    checks["Jordan bounds"] = jd <= 1e-12
    return ValidationResult(rep, checks, {"ibp1d": w1, "ibp2d": w2, "jordan": jd})
