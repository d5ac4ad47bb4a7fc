"""Experiment layer: energy traces, decay-exponent fits against the predicted
zone rates, sharpness limits, moment-condition experiments, the modified
scattering comparison, and the Lp-Lq rate predictor.

Norms of radial frequency profiles are continuum L2 norms of the underlying
field: ||f||^2 = (2 pi)^(-n) omega_n int |f(r)|^2 r^(n-1) dr with omega_n the
unit-sphere measure (2, 2 pi, 4 pi for n = 1, 2, 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import modal, zones
from .coeffs import REAL_LARGE, RegimeUnsupportedError, classify_regime

SURFACE_MEASURE = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}

FIT_TOLERANCE = 0.05
DEFAULT_WINDOW = (1e2, 1e4)


class ResolutionError(RuntimeError):
    """Frequency grid too coarse for a stable quadrature."""


class InvalidWindowError(ValueError):
    pass


class SupportError(ValueError):
    """Initial data violates a support precondition."""


class OutOfScopeError(ValueError):
    pass


class HorizonError(RuntimeError):
    def __init__(self, message, last_increment=None):
        super().__init__(message)
        self.last_increment = last_increment


# --------------------------------------------------------------------------
# Initial data on radial frequency grids
# --------------------------------------------------------------------------

def bump(y):
    """exp(-1/(1-y^2)) on |y| < 1, zero outside: smooth with exact support."""
    y = np.asarray(y, dtype=float)
    inside = np.abs(y) < 1.0
    out = np.zeros_like(y)
    with np.errstate(divide="ignore", over="ignore"):
        out[inside] = np.exp(-1.0 / (1.0 - y[inside] ** 2))
    return out


@dataclass(frozen=True)
class DataSpec:
    """Named radial initial-data profile for (u0_hat, u1_hat).

    kinds: gaussian(width), ring(center, width), moment(zero_order, support),
    file(path).  amp0/amp1 scale the profile into the two data slots.
    """

    kind: str
    width: float = 1.0
    center: float = 0.0
    zero_order: int = 0
    support: float = 1.0
    path: str = ""
    amp0: float = 1.0
    amp1: float = 0.5

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "gaussian":
            return np.exp(-((r / self.width) ** 2))
        if self.kind == "ring":
            return bump((r - self.center) / self.width)
        if self.kind == "moment":
            return r ** self.zero_order * bump(r / self.support)
        if self.kind == "file":
            data = np.loadtxt(self.path, delimiter=",", ndmin=2)
            return np.interp(r, data[:, 0], data[:, 1], left=0.0, right=0.0)
        raise ValueError(f"unknown data kind {self.kind!r}")

    def sample(self, r):
        prof = self.profile(r).astype(complex)
        return self.amp0 * prof, self.amp1 * prof

    def support_interval(self):
        if self.kind == "gaussian":
            return 0.0, 8.0 * self.width
        if self.kind == "ring":
            return max(self.center - self.width, 0.0), self.center + self.width
        if self.kind == "moment":
            return 0.0, self.support
        if self.kind == "file":
            data = np.loadtxt(self.path, delimiter=",", ndmin=2)
            return float(data[0, 0]), float(data[-1, 0])
        raise ValueError(self.kind)


def radial_grid(lo=1e-4, hi=64.0, n_points=256, refine=()):
    """Log-spaced base grid, optionally refined linearly over data supports."""
    pieces = [np.geomspace(lo, hi, n_points)]
    for (a, b, n) in refine:
        pieces.append(np.linspace(max(a, lo * 1e-3), b, n))
    grid = np.unique(np.concatenate(pieces))
    return grid[grid > 0]


def grid_for_data(spec, lo=1e-4, hi=64.0, n_points=256, n_refine=200):
    a, b = spec.support_interval()
    pad = 0.05 * (b - a)
    return radial_grid(lo, hi, n_points, refine=[(max(a - pad, lo), b + pad, n_refine)])


def radial_norm(values, r, n_dim):
    """Continuum L2 norm of a radial frequency profile."""
    w = SURFACE_MEASURE[n_dim] / (2.0 * math.pi) ** n_dim
    return math.sqrt(w * np.trapezoid(np.abs(values) ** 2 * r ** (n_dim - 1), r))


# --------------------------------------------------------------------------
# Energy traces and decay fits
# --------------------------------------------------------------------------

@dataclass
class EnergyTrace:
    times: np.ndarray
    values: np.ndarray      # micro-energy norm ||U(t, .)||
    u_over_1pt: np.ndarray  # ||u|| / (1+t)
    grad: np.ndarray        # || |xi| u_hat ||
    ut: np.ndarray          # || u_t_hat ||
    u_norm: np.ndarray      # ||u_hat||
    n_dim: int
    data_spec: DataSpec
    grid: np.ndarray


def _check_resolution(u0, u1, r, n_dim, tol=0.01):
    full = radial_norm(np.abs(u0) + np.abs(u1), r, n_dim)
    half = radial_norm((np.abs(u0) + np.abs(u1))[::2], r[::2], n_dim)
    if full == 0.0:
        return
    if abs(full - half) / full > tol:
        raise ResolutionError(
            f"half-grid norm deviates by {abs(full - half) / full:.1%}; refine the grid")


def energy_trace(model, config, data_spec, freq_grid, times, n_dim=1,
                 rtol=1e-10, threads=1):
    """Evolve every frequency with the reference oracle and collect the
    L2-over-frequency norms of the solution components."""
    r = np.asarray(freq_grid, dtype=float)
    times = np.asarray(times, dtype=float)
    u0, u1 = data_spec.sample(r)
    _check_resolution(u0, u1, r, n_dim)
    u, v = modal.evolve_state(model, r, u0, u1, times, rtol=rtol, threads=threads)

    values = np.empty(times.size)
    u_over = np.empty(times.size)
    grad = np.empty(times.size)
    ut = np.empty(times.size)
    u_norm = np.empty(times.size)
    for i, t in enumerate(times):
        h = zones.micro_weight(config, t, r)
        U = np.stack([h * u[i], -1j * v[i]])
        values[i] = math.sqrt(radial_norm(U[0], r, n_dim) ** 2
                              + radial_norm(U[1], r, n_dim) ** 2)
        u_norm[i] = radial_norm(u[i], r, n_dim)
        u_over[i] = u_norm[i] / (1.0 + t)
        grad[i] = radial_norm(r * u[i], r, n_dim)
        ut[i] = radial_norm(v[i], r, n_dim)
    return EnergyTrace(times=times, values=values, u_over_1pt=u_over, grad=grad,
                       ut=ut, u_norm=u_norm, n_dim=n_dim, data_spec=data_spec, grid=r)


@dataclass
class DecayFit:
    exponent: float
    window: tuple
    rms_residual: float
    predicted: float
    verdict: bool
    tolerance: float = FIT_TOLERANCE

    @property
    def decades(self):
        return math.log10(self.window[1] / self.window[0])


def fit_decay(times, values, window=DEFAULT_WINDOW, predicted=0.0,
              tol=FIT_TOLERANCE, one_sided=False):
    """Least-squares slope of ln(value) against ln(1+t) inside the window."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (times >= window[0]) & (times <= window[1])
    if mask.sum() < 4:
        raise InvalidWindowError("window contains fewer than 4 samples")
    if np.any(values[mask] <= 0.0):
        raise InvalidWindowError("non-positive values inside the fit window")
    x = np.log1p(times[mask])
    y = np.log(values[mask])
    slope, intercept = np.polyfit(x, y, 1)
    rms = float(np.sqrt(np.mean((y - slope * x - intercept) ** 2)))
    if one_sided:
        verdict = slope <= predicted + tol
    else:
        verdict = abs(slope - predicted) <= tol
    return DecayFit(exponent=float(slope), window=tuple(window), rms_residual=rms,
                    predicted=float(predicted), verdict=bool(verdict), tolerance=tol)


# --------------------------------------------------------------------------
# Sharpness of the energy decay
# --------------------------------------------------------------------------

@dataclass
class SharpnessReport:
    times: np.ndarray
    scaled_energy: np.ndarray   # lam(t)^2 (||grad u||^2 + ||u_t||^2)
    variation: float            # relative spread over the last decade
    limit: float
    passed: bool


def sharpness_limit(model, config, data_spec, freq_grid, horizon=1e4, n_dim=1,
                    rtol=1e-10, threads=1):
    """For data supported in |xi| > N the rescaled energy
    lam(t)^2 (||grad u||^2 + ||u_t||^2) must settle at a positive limit."""
    lo, _ = data_spec.support_interval()
    if lo <= config.N:
        raise SupportError("sharpness data must be supported in |xi| > N")
    r = np.asarray(freq_grid, dtype=float)
    u0, u1 = data_spec.sample(r)
    if np.any((r <= config.N) & ((np.abs(u0) > 0) | (np.abs(u1) > 0))):
        raise SupportError("sampled data leaks below the zone constant")
    times = np.unique(np.concatenate([[0.0], np.geomspace(1.0, horizon, 41)]))
    trace = energy_trace(model, config, data_spec, r, times, n_dim=n_dim,
                         rtol=rtol, threads=threads)
    lam = model.lam(times)
    scaled = lam ** 2 * (trace.grad ** 2 + trace.ut ** 2)
    last = times >= horizon / 10.0
    seg = scaled[last]
    variation = float((seg.max() - seg.min()) / seg.mean())
    limit = float(seg.mean())
    return SharpnessReport(times=times, scaled_energy=scaled, variation=variation,
                           limit=limit, passed=bool(variation < 0.01 and limit > 0.0))


# --------------------------------------------------------------------------
# Moment-condition experiments
# --------------------------------------------------------------------------

@dataclass
class MomentData:
    kappa: float
    kappa_prime: int
    zero_order: int
    spec: DataSpec
    weighted_integral: float    # int | |xi|^-kappa U(0,xi) |^2 xi^(n-1) dxi


@dataclass
class MomentComparison:
    generic_fit: DecayFit
    moment_fit: DecayFit
    moment_data: MomentData
    passed: bool


def moment_parameters(model, n_dim, slack=0.1):
    """kappa from 2 kappa = 1 + sqrt((b0-1)^2 - 4 m0) (strict inequality with
    a recorded slack when sigma > 1), the weight order kappa' and the Fourier
    zero order the data must carry."""
    cls = classify_regime(model)
    if cls.case != REAL_LARGE:
        raise RegimeUnsupportedError("moment improvement needs 4 m0 < b0(b0-2)")
    kappa = 0.5 * (1.0 + math.sqrt((model.b0 - 1.0) ** 2 - 4.0 * model.m0))
    if model.sigma > 1.0:
        kappa += slack
    kappa_prime = math.floor(kappa - n_dim / 2.0) + 1
    zero_order = 2 * math.ceil((kappa_prime + 1) / 2.0)
    return kappa, kappa_prime, zero_order


def moment_experiment(model, config, n_dim=1, window=DEFAULT_WINDOW,
                      rtol=1e-9, threads=1):
    """Generic low-frequency data decays at the slow-zone exponent Re(mu+);
    data whose Fourier transform vanishes to the required order at xi = 0
    recovers the oscillatory-zone rate -b0/2."""
    kappa, kappa_prime, zero_order = moment_parameters(model, n_dim)
    cls = classify_regime(model)
    N = config.N
    t_hi = window[1]

    # concentrated low-frequency bump: stays inside the slow zone through the
    # whole fit window, so the fit sees the pure slow-zone rate
    c = N / (5.0 * t_hi)
    generic = DataSpec(kind="ring", center=c, width=c / 2.0, amp0=1.0, amp1=0.5)
    momentful = DataSpec(kind="moment", zero_order=zero_order, support=N / 4.0,
                         amp0=1.0, amp1=0.5)

    times = np.geomspace(1.0, t_hi, 61)
    grid_g = grid_for_data(generic, lo=c / 50.0, hi=4.0 * N, n_points=128)
    grid_m = grid_for_data(momentful, lo=1e-5 * N, hi=4.0 * N, n_points=192)

    tr_g = energy_trace(model, config, generic, grid_g, times, n_dim, rtol, threads)
    tr_m = energy_trace(model, config, momentful, grid_m, times, n_dim, rtol, threads)
    fit_g = fit_decay(times, tr_g.values, window, predicted=cls.mu_plus.real)
    fit_m = fit_decay(times, tr_m.values, window, predicted=-model.b0 / 2.0)

    u0, u1 = momentful.sample(grid_m)
    h0 = zones.micro_weight(config, 0.0, grid_m)
    U0 = np.sqrt(np.abs(h0 * u0) ** 2 + np.abs(u1) ** 2)
    integrand = (grid_m ** (-kappa) * U0) ** 2 * grid_m ** (n_dim - 1)
    weighted = float(np.trapezoid(integrand, grid_m))
    mdata = MomentData(kappa=kappa, kappa_prime=kappa_prime, zero_order=zero_order,
                       spec=momentful, weighted_integral=weighted)
    return MomentComparison(generic_fit=fit_g, moment_fit=fit_m, moment_data=mdata,
                            passed=bool(fit_g.verdict and fit_m.verdict
                                        and math.isfinite(weighted)))


# --------------------------------------------------------------------------
# Modified scattering
# --------------------------------------------------------------------------

def free_micro_propagator(t, r):
    """Propagator of the free micro-energy (|xi| v_hat, D_t v_hat):
    [[cos, i sin], [i sin, cos]](t |xi|); unitary."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    ph = np.multiply.outer(t, r)
    out = np.empty(ph.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = out[..., 1, 1] = np.cos(ph)
    out[..., 0, 1] = out[..., 1, 0] = 1j * np.sin(ph)
    return out


def _check_scattering_regime(model):
    if model.sigma == 1.0:
        if model.b0 * (model.b0 - 2.0) > 4.0 * model.m0:
            raise RegimeUnsupportedError("need b0(b0-2) <= 4 m0")
    else:
        if not (model.b0 * (model.b0 - 2.0) <= 4.0 * model.m0 < (model.b0 - 1.0) ** 2):
            raise RegimeUnsupportedError(
                "sigma > 1 needs b0(b0-2) <= 4 m0 < (b0-1)^2")


def _basis_evolution(model, r, times, rtol):
    """Columns of the unweighted fundamental matrix Phi(t,0) for every mode."""
    r = np.asarray(r, dtype=float)
    ones = np.ones(r.size, dtype=complex)
    zero = np.zeros(r.size, dtype=complex)
    ua, va = modal.evolve_state(model, r, ones, zero, times, rtol=rtol)
    ub, vb = modal.evolve_state(model, r, zero, ones, times, rtol=rtol)
    return ua, va, ub, vb


def _wave_operator_samples(model, config, r, times, rtol=1e-9, basis=None):
    """W(t_j, xi) = lam(t_j) E_fr(t_j)^{-1} E(t_j, 0, xi) for every frequency,
    from two batched basis evolutions."""
    r = np.asarray(r, dtype=float)
    ua, va, ub, vb = _basis_evolution(model, r, times, rtol) if basis is None else basis
    h_t = zones.sharp_weight(config, times[:, None], r[None, :])
    h_0 = zones.sharp_weight(config, 0.0, r)
    E = np.empty((times.size, r.size, 2, 2), dtype=complex)
    E[..., 0, 0] = h_t / h_0 * ua
    E[..., 0, 1] = 1j * h_t * ub
    E[..., 1, 0] = -1j / h_0 * va
    E[..., 1, 1] = vb
    Efr_inv = free_micro_propagator(-times, r)
    lam = np.asarray(model.lam(times))
    W = lam[:, None, None, None] * np.matmul(Efr_inv, E)
    return W


@dataclass
class ScatteringOperator:
    frequencies: np.ndarray
    W: np.ndarray               # (n_freq, 2, 2) at the final doubling time
    converged_at: np.ndarray    # first doubling time below tol, per frequency
    last_increment: np.ndarray
    times: np.ndarray

    def sup_norm(self):
        return float(np.linalg.svd(self.W, compute_uv=False)[:, 0].max())


def scattering_operator(model, config, freq_samples, horizon=1e5, tol=1e-3,
                        rtol=1e-9, eps=1e-3):
    """W_plus(xi) = lim lam(t) E_fr(t,0,xi)^{-1} E(t,0,xi), evaluated at
    doubling times until Cauchy within tol; uniform only away from xi = 0, so
    samples below eps are rejected."""
    _check_scattering_regime(model)
    r = np.asarray(freq_samples, dtype=float)
    if np.any(r < eps):
        raise ValueError(f"samples must satisfy |xi| >= {eps}")
    times = 2.0 ** np.arange(0, int(math.floor(math.log2(horizon))) + 1)
    W = _wave_operator_samples(model, config, r, times, rtol=rtol)
    inc = np.linalg.norm(np.diff(W, axis=0), ord=2, axis=(2, 3))  # (nt-1, nr)
    conv = np.full(r.size, np.nan)
    for j in range(r.size):
        ok = np.flatnonzero(inc[:, j] < tol)
        if ok.size:
            conv[j] = times[ok[0] + 1]
    last = inc[-1]
    if np.any(np.isnan(conv)):
        worst = float(last.max())
        raise HorizonError(f"W(t) not Cauchy within tol={tol} by t={times[-1]:g} "
                           f"(last increment {worst:.3e})", last_increment=worst)
    return ScatteringOperator(frequencies=r, W=W[-1], converged_at=conv,
                              last_increment=last, times=times)


@dataclass
class ScatteringResidual:
    times: np.ndarray
    residual_dt: np.ndarray     # || lam(t) u_t - v_t ||
    residual_grad: np.ndarray   # || lam(t) |xi| u - |xi| v ||
    W_samples: np.ndarray
    w_increment: np.ndarray
    passed: bool


def scattering_residual(model, config, data_spec, freq_grid, horizon=1e4,
                        n_dim=1, rtol=1e-9, w_horizon_factor=4.0):
    """Evolve u with the oracle and v freely from V0 = W_plus U0; the rescaled
    derivative differences must trend down and end below 10% of their start."""
    _check_scattering_regime(model)
    r = np.asarray(freq_grid, dtype=float)
    u0, u1 = data_spec.sample(r)
    live = (np.abs(u0) > 0) | (np.abs(u1) > 0)
    r, u0, u1 = r[live], u0[live], u1[live]

    n_dbl = int(math.floor(math.log2(horizon)))
    times = 2.0 ** np.arange(0, n_dbl + 1)
    w_times = 2.0 ** np.arange(0, n_dbl + int(round(math.log2(w_horizon_factor))) + 1)
    basis = _basis_evolution(model, r, w_times, rtol)
    Wall = _wave_operator_samples(model, config, r, w_times, rtol=rtol, basis=basis)
    W_plus = Wall[-1]
    w_inc = np.linalg.norm(Wall[-1] - Wall[-2], ord=2, axis=(1, 2))

    h0 = zones.sharp_weight(config, 0.0, r)
    U0 = np.stack([h0 * u0, -1j * u1], axis=-1)
    V0 = np.einsum("rij,rj->ri", W_plus, U0)

    # u-evolution at the residual checkpoints, reusing the basis runs
    ua, va, ub, vb = basis
    nt = times.size
    u = ua[:nt] * u0 + ub[:nt] * u1
    v = va[:nt] * u0 + vb[:nt] * u1
    lam = np.asarray(model.lam(times))
    Efr = free_micro_propagator(times, r)
    V = np.einsum("trij,rj->tri", Efr, V0)
    v_t = 1j * V[..., 1]       # V2 = D_t v_hat = -i v_t
    grad_v = V[..., 0]         # V1 = |xi| v_hat

    res_dt = np.array([radial_norm(lam[i] * v[i] - v_t[i], r, n_dim)
                       for i in range(times.size)])
    res_grad = np.array([radial_norm(lam[i] * r * u[i] - grad_v[i], r, n_dim)
                         for i in range(times.size)])
    # residuals at the integration-noise floor count as converged
    floor = 1e-6 * (radial_norm(U0[:, 0], r, n_dim) + radial_norm(U0[:, 1], r, n_dim))

    def ok(res):
        if np.all(res <= floor):
            return True
        # monotone trend: decreasing along every other doubling time, which
        # absorbs a one-off transient phase alignment but not genuine growth
        trend = np.all(res[2:] <= res[:-2] * 1.02 + floor)
        return bool(trend and res[-1] <= 0.1 * res[0] + floor)

    return ScatteringResidual(times=times, residual_dt=res_dt, residual_grad=res_grad,
                              W_samples=W_plus, w_increment=w_inc,
                              passed=ok(res_dt) and ok(res_grad))


# --------------------------------------------------------------------------
# Lp-Lq prediction and the improved solution bound
# --------------------------------------------------------------------------

def lp_lq_rate(model, p, n_dim):
    """Predicted conjugate-exponent decay: total polynomial rate
    -b0/2 - (n-1)/2 (1/p - 1/q) and Sobolev regularity r = n (1/p - 1/q)."""
    if not 1.0 < p <= 2.0:
        raise ValueError("p must lie in (1, 2]")
    _check_scattering_regime(model)   # same hypothesis set
    q = p / (p - 1.0)
    gap = 1.0 / p - 1.0 / q
    rate = -model.b0 / 2.0 - (n_dim - 1) / 2.0 * gap
    return rate, n_dim * gap


def improved_u_bound(model, config, data_spec, freq_grid, n_dim=1,
                     window=DEFAULT_WINDOW, rtol=1e-9, threads=1):
    """Fit of ||u(t,.)||_{L2}: under the sigma = 1 hypotheses with
    delta = 1 + b0/2 + Re(mu+) > 0 the exponent must not exceed 1 + Re(mu+)."""
    if model.sigma != 1.0:
        raise OutOfScopeError("improved bound needs the sigma = 1 hypothesis set")
    cls = classify_regime(model)
    delta = 1.0 + model.b0 / 2.0 + cls.mu_plus.real
    if delta <= 0.0:
        raise OutOfScopeError(f"needs 1 + b0/2 + Re(mu+) > 0, got {delta:g}")
    times = np.geomspace(1.0, window[1], 61)
    trace = energy_trace(model, config, data_spec, freq_grid, times, n_dim,
                         rtol=rtol, threads=threads)
    return fit_decay(times, trace.u_norm, window, predicted=1.0 + cls.mu_plus.real,
                     one_sided=True)
