"""Per-frequency ODE systems and the brute-force reference propagators.

Everything downstream (zone-rate fits, representation identities, scattering)
is validated against the fundamental matrices integrated here with an
embedded Runge-Kutta pair (DOP853, PI step control) at tight tolerance.

Forms of the first-order system for a single frequency:

  diss_system   D_t U = [[i/(1+t), N/(1+t)], [(1+t)(xi^2+m)/N, i b]] U,
                U = (N/(1+t) u_hat, D_t u_hat)
  fuchs_form    (1+t) dU/dt = (A + R(t,xi)) U with constant
                A = [[-1, iN], [i m0/N, -b0]]
  hyp_system    D_t U = [[0, xi], [xi + m/xi, i b]] U,  U = (xi u_hat, D_t u_hat)

with D_t = -i d/dt.  The unweighted state X = (u_hat, u_hat') obeys
X' = [[0, 1], [-(xi^2+m), -b]] X; all weighted propagators are conjugations
of its fundamental matrix by diag(h, -i).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import zones
from .zones import ZoneConfig, sharp_weight

FORM_DISS = "diss_system"
FORM_FUCHS = "fuchs_form"
FORM_HYP = "hyp_system"

DEFAULT_RTOL = 1e-10  # relative, per unit log-time of the integration span


class StiffnessError(RuntimeError):
    def __init__(self, message, t=None, xi=None):
        super().__init__(f"{message} (t={t}, xi={xi})")
        self.t = t
        self.xi = xi


@dataclass(frozen=True)
class ModalSystem:
    model: object
    config: ZoneConfig
    xi_norm: float
    form: str = FORM_DISS

    def __post_init__(self):
        if self.form not in (FORM_DISS, FORM_FUCHS, FORM_HYP):
            raise ValueError(f"unknown system form {self.form!r}")
        if self.form == FORM_HYP and self.xi_norm == 0.0:
            raise ValueError("hyp_system is singular at xi = 0")


@dataclass
class FundamentalMatrix:
    """2x2 propagator E(t,s,xi) with provenance (oracle / representation / levinson)."""

    entries: np.ndarray
    span: tuple
    xi_norm: float
    provenance: str = "oracle"

    def norm(self):
        return spectral_norm(self.entries)

    def det(self):
        return np.linalg.det(self.entries)


@dataclass
class MicroEnergy:
    value: np.ndarray   # (h * u_hat, D_t u_hat)
    t: float
    xi_norm: float


def spectral_norm(mat):
    return float(np.linalg.norm(np.asarray(mat), ord=2))


def fuchs_constant_matrix(model, config):
    N = config.N
    return np.array([[-1.0, 1j * N], [1j * model.m0 / N, -model.b0]], dtype=complex)


def fuchs_remainder(model, config, t, xi_norm):
    N = config.N
    w = 1.0 + t
    r21 = 1j * (w * w * xi_norm ** 2 + (w * w * model.m(t) - model.m0)) / N
    r22 = model.b0 - w * model.b(t)
    return np.array([[0.0, 0.0], [r21, r22]], dtype=complex)


def system_matrix(sys, t):
    """Exact coefficient matrix of the selected form at time t (for D_t U = A U,
    or the full Fuchs matrix A + R for (1+t) dU/dt = (A+R) U)."""
    model, xi, N = sys.model, sys.xi_norm, sys.config.N
    b = float(model.b(t))
    m = float(model.m(t))
    w = 1.0 + t
    if sys.form == FORM_DISS:
        return np.array([[1j / w, N / w], [w * (xi ** 2 + m) / N, 1j * b]], dtype=complex)
    if sys.form == FORM_FUCHS:
        return fuchs_constant_matrix(model, sys.config) + fuchs_remainder(model, sys.config, t, xi)
    return np.array([[0.0, xi], [xi + m / xi, 1j * b]], dtype=complex)


def _ode_rhs(sys):
    if sys.form == FORM_FUCHS:
        return lambda t, y: (system_matrix(sys, t) @ y.reshape(2, 2) / (1.0 + t)).ravel()
    # D_t E = A E  <=>  E' = i A E
    return lambda t, y: (1j * system_matrix(sys, t) @ y.reshape(2, 2)).ravel()


def propagator_checkpoints(sys, s, times, rtol=DEFAULT_RTOL, atol=None):
    """E(t_i, s, xi) for all checkpoint times in one adaptive integration."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < s):
        raise ValueError("checkpoints must satisfy t >= s")
    atol = rtol * 1e-4 if atol is None else atol
    y0 = np.eye(2, dtype=complex).ravel()
    sol = solve_ivp(_ode_rhs(sys), (s, float(times[-1])), y0, method="DOP853",
                    t_eval=times, rtol=rtol, atol=atol, dense_output=False)
    if not sol.success:
        raise StiffnessError(sol.message, t=sol.t[-1] if sol.t.size else s, xi=sys.xi_norm)
    return sol.y.T.reshape(-1, 2, 2)


def integrate_fundamental(sys, s, t, tol=DEFAULT_RTOL, verify=False):
    """Reference oracle for E(t,s,xi); optional halved-tolerance cross-check
    at 10 log-spaced checkpoints (relative deviation recorded)."""
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    if t == s:
        return FundamentalMatrix(np.eye(2, dtype=complex), (s, t), sys.xi_norm)
    E = propagator_checkpoints(sys, s, [t], rtol=tol)[0]
    fm = FundamentalMatrix(E, (s, t), sys.xi_norm)
    if verify:
        pts = np.geomspace(max(s, 1e-3) + 1.0, t - s + max(s, 1e-3) + 1.0, 10) - 1.0 + s
        pts = np.clip(pts, s, t)
        coarse = propagator_checkpoints(sys, s, pts, rtol=tol)
        fine = propagator_checkpoints(sys, s, pts, rtol=tol / 2.0)
        dev = max(spectral_norm(a - b) / max(spectral_norm(b), 1e-300)
                  for a, b in zip(coarse, fine))
        fm.provenance = f"oracle(verified, dev={dev:.2e})"
    return fm


def check_cocycle(sys, s, r, t, tol=DEFAULT_RTOL):
    """|| E(t,r)E(r,s) - E(t,s) || / ||E(t,s)||."""
    if not s <= r <= t:
        raise ValueError("need s <= r <= t")
    Ets = integrate_fundamental(sys, s, t, tol).entries
    Etr = integrate_fundamental(sys, r, t, tol).entries
    Ers = integrate_fundamental(sys, s, r, tol).entries
    return spectral_norm(Etr @ Ers - Ets) / spectral_norm(Ets)


def liouville_modulus(sys, s, t):
    """Predicted |det E(t,s,xi)| from the trace of the generator."""
    model = sys.model
    lam_ratio = float(model.lam(s) / model.lam(t))
    if sys.form == FORM_HYP:
        return lam_ratio ** 2
    if sys.form in (FORM_DISS, FORM_FUCHS):
        return (1.0 + s) / (1.0 + t) * lam_ratio ** 2
    raise ValueError(sys.form)


# ---------------------------------------------------------------------------
# Unweighted scalar oracle, vectorised over frequencies
# ---------------------------------------------------------------------------

def _band_slices(xi):
    """Group frequency indices into octave bands so one adaptive integration
    serves modes with comparable oscillation rates."""
    order = np.argsort(xi)
    bands = []
    cur = [order[0]]
    for idx in order[1:]:
        lo = max(xi[cur[0]], 1e-12)
        if xi[idx] <= 2.0 * lo or xi[idx] < 1e-12:
            cur.append(idx)
        else:
            bands.append(np.array(cur))
            cur = [idx]
    bands.append(np.array(cur))
    return bands


def evolve_state(model, xi, u0, u1, times, rtol=DEFAULT_RTOL, atol=None, threads=1):
    """Evolve (u_hat, u_hat') for every frequency; returns arrays of shape
    (len(times), len(xi)).  Zero-data modes are skipped, live modes are
    normalised to unit initial size (linearity) so the absolute-error floor
    never swamps strongly decaying or widely scaled data."""
    xi = np.asarray(xi, dtype=float)
    u0 = np.asarray(u0, dtype=complex)
    u1 = np.asarray(u1, dtype=complex)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    atol = rtol * 1e-6 if atol is None else atol

    u_out = np.zeros((times.size, xi.size), dtype=complex)
    v_out = np.zeros_like(u_out)
    if float(times[-1]) == 0.0:
        u_out[:] = u0[None, :]
        v_out[:] = u1[None, :]
        return u_out, v_out
    live = np.flatnonzero((np.abs(u0) > 0) | (np.abs(u1) > 0))
    if live.size == 0:
        return u_out, v_out
    scale = np.maximum(np.abs(u0), np.abs(u1))

    def run_band(idx):
        xb = xi[idx]
        n = idx.size

        def rhs(t, y):
            u = y[:n]
            v = y[n:]
            mt = float(model.m(t))
            bt = float(model.b(t))
            return np.concatenate((v, -(xb ** 2 + mt) * u - bt * v))

        y0 = np.concatenate((u0[idx] / scale[idx], u1[idx] / scale[idx]))
        sol = solve_ivp(rhs, (0.0, float(times[-1])), y0, method="DOP853",
                        t_eval=times, rtol=rtol, atol=atol)
        if not sol.success:
            raise StiffnessError(sol.message, t=None, xi=float(xb.max()))
        return idx, sol.y[:n].T * scale[idx], sol.y[n:].T * scale[idx]

    bands = _band_slices(xi[live])
    jobs = [live[b] for b in bands]
    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_band, jobs))
    else:
        results = [run_band(j) for j in jobs]
    for idx, ub, vb in results:
        u_out[:, idx] = ub
        v_out[:, idx] = vb
    return u_out, v_out


def state_propagator_checkpoints(model, xi, times, rtol=DEFAULT_RTOL, s=0.0):
    """Fundamental matrix Phi(t,s) of X' = [[0,1],[-(xi^2+m),-b]] X at the
    checkpoint times; shape (len(times), 2, 2)."""
    times = np.atleast_1d(np.asarray(times, dtype=float))

    def rhs(t, y):
        mt = float(model.m(t))
        bt = float(model.b(t))
        P = y.reshape(2, 2)
        return np.vstack((P[1], -(xi ** 2 + mt) * P[0] - bt * P[1])).ravel()

    sol = solve_ivp(rhs, (float(s), float(times[-1])), np.eye(2, dtype=complex).ravel(),
                    method="DOP853", t_eval=times, rtol=rtol, atol=rtol * 1e-4)
    if not sol.success:
        raise StiffnessError(sol.message, t=None, xi=xi)
    return sol.y.T.reshape(-1, 2, 2)


def weighted_propagator(model, config, xi, times, rtol=DEFAULT_RTOL, s=0.0):
    """Cross-zone propagator of the micro-energy with the sharp weight
    h(t) = max(N/(1+t), xi): E(t,s) = T(t) Phi(t,s) T(s)^-1, T = diag(h, -i).

    Inside the slow zone this is exactly the diss_system propagator, beyond
    the boundary exactly the hyp_system one.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    Phi = state_propagator_checkpoints(model, xi, times, rtol=rtol, s=s)
    h_t = sharp_weight(config, times, xi)
    h_s = float(sharp_weight(config, s, xi))
    E = np.empty_like(Phi)
    E[:, 0, 0] = h_t / h_s * Phi[:, 0, 0]
    E[:, 0, 1] = 1j * h_t * Phi[:, 0, 1]
    E[:, 1, 0] = -1j / h_s * Phi[:, 1, 0]
    E[:, 1, 1] = Phi[:, 1, 1]
    return E


def propagator_norm_trace(model, config, xi, times, rtol=DEFAULT_RTOL):
    """||E(t,0,xi)|| of the sharp-weighted propagator at checkpoint times."""
    E = weighted_propagator(model, config, xi, times, rtol=rtol)
    return np.linalg.svd(E, compute_uv=False)[:, 0]


def scale_invariant_norm_traces(cells, config, xi, times, rtol=DEFAULT_RTOL):
    """||E(t,0,xi)|| for several scale-invariant (b0, m0) cells in one shared
    adaptive integration (all cells see the same oscillation rate).  Returns
    an array of shape (len(times), len(cells)).  Fast path for rate sweeps;
    the general per-model oracle is the reference it is checked against."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    b0s = np.array([c[0] for c in cells], dtype=float)
    m0s = np.array([c[1] for c in cells], dtype=float)
    nc = b0s.size

    def rhs(t, y):
        P = y.reshape(nc, 2, 2)
        out = np.empty_like(P)
        out[:, 0] = P[:, 1]
        w = 1.0 + t
        out[:, 1] = (-(xi ** 2 + m0s / w ** 2)[:, None] * P[:, 0]
                     - (b0s / w)[:, None] * P[:, 1])
        return out.ravel()

    y0 = np.broadcast_to(np.eye(2, dtype=complex), (nc, 2, 2)).ravel()
    sol = solve_ivp(rhs, (0.0, float(times[-1])), y0.copy(), method="DOP853",
                    t_eval=times, rtol=rtol, atol=rtol * 1e-4)
    if not sol.success:
        raise StiffnessError(sol.message, t=None, xi=xi)
    Phi = sol.y.T.reshape(times.size, nc, 2, 2)
    h_t = sharp_weight(config, times, xi)
    h_0 = float(sharp_weight(config, 0.0, xi))
    E = np.empty_like(Phi)
    E[..., 0, 0] = (h_t / h_0)[:, None] * Phi[..., 0, 0]
    E[..., 0, 1] = 1j * h_t[:, None] * Phi[..., 0, 1]
    E[..., 1, 0] = -1j / h_0 * Phi[..., 1, 0]
    E[..., 1, 1] = Phi[..., 1, 1]
    return np.linalg.svd(E, compute_uv=False)[..., 0]


def dump_trajectory(sys, s, t, path, n_checkpoints=64, rtol=DEFAULT_RTOL):
    """Write the propagator trajectory to CSV at log-spaced checkpoints:
    columns t, e11_re, e11_im, e12_re, e12_im, e21_re, e21_im, e22_re, e22_im."""
    times = np.geomspace(s + 1.0, t + 1.0, n_checkpoints) - 1.0
    times[0], times[-1] = s, t
    E = propagator_checkpoints(sys, s, times, rtol=rtol)
    with open(path, "w") as fh:
        fh.write("t,e11_re,e11_im,e12_re,e12_im,e21_re,e21_im,e22_re,e22_im\n")
        for ti, Ei in zip(times, E):
            cells = [format(ti, ".17g")]
            for a in range(2):
                for b in range(2):
                    cells += [format(Ei[a, b].real, ".17g"),
                              format(Ei[a, b].imag, ".17g")]
            fh.write(",".join(cells) + "\n")
    return path


def evolve_micro_energy(sys, u0_hat, u1_hat, t, rtol=DEFAULT_RTOL):
    """Micro-energy U(t,xi) from initial data (u0_hat, u1_hat); the weighted
    pair is formed from the unweighted state at output time, so the blended
    weight h never has to be differentiated inside the ODE."""
    model, config, xi = sys.model, sys.config, sys.xi_norm
    u, v = evolve_state(model, [xi], [u0_hat], [u1_hat], [t], rtol=rtol)
    h = float(zones.micro_weight(config, t, xi))
    value = np.array([h * u[0, 0], -1j * v[0, 0]], dtype=complex)
    return MicroEnergy(value=value, t=float(t), xi_norm=xi)
