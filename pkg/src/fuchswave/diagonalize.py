"""Oscillatory-zone diagonalization hierarchy.

Starting from D_t U = A(t,xi) U with A = [[0, xi], [xi + m/xi, i b]], the
constant rotation M = (1/sqrt2)[[1,-1],[1,1]] produces

    D_t V = (D + B + C) V,  D = diag(xi, -xi),
    B = (i b/2) ones,  C = (m/(2 xi)) [[1,-1],[1,-1]].

Each sweep k adds a correction N^(k) and a diagonal part F^(k-1) so that

    B^(k) = (D_t - D - B - C) N_k - N_k (D_t - D - F_{k-1}),
    N_k = I + sum N^(j),  F_{k-1} = sum F^(j),

improves one order in both variables.  The commutator identity
[D, N^(1)] + B = F^(0) forces F^(0) = diag B = (i b/2) I and

    N^(1) = (i b / (4 xi)) [[0, -1], [1, 0]],

and for k >= 2 the identity forces F^(k-1) = -diag B^(k-1) and off-diagonal
entries N^(k)_12 = B^(k-1)_12/(2 xi), N^(k)_21 = -B^(k-1)_21/(2 xi).
With R_k = -N_k^{-1} B^(k) the transformed unknown V_k = N_k^{-1} V solves
D_t V_k = (D + F_{k-1} + R_k) V_k, whose propagator factors as
(lam(s)/lam(t)) E_0(t,s,xi) Q_k(t,s,xi) with unitary E_0 and Q_k given by a
Peano-Baker series.  Transforming back,

    E(t,s,xi) = (lam(s)/lam(t)) M N_k(t) E_0(t,s) Q_k(t,s) N_k(s)^{-1} M^{-1}

is an exact identity, checked against the direct oracle.

Derivatives feeding the recursion are exact jets of the stored evaluables,
never finite differences: the recursion nests k derivative levels and FD
noise would compound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, simpson, solve_ivp

from .modal import FundamentalMatrix, spectral_norm
from .zones import theta

SQRT2 = math.sqrt(2.0)
M_ROT = np.array([[1.0, -1.0], [1.0, 1.0]]) / SQRT2
M_ROT_INV = np.array([[1.0, 1.0], [-1.0, 1.0]]) / SQRT2


class KTooLargeError(ValueError):
    """Requested sweep count exceeds the coefficient smoothness budget."""


class ZoneConstantError(RuntimeError):
    """N_k is not safely invertible at the requested point."""


class HorizonError(RuntimeError):
    pass


# --- jet-matrix helpers: arrays of shape (order+1, 2, 2, nt) ---------------

def _jm_mul(A, B):
    r = A.shape[0] - 1
    out = np.zeros_like(A)
    for k in range(r + 1):
        for j in range(k + 1):
            out[k] += math.comb(k, j) * np.einsum("ab...,bc...->ac...", A[j], B[k - j])
    return out


def _jm_const_mul(Mat, A, side="left"):
    if side == "left":
        return np.einsum("ab,kbc...->kac...", Mat, A)
    return np.einsum("kab...,bc->kac...", A, Mat)


@dataclass(frozen=True)
class SymbolMatrix:
    """Matrix amplitude with claimed orders: ||D_t^k D_xi^a eval|| <=
    C |xi|^(m1-a) (1+t)^(-m2-k) on the oscillatory zone."""

    eval: callable                 # (t, xi) -> (2,2) complex (t may be a vector)
    jet: callable                  # (t, xi, order) -> (order+1, 2, 2, nt)
    order: tuple                   # (m1, m2)
    smoothness: int
    name: str = ""


class _StageEval:
    """Recursion evaluator at fixed xi, vectorised over a time grid."""

    def __init__(self, model, xi, t):
        self.model = model
        self.xi = float(xi)
        self.t = np.atleast_1d(np.asarray(t, dtype=float))
        self.D = np.array([[xi, 0.0], [0.0, -xi]], dtype=complex)
        self._cache = {}

    def _b(self, order):
        key = ("b", order)
        if key not in self._cache:
            self._cache[key] = self.model.b_jet(self.t, order).astype(complex)
        return self._cache[key]

    def _m(self, order):
        key = ("m", order)
        if key not in self._cache:
            self._cache[key] = self.model.m_jet(self.t, order).astype(complex)
        return self._cache[key]

    def B(self, order):
        ones = np.ones((2, 2))
        return 0.5j * self._b(order)[:, None, None, :] * ones[None, :, :, None]

    def C(self, order):
        sign = np.array([[1.0, -1.0], [1.0, -1.0]])
        return self._m(order)[:, None, None, :] * sign[None, :, :, None] / (2.0 * self.xi)

    def F_part(self, j, order):
        key = ("F", j, order)
        if key in self._cache:
            return self._cache[key]
        if j == 0:
            b = self._b(order)
            out = np.zeros((order + 1, 2, 2, self.t.size), dtype=complex)
            out[:, 0, 0, :] = 0.5j * b
            out[:, 1, 1, :] = 0.5j * b
        else:
            Bk = self.B_part(j, order)
            out = np.zeros_like(Bk)
            out[:, 0, 0, :] = -Bk[:, 0, 0, :]
            out[:, 1, 1, :] = -Bk[:, 1, 1, :]
        self._cache[key] = out
        return out

    def N_part(self, j, order):
        key = ("N", j, order)
        if key in self._cache:
            return self._cache[key]
        if j == 1:
            b = self._b(order)
            out = np.zeros((order + 1, 2, 2, self.t.size), dtype=complex)
            out[:, 0, 1, :] = -0.25j * b / self.xi
            out[:, 1, 0, :] = 0.25j * b / self.xi
        else:
            Bk = self.B_part(j - 1, order)
            out = np.zeros_like(Bk)
            out[:, 0, 1, :] = Bk[:, 0, 1, :] / (2.0 * self.xi)
            out[:, 1, 0, :] = -Bk[:, 1, 0, :] / (2.0 * self.xi)
        self._cache[key] = out
        return out

    def N_total(self, k, order):
        out = np.zeros((order + 1, 2, 2, self.t.size), dtype=complex)
        out[0, 0, 0, :] = 1.0
        out[0, 1, 1, :] = 1.0
        for j in range(1, k + 1):
            out += self.N_part(j, order)
        return out

    def F_total(self, k_minus_1, order):
        out = np.zeros((order + 1, 2, 2, self.t.size), dtype=complex)
        for j in range(0, k_minus_1 + 1):
            out += self.F_part(j, order)
        return out

    def B_part(self, k, order):
        """B^(k) from the defining operator identity, exact to jet order."""
        key = ("Bk", k, order)
        if key in self._cache:
            return self._cache[key]
        Nk1 = self.N_total(k, order + 1)
        Nk = Nk1[: order + 1]
        dt_Nk = -1j * Nk1[1:]
        comm = _jm_const_mul(self.D, Nk, "left") - _jm_const_mul(self.D, Nk, "right")
        BC = _jm_mul(self.B(order) + self.C(order), Nk)
        NF = _jm_mul(Nk, self.F_total(k - 1, order))
        out = dt_Nk - comm - BC + NF
        self._cache[key] = out
        return out


@dataclass
class DiagonalizationStage:
    """The tuple (N_k, F_{k-1}, B^(k), R_k) of the k-th sweep, as evaluable
    matrix functions with symbol-order metadata."""

    model: object
    config: object
    k: int
    N_parts: list
    F_parts: list
    B_k: SymbolMatrix

    def _ev(self, t, xi):
        return _StageEval(self.model, xi, t)

    def N_total(self, t, xi):
        out = self._ev(t, xi).N_total(self.k, 0)[0]
        return np.moveaxis(out, -1, 0) if np.ndim(t) else out[..., 0]

    def N_total_inv(self, t, xi):
        return _inv2(self.N_total(t, xi))

    def F_sum(self, t, xi):
        out = self._ev(t, xi).F_total(self.k - 1, 0)[0]
        return np.moveaxis(out, -1, 0) if np.ndim(t) else out[..., 0]

    def B_k_at(self, t, xi):
        out = self._ev(t, xi).B_part(self.k, 0)[0]
        return np.moveaxis(out, -1, 0) if np.ndim(t) else out[..., 0]

    def remainder(self, t, xi):
        """R_k = -N_k^{-1} B^(k)."""
        N = self.N_total(t, xi)
        B = self.B_k_at(t, xi)
        return -np.matmul(_inv2(N), B)

    def q_generator(self, t, xi):
        """F_{k-1} - F^(0) + R_k, the generator driving Q_k before phase
        conjugation; vectorised over t."""
        ev = self._ev(t, xi)
        F_extra = ev.F_total(self.k - 1, 0)[0] - ev.F_part(0, 0)[0]
        N = ev.N_total(self.k, 0)[0]
        B = ev.B_part(self.k, 0)[0]
        G = np.moveaxis(F_extra, -1, 0) - np.matmul(_inv2(np.moveaxis(N, -1, 0)),
                                                    np.moveaxis(B, -1, 0))
        return G if np.ndim(t) else G[0]

    def n_k_inverse_ok_from(self, candidates=None):
        """Minimal sampled zone constant making N_k safely invertible."""
        return min_zone_constant(self, candidates=candidates)

    def operator_identity_residual(self, t, xi, h=None):
        """Defect of (D_t - D - B - C) N_k - N_k (D_t - D - F_{k-1}) - B^(k)
        with D_t N_k re-evaluated by Richardson finite differences, as an
        independent check on the jet arithmetic."""
        h = 1e-4 * (1.0 + t) if h is None else h
        ev = self._ev(t, xi)
        D = ev.D

        def nk(tau):
            e = _StageEval(self.model, xi, tau)
            return e.N_total(self.k, 0)[0][..., 0]

        d1 = (8 * (nk(t + h) - nk(t - h)) - (nk(t + 2 * h) - nk(t - 2 * h))) / (12 * h)
        dtN = -1j * d1
        Nk = nk(t)
        Bv = ev.B(0)[0][..., 0]
        Cv = ev.C(0)[0][..., 0]
        Fv = ev.F_total(self.k - 1, 0)[0][..., 0]
        Bk = ev.B_part(self.k, 0)[0][..., 0]
        lhs = dtN - (D @ Nk - Nk @ D) - (Bv + Cv) @ Nk + Nk @ Fv
        return spectral_norm(lhs - Bk)


def _inv2(M):
    """Inverse of (possibly stacked) 2x2 matrices."""
    M = np.asarray(M)
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    out = np.empty_like(M)
    out[..., 0, 0] = M[..., 1, 1]
    out[..., 1, 1] = M[..., 0, 0]
    out[..., 0, 1] = -M[..., 0, 1]
    out[..., 1, 0] = -M[..., 1, 0]
    return out / det[..., None, None]


@dataclass
class PreliminaryTransform:
    D: np.ndarray
    B: callable
    C: callable
    M: np.ndarray
    M_inv: np.ndarray


def preliminary_transform(model, xi_norm):
    """Constant rotation diagonalising the principal part: returns
    D = diag(xi, -xi), B(t), C(t, xi) and M with M^{-1} A_hyp M = D + B + C."""
    if xi_norm == 0.0:
        raise ZeroDivisionError("preliminary transform undefined at xi = 0")

    def B(t):
        return 0.5j * float(model.b(t)) * np.ones((2, 2), dtype=complex)

    def C(t):
        return (float(model.m(t)) / (2.0 * xi_norm)
                * np.array([[1.0, -1.0], [1.0, -1.0]], dtype=complex))

    D = np.array([[xi_norm, 0.0], [0.0, -xi_norm]], dtype=complex)
    return PreliminaryTransform(D=D, B=B, C=C, M=M_ROT.astype(complex),
                                M_inv=M_ROT_INV.astype(complex))


def build_stage(model, k, config):
    """Construct the k-sweep hierarchy; k must leave one derivative order of
    headroom in the smoothness budget."""
    if k < 1:
        raise ValueError("at least one sweep is required")
    if k > model.ell - 1:
        raise KTooLargeError(
            f"k={k} sweeps need ell >= {k + 1}, model has ell={model.ell}")
    N_parts = []
    F_parts = []
    for j in range(1, k + 1):
        N_parts.append(SymbolMatrix(
            eval=lambda t, xi, j=j: np.moveaxis(
                _StageEval(model, xi, t).N_part(j, 0)[0], -1, 0).squeeze(),
            jet=lambda t, xi, order, j=j: _StageEval(model, xi, t).N_part(j, order),
            order=(-j, j), smoothness=model.ell - j + 1, name=f"N^({j})"))
    for j in range(0, k):
        F_parts.append(SymbolMatrix(
            eval=lambda t, xi, j=j: np.moveaxis(
                _StageEval(model, xi, t).F_part(j, 0)[0], -1, 0).squeeze(),
            jet=lambda t, xi, order, j=j: _StageEval(model, xi, t).F_part(j, order),
            order=(-j, j + 1), smoothness=model.ell - j, name=f"F^({j})"))
    B_k = SymbolMatrix(
        eval=lambda t, xi: np.moveaxis(
            _StageEval(model, xi, t).B_part(k, 0)[0], -1, 0).squeeze(),
        jet=lambda t, xi, order: _StageEval(model, xi, t).B_part(k, order),
        order=(-k, k + 1), smoothness=model.ell - k, name=f"B^({k})")
    return DiagonalizationStage(model=model, config=config, k=k,
                                N_parts=N_parts, F_parts=F_parts, B_k=B_k)


def min_zone_constant(stage, candidates=None, n_xi=25):
    """Smallest sampled zone constant N with sup ||N_k - I|| <= 1/2 on the
    sampled zone (Neumann series then gives ||N_k^{-1}|| <= 2)."""
    candidates = np.geomspace(1e-2, 1e2, 41) if candidates is None else np.asarray(candidates)
    for N in sorted(candidates):
        xis = np.geomspace(N * 1e-3, N * 1e2, n_xi)
        worst = 0.0
        for xi in xis:
            t_bnd = max(N / xi - 1.0, 0.0)
            for t in (t_bnd, 2.0 * t_bnd + 1.0, 8.0 * t_bnd + 8.0):
                dev = spectral_norm(stage.N_total(t, xi) - np.eye(2))
                worst = max(worst, dev)
        if worst <= 0.5:
            return float(N)
    raise ZoneConstantError("no sampled zone constant keeps ||N_k - I|| <= 1/2")


def free_phase(t, s, xi):
    """E_0(t,s,xi) = diag(e^{i(t-s)xi}, e^{-i(t-s)xi}), exactly unitary."""
    ph = np.exp(1j * (np.asarray(t, dtype=float) - s) * xi)
    E0 = np.zeros(np.shape(ph) + (2, 2), dtype=complex)
    E0[..., 0, 0] = ph
    E0[..., 1, 1] = np.conj(ph)
    return E0


@dataclass
class QResult:
    """One evaluation of the phase-conjugated propagator Q_k(t,s,xi)."""

    matrix: np.ndarray
    s: float
    t: float
    xi: float
    k: int
    path: str            # "series" or "ode"
    series_depth: int
    C_total: float
    tail_bound: float

    def det_lower_bound(self):
        return math.exp(-2.0 * self.C_total)


def _conjugated_generator(stage, taus, anchor, xi):
    G = stage.q_generator(taus, xi)
    phase = np.exp(-2j * (np.asarray(taus) - anchor) * xi)
    G = G.copy()
    G[..., 0, 1] *= phase
    G[..., 1, 0] *= np.conj(phase)
    return G


def q_propagator(stage, s, t, xi, depth=8, tol=1e-9, max_grid=400_000, q0=None,
                 anchor=None):
    """Q_k(t,s,xi) by truncated Peano-Baker series with factorial tail bound;
    falls back to direct integration of D_t Q = R Q when the bound exceeds
    tol or the oscillation would need too fine a grid.  `anchor` keeps the
    phase reference fixed when a long run is split into segments."""
    if t < s:
        raise ValueError("need t >= s")
    anchor = s if anchor is None else anchor
    q0 = np.eye(2, dtype=complex) if q0 is None else q0
    if t == s:
        return QResult(q0.copy(), s, t, xi, stage.k, "series", 0, 0.0, 0.0)

    n_needed = int(abs(2.0 * xi * (t - s)) / 0.02) + 9
    n = max(801, n_needed)
    if n <= max_grid:
        taus = np.linspace(s, t, n)
        G = _conjugated_generator(stage, taus, anchor, xi)
        norms = np.linalg.svd(G, compute_uv=False)[:, 0]
        C_total = float(simpson(norms, x=taus))
        tail = math.exp(C_total) * C_total ** (depth + 1) / math.factorial(depth + 1)
        if tail <= tol:
            term = np.broadcast_to(np.eye(2, dtype=complex), (n, 2, 2)).copy()
            Q = term.copy()
            for _ in range(depth):
                integrand = 1j * np.matmul(G, term)
                term = (cumulative_simpson(integrand.real, x=taus, axis=0, initial=0.0)
                        + 1j * cumulative_simpson(integrand.imag, x=taus, axis=0, initial=0.0))
                Q += term
            return QResult(Q[-1] @ q0, s, t, xi, stage.k, "series", depth, C_total, tail)
    # direct integration path
    def rhs(tau, y):
        Gt = _conjugated_generator(stage, np.array([tau]), anchor, xi)[0]
        return (1j * Gt @ y.reshape(2, 2)).ravel()

    sol = solve_ivp(rhs, (s, t), q0.astype(complex).ravel(), method="DOP853",
                    rtol=min(tol, 1e-9), atol=min(tol, 1e-9) * 1e-2)
    if not sol.success:
        raise HorizonError(sol.message)
    # C_total on a coarse audit grid (bound bookkeeping only)
    taus = np.linspace(s, t, 4001)
    G = _conjugated_generator(stage, taus, anchor, xi)
    C_total = float(simpson(np.linalg.svd(G, compute_uv=False)[:, 0], x=taus))
    return QResult(sol.y[:, -1].reshape(2, 2), s, t, xi, stage.k, "ode", 0, C_total, 0.0)


def q_limit(stage, s, xi, tol=1e-8, t_start=None, growth=2.0, max_steps=48):
    """Q_k(inf,s,xi) by advancing t until successive amplifications differ by
    less than tol (Cauchy criterion on the convergent series)."""
    t = max(2.0 * s, s + 4.0 / max(xi, 1e-12)) if t_start is None else t_start
    res = q_propagator(stage, s, t, xi)
    Q = res.matrix
    C_acc = res.C_total
    for _ in range(max_steps):
        t_next = t * growth
        seg = q_propagator(stage, t, t_next, xi, q0=Q, anchor=s)
        Q_next = seg.matrix
        C_acc += seg.C_total
        if spectral_norm(Q_next - Q) < tol:
            return QResult(Q_next, s, math.inf, xi, stage.k, "limit",
                           res.series_depth, C_acc, seg.tail_bound)
        Q, t = Q_next, t_next
    raise HorizonError(f"Q_k did not settle within {max_steps} doublings (last t={t:g})")


def assemble_representation(stage, s, t, xi, q_depth=8, q_tol=1e-9):
    """E(t,s,xi) = (lam(s)/lam(t)) M N_k(t) E_0(t,s) Q_k(t,s) N_k(s)^{-1} M^{-1};
    exact identity, provenance 'representation'."""
    if (1.0 + s) * xi < stage.config.N * (1.0 - 1e-12):
        raise ValueError("(s, xi) must lie in the oscillatory zone (boundary included)")
    for tau in (s, t):
        if spectral_norm(stage.N_total(tau, xi) - np.eye(2)) >= 1.0:
            raise ZoneConstantError(
                f"N_k not safely invertible at (t={tau:g}, xi={xi:g}); "
                "raise the zone constant")
    lam_ratio = float(stage.model.lam(s) / stage.model.lam(t))
    Nk_t = stage.N_total(t, xi)
    Nk_s_inv = _inv2(stage.N_total(s, xi))
    E0 = free_phase(t, s, xi)
    Q = q_propagator(stage, s, t, xi, depth=q_depth, tol=q_tol).matrix
    E = lam_ratio * (M_ROT @ Nk_t @ E0 @ Q @ Nk_s_inv @ M_ROT_INV)
    return FundamentalMatrix(E, (s, t), xi, provenance="representation")


def assemble_from_boundary(stage, t, xi, E_boundary, q_depth=8, q_tol=1e-9):
    """Glued representation for small frequencies: the oscillatory-zone factor
    from the boundary time theta(|xi|) composed with the supplied slow-zone
    propagator E(theta, 0, xi)."""
    th = theta(stage.config, xi)
    if xi > stage.config.N or t < th:
        raise ValueError("need |xi| <= N and t >= theta(|xi|)")
    inner = assemble_representation(stage, th, t, xi, q_depth=q_depth, q_tol=q_tol)
    E = inner.entries @ np.asarray(E_boundary, dtype=complex)
    return FundamentalMatrix(E, (0.0, t), xi, provenance="representation")


# --- sampled symbol-estimate audits ----------------------------------------

def audit_symbol(sym, config, t_factors=(1.0, 3.0, 10.0, 100.0),
                 xi_values=None, k_max=1, alpha_max=2):
    """Worst sampled constants of ||D_t^k D_xi^a sym|| |xi|^(a-m1) (1+t)^(m2+k)
    over the oscillatory zone; t-derivatives exact (jets), xi-derivatives by
    central differences with relative step."""
    m1, m2 = sym.order
    N = config.N
    xi_values = np.geomspace(0.25 * N, 32.0 * N, 7) if xi_values is None else xi_values
    out = {}
    for k in range(k_max + 1):
        for alpha in range(alpha_max + 1):
            worst = 0.0
            for xi in xi_values:
                t0 = max(N / xi - 1.0, 0.0)
                for fac in t_factors:
                    t = (1.0 + t0) * fac - 1.0 + 1e-9
                    val = _dxi_of_jet(sym, t, xi, k, alpha)
                    weight = xi ** (alpha - m1) * (1.0 + t) ** (m2 + k)
                    worst = max(worst, spectral_norm(val) * weight)
            out[(k, alpha)] = worst
    return out


def stage_audit_report(stage, config=None, k_max=1, alpha_max=2):
    """JSON-able audit of every symbol in the hierarchy: claimed orders,
    sampled grid description and worst weighted constant per derivative."""
    config = stage.config if config is None else config
    report = {"k": stage.k, "zone_constant": config.N, "symbols": []}
    for sym in stage.N_parts + stage.F_parts + [stage.B_k]:
        consts = audit_symbol(sym, config, k_max=k_max, alpha_max=alpha_max)
        report["symbols"].append({
            "name": sym.name,
            "order": list(sym.order),
            "smoothness": sym.smoothness,
            "grid": "xi in [N/4, 32N] log, t/theta in {1, 3, 10, 100}",
            "worst_constant": {f"k={k},alpha={a}": c
                               for (k, a), c in consts.items()},
        })
    return report


def _dxi_of_jet(sym, t, xi, k, alpha):
    def f(x):
        return sym.jet(np.array([t]), x, k)[k][..., 0]

    if alpha == 0:
        return f(xi)
    h = 1e-3 * xi
    if alpha == 1:
        return (f(xi + h) - f(xi - h)) / (2.0 * h)
    return (f(xi + h) - 2.0 * f(xi) + f(xi - h)) / h ** 2


def boundary_symbol_audit(model, config, xi_values, alpha_max=2, rtol=1e-11):
    """Sampled homogeneous-symbol constants of S(xi) = lam(theta) E(theta,0,xi):
    ||D_xi^a S|| |xi|^a should stay comparable across dyadic frequency ranges.
    The FD step grows with the derivative order so oracle noise (ca. rtol)
    stays below the difference quotients."""
    from .modal import weighted_propagator

    def S(r):
        th = theta(config, r)
        E = weighted_propagator(model, config, r, [th], rtol=rtol)[0]
        return float(model.lam(th)) * E

    out = {}
    for alpha in range(alpha_max + 1):
        consts = []
        h_rel = {0: 0.0, 1: 1e-3, 2: 0.02}[alpha]
        for r in xi_values:
            h = h_rel * r
            if alpha == 0:
                val = S(r)
            elif alpha == 1:
                val = (S(r + h) - S(r - h)) / (2.0 * h)
            else:
                val = (S(r + h) - 2.0 * S(r) + S(r - h)) / h ** 2
            consts.append(spectral_norm(val) * r ** alpha)
        out[alpha] = np.asarray(consts)
    return out
