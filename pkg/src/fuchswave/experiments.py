"""Experiment configuration, dispatch and result persistence.

A single JSON document (schema 1) describes a run; unknown fields are
rejected.  Results are persisted as a deterministic manifest plus one CSV per
trace, file names derived from the config hash.  Wall time is tracked on the
record but kept out of the manifest so identical configs rewrite identical
manifests bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__, asymptotic, diagonalize, estimates, modal, zones
from .coeffs import CoefficientModel, classify_regime, predicted_decay
from .estimates import DataSpec, DEFAULT_WINDOW, fit_decay, grid_for_data
from .solver import Grid, simulate_fields
from .zones import ZoneConfig

SCHEMA_VERSION = 1

EXPERIMENTS = ("simulate", "classify", "sweep", "scatter", "moments",
               "levinson", "hw", "repcheck")

# representative cells for the four qualitative rows of the slow-zone /
# oscillatory-zone rate table (sigma = 1)
DEFAULT_SWEEP_CELLS = ((2.0, 2.0, 1.0), (2.0, 0.25, 1.0),
                       (3.0, 0.8, 1.0), (3.0, 0.0, 1.0))


class ConfigError(ValueError):
    pass


_MODEL_KEYS = {"family", "b0", "m0", "sigma", "ell", "c1", "p1", "c2", "p2",
               "b1", "m1", "gamma", "b_table", "m_table"}
_DATA_KEYS = {"kind", "width", "center", "zero_order", "support", "path",
              "amp0", "amp1"}
_GRID_KEYS = {"n_dim", "points_per_dim", "box_length"}
_TOP_KEYS = {"schema", "experiment", "model", "zone", "data", "grid", "n_dim",
             "times", "tolerances", "sweep_cells", "freq_samples", "threads",
             "strict", "seed", "xi", "steps"}


def _reject_unknown(d, allowed, where):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)} in {where}")


@dataclass
class ExperimentConfig:
    experiment: str
    model: CoefficientModel
    zone: ZoneConfig
    data: DataSpec | None = None
    grid: Grid | None = None
    n_dim: int = 1
    t_final: float = 1e4
    checkpoints: int = 61
    rtol: float = 1e-9
    fit_tol: float = 0.05
    sweep_cells: tuple = DEFAULT_SWEEP_CELLS
    freq_samples: tuple = ()
    threads: int = 1
    strict: bool = False
    seed: int = 20240901
    xi: float = 1e-4
    steps: int = 2
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        _reject_unknown(d, _TOP_KEYS, "config")
        if d.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema {d.get('schema')!r}")
        exp = d.get("experiment")
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
        model_d = dict(d.get("model", {}))
        _reject_unknown(model_d, _MODEL_KEYS, "config.model")
        try:
            model = CoefficientModel.from_json(json.dumps(model_d)) if model_d else CoefficientModel()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model block: {exc}") from exc
        zone_d = dict(d.get("zone", {}))
        _reject_unknown(zone_d, {"N"}, "config.zone")
        zone = ZoneConfig(N=float(zone_d.get("N", 1.0)), set_by="config")
        data = None
        if d.get("data"):
            data_d = dict(d["data"])
            _reject_unknown(data_d, _DATA_KEYS, "config.data")
            data = DataSpec(**data_d)
        grid = None
        if d.get("grid"):
            grid_d = dict(d["grid"])
            _reject_unknown(grid_d, _GRID_KEYS, "config.grid")
            grid = Grid(**grid_d)
        times = dict(d.get("times", {}))
        _reject_unknown(times, {"t_final", "checkpoints"}, "config.times")
        tols = dict(d.get("tolerances", {}))
        _reject_unknown(tols, {"rtol", "fit"}, "config.tolerances")
        return cls(
            experiment=exp, model=model, zone=zone, data=data, grid=grid,
            n_dim=int(d.get("n_dim", 1)),
            t_final=float(times.get("t_final", 1e4)),
            checkpoints=int(times.get("checkpoints", 61)),
            rtol=float(tols.get("rtol", 1e-9)),
            fit_tol=float(tols.get("fit", 0.05)),
            sweep_cells=tuple(tuple(c) for c in d.get("sweep_cells", DEFAULT_SWEEP_CELLS)),
            freq_samples=tuple(d.get("freq_samples", ())),
            threads=int(d.get("threads", 1)),
            strict=bool(d.get("strict", False)),
            seed=int(d.get("seed", 20240901)),
            xi=float(d.get("xi", 1e-4)),
            steps=int(d.get("steps", 2)),
            raw=d,
        )

    def canonical(self):
        base = {
            "schema": SCHEMA_VERSION,
            "experiment": self.experiment,
            "model": json.loads(self.model.to_json()),
            "zone": {"N": self.zone.N},
            "n_dim": self.n_dim,
            "times": {"t_final": self.t_final, "checkpoints": self.checkpoints},
            "tolerances": {"rtol": self.rtol, "fit": self.fit_tol},
            "sweep_cells": [list(c) for c in self.sweep_cells],
            "freq_samples": list(self.freq_samples),
            "threads": self.threads,
            "strict": self.strict,
            "seed": self.seed,
            "xi": self.xi,
            "steps": self.steps,
        }
        if self.data is not None:
            base["data"] = {k: getattr(self.data, k) for k in
                            ("kind", "width", "center", "zero_order", "support",
                             "path", "amp0", "amp1")}
        if self.grid is not None:
            base["grid"] = {"n_dim": self.grid.n_dim,
                            "points_per_dim": self.grid.points_per_dim,
                            "box_length": self.grid.box_length}
        return base


def config_hash(config):
    canon = config.canonical() if isinstance(config, ExperimentConfig) else config
    blob = json.dumps(canon, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ResultRecord:
    config: dict
    config_hash: str
    experiment: str
    verdicts: dict
    outputs: dict
    traces: list                 # (name, header, rows) per CSV
    wall_time: float
    tool_version: str = __version__

    @property
    def all_pass(self):
        return all(self.verdicts.values())


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------

def _doubling_times(t_final):
    return 2.0 ** np.arange(0, int(math.floor(math.log2(t_final))) + 1)


def run_classify(cfg):
    cls = classify_regime(cfg.model)
    outputs = {
        "mu_plus": [cls.mu_plus.real, cls.mu_plus.imag],
        "mu_minus": [cls.mu_minus.real, cls.mu_minus.imag],
        "case": cls.case,
        "dominant_exponent": cls.dominant_exponent,
        "distinct_eigenvalues": cls.distinct_eigenvalues,
        "real_distinct": cls.real_distinct,
        "lambda_dominated": cls.lambda_dominated,
    }
    return {}, outputs, []


def run_simulate(cfg):
    if cfg.grid is None or cfg.data is None:
        raise ConfigError("simulate needs both a grid and a data block")
    times = np.unique(np.concatenate([[0.0], np.geomspace(1.0, cfg.t_final,
                                                          cfg.checkpoints - 1)]))
    trace = simulate_fields(cfg.model, cfg.zone, cfg.grid, cfg.data, times,
                            rtol=cfg.rtol, strict=cfg.strict, threads=cfg.threads)
    rows = np.column_stack([trace.times, trace.u_over_1pt, trace.grad,
                            trace.ut, trace.energy])
    outputs = {"warnings": trace.warnings,
               "final_energy": float(trace.energy[-1])}
    return {}, outputs, [("simulate_trace", "t,u_over_1pt,grad,ut,energy", rows)]


def _double_root_log_shift(window):
    """Expected finite-window slope excess for a defective (double) root:
    the exact profile carries a ln(1+t) factor, so the log-log slope sits at
    Re(mu+) + <1/ln(1+t)> over the window."""
    ts = np.geomspace(window[0], window[1], 200)
    return float(np.mean(1.0 / np.log1p(ts)))


def run_sweep(cfg):
    verdicts = {}
    rows = []
    xi_low = cfg.xi
    for cell in cfg.sweep_cells:
        b0, m0, sigma = cell
        name = f"b0={b0:g},m0={m0:g},sigma={sigma:g}"
        try:
            model = CoefficientModel(b0=b0, m0=m0, sigma=sigma, ell=cfg.model.ell)
            cls = classify_regime(model)
            if sigma > 1.0 and not cls.real_distinct:
                rows.append((b0, m0, sigma, "n/a", 0.0, 0.0, "not_applicable"))
                continue
            th = zones.theta(cfg.zone, xi_low)
            t_lo = 1e2
            times_d = np.geomspace(t_lo, th, 120)
            norm_d = modal.propagator_norm_trace(model, cfg.zone, xi_low, times_d,
                                                 rtol=cfg.rtol)
            pred_d = predicted_decay(model, "diss")
            if not cls.distinct_eigenvalues:
                pred_d += _double_root_log_shift((t_lo, th))
            fit_d = fit_decay(times_d, norm_d, (t_lo, th), pred_d, tol=cfg.fit_tol)
            rows.append((b0, m0, sigma, "diss", fit_d.predicted, fit_d.exponent,
                         "pass" if fit_d.verdict else "fail"))

            xi_high = 2.0 * cfg.zone.N
            times_h = np.geomspace(t_lo, cfg.t_final, 120)
            norm_h = modal.propagator_norm_trace(model, cfg.zone, xi_high, times_h,
                                                 rtol=cfg.rtol)
            fit_h = fit_decay(times_h, norm_h, (t_lo, cfg.t_final),
                              predicted_decay(model, "hyp_large"), tol=cfg.fit_tol)
            rows.append((b0, m0, sigma, "hyp", fit_h.predicted, fit_h.exponent,
                         "pass" if fit_h.verdict else "fail"))
            verdicts[name] = bool(fit_d.verdict and fit_h.verdict)
        except Exception as exc:  # per-cell failures recorded, sweep continues
            rows.append((b0, m0, sigma, "error", 0.0, 0.0, f"error:{exc}"))
            verdicts[name] = False
    csv_rows = [(r[0], r[1], r[2], r[3], r[4], r[5], r[6]) for r in rows]
    return verdicts, {"cells": len(cfg.sweep_cells)}, [
        ("sweep_results", "b0,m0,sigma,zone,predicted,fitted,verdict", csv_rows)]


def run_scatter(cfg):
    data = cfg.data or DataSpec(kind="ring", center=0.6, width=0.5,
                                amp0=1.0, amp1=0.7)
    grid = grid_for_data(data, lo=0.05, hi=4.0 * cfg.zone.N, n_points=48,
                         n_refine=120)
    res = estimates.scattering_residual(cfg.model, cfg.zone, data, grid,
                                        horizon=cfg.t_final, n_dim=cfg.n_dim,
                                        rtol=max(cfg.rtol, 1e-9))
    rows = np.column_stack([res.times, res.residual_dt, res.residual_grad])
    verdicts = {"residuals_decay": res.passed}
    outputs = {"final_dt": float(res.residual_dt[-1]),
               "final_grad": float(res.residual_grad[-1]),
               "w_sup_norm": float(np.linalg.svd(res.W_samples, compute_uv=False)[:, 0].max())}
    return verdicts, outputs, [("scattering_residuals", "t,residual_dt,residual_grad", rows)]


def run_moments(cfg):
    cmp = estimates.moment_experiment(cfg.model, cfg.zone, n_dim=cfg.n_dim,
                                      window=(1e2, cfg.t_final), rtol=cfg.rtol,
                                      threads=cfg.threads)
    verdicts = {"generic_rate": cmp.generic_fit.verdict,
                "moment_rate": cmp.moment_fit.verdict}
    outputs = {
        "kappa": cmp.moment_data.kappa,
        "kappa_prime": cmp.moment_data.kappa_prime,
        "zero_order": cmp.moment_data.zero_order,
        "generic_fit": cmp.generic_fit.exponent,
        "generic_predicted": cmp.generic_fit.predicted,
        "moment_fit": cmp.moment_fit.exponent,
        "moment_predicted": cmp.moment_fit.predicted,
        "weighted_integral": cmp.moment_data.weighted_integral,
    }
    return verdicts, outputs, []


def modal_fuchs_system(model, config, xi, zero_extended=True):
    """The slow-zone Fuchs form diagonalised by the constant eigenbasis,
    shifted to the t >= 1 clock of the asymptotic library.  Exponents are
    ordered by ascending real part (recorded permutation convention)."""
    A = modal.fuchs_constant_matrix(model, config)
    eigvals, vecs = np.linalg.eig(A)
    order = np.argsort(eigvals.real)
    eigvals = eigvals[order]
    P = vecs[:, order]
    P /= np.linalg.norm(P, axis=0)
    P_inv = np.linalg.inv(P)
    th = zones.theta(config, xi)

    def mu(t, nu=None):
        return eigvals

    def R(t, nu=None):
        tm = t - 1.0
        if zero_extended and tm > th:
            return np.zeros((2, 2), dtype=complex)
        return P_inv @ modal.fuchs_remainder(model, config, tm, xi) @ P

    return asymptotic.FuchsSystem(dimension=2, mu=mu, R=R,
                                  label=f"modal-fuchs(xi={xi:g})"), P, eigvals


def run_levinson(cfg):
    xi = cfg.xi
    sys, P, eigvals = modal_fuchs_system(cfg.model, cfg.zone, xi)
    th = zones.theta(cfg.zone, xi)
    t_probe = 1.0 + th / 2.0
    verdicts = {}
    outputs = {"mu": [[z.real, z.imag] for z in eigvals], "theta": th}
    traces = []
    for k in range(2):
        sol = asymptotic.levinson_solve(sys, k, t0=1.0, T=2.0 * (th + 1.0),
                                        tol=1e-11)
        res_probe = float(np.interp(math.log(t_probe), np.log(sol.grid_t),
                                    sol.residual_trace))
        rate_ok = (not sol.rates) or max(sol.rates) <= sol.contraction_bound + 1e-9
        verdicts[f"residual_k{k}"] = res_probe <= 0.01
        verdicts[f"contraction_k{k}"] = bool(rate_ok)
        outputs[f"residual_k{k}"] = res_probe
        outputs[f"iterations_k{k}"] = sol.iterations
        outputs[f"contraction_bound_k{k}"] = sol.contraction_bound
        traces.append((f"levinson_residual_k{k}", "t,residual",
                       np.column_stack([sol.grid_t, sol.residual_trace])))
    return verdicts, outputs, traces


def run_hw(cfg):
    xi = cfg.xi
    sys, P, eigvals = modal_fuchs_system(cfg.model, cfg.zone, xi,
                                         zero_extended=False)
    sigma = cfg.model.sigma
    transform, reduced = asymptotic.hartman_wintner(sys, sigma, t0=1.0,
                                                    horizon=4.0 * cfg.t_final)
    ts = transform.grid_t
    window = (ts >= 1e2) & (ts <= cfg.t_final)
    xs = np.log(ts[window])
    r1 = np.array([np.linalg.norm(reduced.R_at(t), 2) for t in ts[window]])
    r_sig = np.array([np.linalg.norm(sys.R_at(t), 2) ** sigma for t in ts[window]])
    l1_tail = float(np.trapezoid(r1, xs))
    sigma_tail = float(np.trapezoid(r_sig, xs))

    diag_N = max(abs(transform.N_matrix(t)[i, i]) for t in (1e1, 1e2, 1e3)
                 for i in (0, 1))
    tail_norms = transform.N_norms[ts >= math.sqrt(cfg.t_final)]
    decreasing = bool(np.all(np.diff(_decade_maxima(ts[ts >= math.sqrt(cfg.t_final)],
                                                    tail_norms)) <= 0))
    verdicts = {
        "diag_zero": diag_N == 0.0,
        "norm_decreasing": decreasing,
        "tail_reduction": l1_tail <= 0.1 * sigma_tail,
    }
    outputs = {"l1_tail": l1_tail, "sigma_tail": sigma_tail,
               "valid_from": transform.valid_from,
               "ratio": l1_tail / sigma_tail if sigma_tail else float("nan")}
    rows = np.column_stack([ts, transform.N_norms])
    return verdicts, outputs, [("hw_transform_norm", "t,norm_N", rows)]


def _decade_maxima(ts, vals):
    edges = np.arange(math.floor(math.log10(ts[0])), math.ceil(math.log10(ts[-1])) + 1)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (ts >= 10.0 ** lo) & (ts < 10.0 ** hi)
        if sel.any():
            out.append(vals[sel].max())
    return np.array(out)


def run_repcheck(cfg):
    stage = diagonalize.build_stage(cfg.model, cfg.steps, cfg.zone)
    rng = np.random.default_rng(cfg.seed)
    N = cfg.zone.N
    rows = []
    worst = 0.0
    for _ in range(20):
        xi = float(np.exp(rng.uniform(math.log(N), math.log(8.0 * N))))
        s = float(rng.uniform(0.0, 50.0))
        t = s + float(np.exp(rng.uniform(math.log(10.0), math.log(1e3))))
        E_rep = diagonalize.assemble_representation(stage, s, t, xi)
        sysm = modal.ModalSystem(cfg.model, cfg.zone, xi, modal.FORM_HYP)
        E_orc = modal.integrate_fundamental(sysm, s, t, tol=1e-12)
        rel = (modal.spectral_norm(E_rep.entries - E_orc.entries)
               / modal.spectral_norm(E_orc.entries))
        worst = max(worst, rel)
        rows.append((s, t, xi, rel))
    verdicts = {"representation_identity": worst <= 1e-6}
    return verdicts, {"worst_rel_error": worst}, [
        ("repcheck_points", "s,t,xi,rel_error", rows)]


_RUNNERS = {
    "classify": run_classify,
    "simulate": run_simulate,
    "sweep": run_sweep,
    "scatter": run_scatter,
    "moments": run_moments,
    "levinson": run_levinson,
    "hw": run_hw,
    "repcheck": run_repcheck,
}


def run_experiment(cfg):
    start = time.perf_counter()
    verdicts, outputs, traces = _RUNNERS[cfg.experiment](cfg)
    return ResultRecord(
        config=cfg.canonical(), config_hash=config_hash(cfg),
        experiment=cfg.experiment, verdicts=verdicts, outputs=outputs,
        traces=traces, wall_time=time.perf_counter() - start,
    )


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def _format_cell(x):
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def persist(record, out_dir):
    """Write manifest.json plus one CSV per trace; a pre-existing manifest is
    archived with a timestamp suffix.  Returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        stamp = datetime.now().strftime("%Y%m%dT%H%M%S%f")
        manifest_path.rename(out / f"manifest.{stamp}.json")

    h12 = record.config_hash[:12]
    csv_files = []
    for name, header, rows in record.traces:
        fname = f"{name}_{h12}.csv"
        with open(out / fname, "w") as fh:
            fh.write(header + "\n")
            for row in np.atleast_2d(np.asarray(rows, dtype=object)):
                fh.write(",".join(_format_cell(x) for x in row) + "\n")
        csv_files.append({"file": fname, "columns": header})

    manifest = {
        "schema": SCHEMA_VERSION,
        "tool_version": record.tool_version,
        "experiment": record.experiment,
        "config": record.config,
        "config_hash": record.config_hash,
        "verdicts": record.verdicts,
        "outputs": record.outputs,
        "csv_files": csv_files,
    }
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    # wall time lives outside the manifest so reruns reproduce it bit for bit
    (out / "runinfo.json").write_text(json.dumps(
        {"wall_time_s": record.wall_time,
         "created": datetime.now().isoformat()}) + "\n")
    return manifest_path
