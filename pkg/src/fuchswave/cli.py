"""Command-line interface.

Subcommands: simulate, classify, sweep, scatter, moments, levinson, hw,
repcheck.  A JSON config (--config) supplies the experiment description;
common flags override individual fields.  Results land under --out as
manifest.json plus CSV traces.

Exit codes: 0 all verdicts pass, 2 some verdict failed, 1 error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .experiments import ConfigError, ExperimentConfig, persist, run_experiment

# sensible demonstration defaults per experiment; a config file and flags
# override these field by field
_DEFAULTS = {
    "classify": {"model": {"b0": 2.0, "m0": 2.0}},
    "simulate": {},
    "sweep": {"model": {"b0": 2.0, "m0": 2.0}, "xi": 1e-4},
    "scatter": {
        "model": {"family": "bounded_perturbation", "b0": 2.0, "m0": 0.75,
                  "c1": 0.5, "p1": 0.5, "c2": 0.5, "p2": 0.5},
        "data": {"kind": "ring", "center": 0.6, "width": 0.5, "amp0": 1.0,
                 "amp1": 0.7},
    },
    "moments": {"model": {"b0": 4.0, "m0": 0.0}},
    "levinson": {"model": {"b0": 3.0, "m0": 0.0}, "zone": {"N": 0.01},
                 "xi": 1e-4},
    "hw": {"model": {"family": "log_perturbation", "b0": 3.0, "m0": 0.5,
                     "b1": 0.5, "m1": 0.5, "gamma": 1.0, "sigma": 1.5},
           "xi": 1e-6},
    "repcheck": {
        "model": {"family": "bounded_perturbation", "b0": 2.0, "m0": 0.75,
                  "c1": 0.5, "p1": 0.5, "c2": 0.5, "p2": 0.5, "ell": 6},
        "steps": 2,
    },
}


def _deep_update(base, extra):
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], val)
        else:
            base[key] = val
    return base


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fuchswave",
        description="Numerical experiments for damped wave equations with "
                    "time-decaying dissipation and mass")
    sub = parser.add_subparsers(dest="command")
    for name, help_text in [
        ("simulate", "spectral box run with physical-space norm traces"),
        ("classify", "low-frequency exponents mu+- and the regime case"),
        ("sweep", "fitted vs predicted zone rates over (b0, m0, sigma) cells"),
        ("scatter", "modified-scattering residual decay"),
        ("moments", "moment-condition rate improvement"),
        ("levinson", "distinguished-solution construction demo"),
        ("hw", "remainder-reduction transform demo"),
        ("repcheck", "representation identity vs direct oracle"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment description")
        p.add_argument("--b0", type=float)
        p.add_argument("--m0", type=float)
        p.add_argument("--sigma", type=float)
        p.add_argument("--N", type=float, help="zone constant")
        p.add_argument("--tfinal", type=float)
        p.add_argument("--tol", type=float, help="oracle relative tolerance")
        p.add_argument("--out", help="output directory for manifest + CSVs")
        p.add_argument("--strict", action="store_true",
                       help="escalate resolution warnings to errors")
        p.add_argument("--threads", type=int,
                       help="worker threads (default: FUCHSWAVE_THREADS or 1)")
    return parser


def _assemble_config(args):
    raw = json.loads(json.dumps(_DEFAULTS.get(args.command, {})))
    raw.setdefault("experiment", args.command)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"malformed config {args.config}: line {exc.lineno}, "
                f"column {exc.colno}: {exc.msg}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be a JSON object")
        _deep_update(raw, loaded)
    raw["experiment"] = args.command

    for flag, path in [("b0", ("model", "b0")), ("m0", ("model", "m0")),
                       ("sigma", ("model", "sigma")), ("N", ("zone", "N")),
                       ("tfinal", ("times", "t_final")),
                       ("tol", ("tolerances", "rtol"))]:
        val = getattr(args, flag)
        if val is not None:
            raw.setdefault(path[0], {})[path[1]] = val
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("FUCHSWAVE_THREADS", "1"))
    raw["threads"] = threads
    if args.strict:
        raw["strict"] = True
    return ExperimentConfig.from_dict(raw)


def _print_record(record):
    if record.experiment == "classify":
        out = record.outputs
        mp, mm = out["mu_plus"], out["mu_minus"]
        print(f"mu+ = {mp[0]:+.6g}{mp[1]:+.6g}i")
        print(f"mu- = {mm[0]:+.6g}{mm[1]:+.6g}i")
        print(f"regime: {out['case']}  dominant exponent {out['dominant_exponent']:+.6g}")
        return
    for name, ok in record.verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    for key, val in record.outputs.items():
        if isinstance(val, float):
            print(f"  {key} = {val:.6g}")


def run_cli(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage()
        return 1
    if args.command == "simulate" and not args.config:
        print("simulate requires --config with grid and data blocks",
              file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr)
        return 1
    try:
        cfg = _assemble_config(args)
        record = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, not a verdict
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    _print_record(record)
    if args.out:
        path = persist(record, args.out)
        print(f"wrote {path}")
    if record.verdicts and not record.all_pass:
        return 2
    return 0


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
