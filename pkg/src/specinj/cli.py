"""Command-line entry point: ``specinj <command> [options]``.

Every command resolves its parameters as built-in defaults, then the
command's section of an optional INI file (``--config``), then explicit
flags.  The resolved values are written into each JSON report under
``resolved_config``.  Outputs are written as ``<name>.partial`` and renamed
once the command succeeds, so a failed run leaves only marked files.
"""
import argparse
import configparser
import json
import logging
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import bandwidth, injector, metrics, probe, spn
from .exceptions import DegenerateAnchorError, DegenerateFrameError, GateError, ResourceError, TrainingError
from .xyz import XYZParseError, read_point_cloud, read_xyz, write_xyz

logger = logging.getLogger("specinj")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_DEGENERATE = 4
EXIT_GATE_LEAKAGE = 5
EXIT_RESOURCE = 6
EXIT_EMPTY = 7
EXIT_TRAINING = 8


class EmptyInputError(ValueError):
    pass


class LeakageGateError(GateError):
    pass


def _ints(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _bool(text):
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Opt:
    name: str
    type: object
    default: object
    help: str = ""
    flag: bool = False  # store_true switch


COMMON = [
    Opt("seed", int, 0, "master seed"),
    Opt("out_dir", str, ".", "directory for output files"),
    Opt("threads", int, 1, "worker processes for parallel sections"),
]

COMMANDS = {
    "inject": [
        Opt("input", str, None, "extended-XYZ trajectory"),
        Opt("output", str, "injected.xyz", "name of the injected trajectory"),
        Opt("l_inj", int, 4, "injected angular degree"),
        Opt("amplitude", float, 1.0, "injection amplitude (energy units)"),
        Opt("frame", _ints, [0, 1, 2], "frame atom triple i,j,k"),
        Opt("anchor", int, 3, "anchor atom"),
        Opt("coeff_seed", int, None, "seed of the c_m draw (default: --seed)"),
        Opt("anchor_mode", str, "centroid", "centroid or edge"),
        Opt("split_fractions", _floats, [0.8, 0.1, 0.1], "contiguous split sizes for the leakage gate"),
        Opt("leakage_threshold", float, injector.LEAKAGE_GATE, "reject when rho^2_max reaches this"),
        Opt("skip_degenerate", _bool, False, "drop degenerate frames instead of failing", flag=True),
        Opt("force", _bool, False, "write outputs even if the leakage gate fails", flag=True),
    ],
    "grid": [
        Opt("L", _ints, [1, 2, 3], "feature degrees"),
        Opt("d", _ints, [2, 3, 4], "polynomial degrees"),
        Opt("lmax_extra", int, 3, "sweep l up to dL + this"),
        Opt("l_floor", int, 12, "sweep l at least up to this"),
        Opt("max_ceiling", int, 9, "skip cells with dL above this"),
        Opt("n", int, 4000, "samples per fit"),
        Opt("ridge", float, probe.DEFAULT_RIDGE, "ridge regularizer"),
    ],
    "hardceil": [
        Opt("L", int, 3, "feature degree of the linear probe"),
        Opt("band", int, None, "bandlimit of the within-band target (default: L)"),
        Opt("n", int, 4000, "samples"),
    ],
    "spn-train": [
        Opt("data", str, None, "npz with X (n, channels, (L+1)^2) and y; synthetic task if absent"),
        Opt("L", int, 2, "feature degree of the synthetic task"),
        Opt("ell", int, 2, "target degree of the synthetic task"),
        Opt("channels", int, 4, "channels of the synthetic task"),
        Opt("neighbors", int, 5, "directions per synthetic sample"),
        Opt("n", int, 2000, "synthetic samples"),
        Opt("degree", int, 2, "invariant degree d_r (1, 2 or 3)"),
        Opt("activation", str, "silu", "identity, square or silu"),
        Opt("hidden", _ints, [128, 128], "widths of MLP_theta"),
        Opt("energy_hidden", int, 32, "width of g_phi"),
        Opt("l_out", int, 6, "degree of the power summary"),
        Opt("epochs", int, 100, "training epochs"),
        Opt("lr", float, 1e-3, "Adam step size"),
        Opt("batch_size", int, 64, "minibatch size"),
        Opt("weight_decay", float, 1e-5, "L2 penalty"),
        Opt("test_fraction", float, 0.2, "held-out share for the reported R^2"),
    ],
    "diagnose": [
        Opt("input", str, None, "rows 'ell y_low y_arch y_high' (one per seed) or 'ell rho'"),
        Opt("contrast", float, 3.0, "cliff contrast factor"),
        Opt("min_rho", float, 0.1, "smallest rho that can sit at a cliff"),
        Opt("L", int, None, "backbone degree, for the ceiling check"),
        Opt("d_r", int, None, "readout degree, for the ceiling check"),
        Opt("B", int, 10_000, "bootstrap resamples"),
        Opt("boot_seed", int, 42, "bootstrap seed"),
    ],
    "bandwidth": [
        Opt("input", str, None, "point cloud ('element x y z', groups split by blank lines) or extended XYZ"),
        Opt("r_cut", float, bandwidth.DEFAULT_R_CUT, "neighbour ball radius"),
        Opt("shell_mu", float, bandwidth.DEFAULT_SHELL_MU, "shell weight centre"),
        Opt("shell_sigma", float, bandwidth.DEFAULT_SHELL_SIGMA, "shell weight width"),
        Opt("L_max", int, bandwidth.DEFAULT_L_MAX, "expansion degree"),
        Opt("threshold", float, bandwidth.DEFAULT_THRESHOLD, "cumulative power threshold"),
        Opt("cutoff_l", int, 4, "report P(lstar <= cutoff_l)"),
        Opt("B", int, 10_000, "group bootstrap resamples"),
        Opt("boot_seed", int, 42, "bootstrap seed"),
        Opt("heavy_only", _bool, False, "ignore hydrogen centres and neighbours", flag=True),
        Opt("csv", str, None, "also write per-atom profiles to this CSV name"),
    ],
    "spectrum": [
        Opt("input", str, None, "extended-XYZ trajectory"),
        Opt("frame", _ints, [0, 1, 2], "frame atom triple i,j,k"),
        Opt("anchor", int, 3, "anchor atom"),
        Opt("L_max", int, bandwidth.DEFAULT_L_MAX, "regression degree"),
        Opt("center", _bool, False, "subtract the mean energy first", flag=True),
    ],
}


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser():
    parser = argparse.ArgumentParser(prog="specinj", description="Spectral injection diagnostics.")
    parser.add_argument("--log-level", default="WARNING")
    common = argparse.ArgumentParser(add_help=False)
    for o in COMMON:
        common.add_argument(_flag(o.name), dest=o.name, type=o.type, default=argparse.SUPPRESS, help=o.help)
    common.add_argument("--config", default=None, help="INI file with one section per command")
    common.add_argument("--json", action="store_true", help="print the report JSON to stdout")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in COMMANDS.items():
        p = sub.add_parser(cmd, parents=[common])
        for o in opts:
            if o.flag:
                p.add_argument(_flag(o.name), dest=o.name, action="store_true", default=argparse.SUPPRESS,
                               help=o.help)
            else:
                p.add_argument(_flag(o.name), dest=o.name, type=o.type, default=argparse.SUPPRESS, help=o.help)
    return parser


def resolve_config(command, args):
    """Defaults, then the INI section for ``command``, then explicit flags."""
    opts = {o.name: o for o in COMMON + COMMANDS[command]}
    cfg = {name: o.default for name, o in opts.items()}
    # configparser folds keys to lower case; options such as L and L_max are not
    by_key = {name.lower(): name for name in opts}
    if args.get("config"):
        ini = configparser.ConfigParser()
        if not ini.read(args["config"]):
            raise FileNotFoundError(args["config"])
        for section in ("common", command):
            if ini.has_section(section):
                for key, raw in ini.items(section):
                    name = by_key.get(key.replace("-", "_").lower())
                    if name is None:
                        raise ValueError(f"unknown key {key!r} in section [{section}]")
                    cfg[name] = opts[name].type(raw)
    for name in opts:
        if name in args:
            cfg[name] = args[name]
    return cfg


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


class Outputs:
    """Stage files as ``<name>.partial``; ``commit`` renames them into place."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.staged = []

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def stage(self, name):
        os.makedirs(self.out_dir, exist_ok=True)
        tmp = self.path(name) + ".partial"
        self.staged.append((tmp, self.path(name)))
        return tmp

    def write_text(self, name, text):
        with open(self.stage(name), "w") as fh:
            fh.write(text)

    def commit(self):
        for tmp, final in self.staged:
            os.replace(tmp, final)
        self.staged = []


def _require_input(cfg):
    if not cfg.get("input"):
        raise ValueError("--input is required")
    return cfg["input"]


def _split(n, fractions):
    f = np.asarray(fractions, dtype=float)
    if f.ndim != 1 or f.size < 2 or np.any(f <= 0):
        raise ValueError("split fractions must be two or more positive numbers")
    edges = np.round(np.cumsum(f / f.sum()) * n).astype(int)
    starts = np.concatenate([[0], edges[:-1]])
    return [slice(int(a), int(b)) for a, b in zip(starts, edges)]


def cmd_inject(cfg, out):
    frames = read_xyz(_require_input(cfg))
    if not frames:
        raise EmptyInputError("input trajectory has no frames")
    spec = injector.InjectionSpec(cfg["l_inj"], cfg["amplitude"], tuple(cfg["frame"]), cfg["anchor"],
                                  cfg["seed"] if cfg["coeff_seed"] is None else cfg["coeff_seed"],
                                  cfg["anchor_mode"])
    injected, rejected = injector.inject_dataset(frames, spec, skip_degenerate=cfg["skip_degenerate"])
    bad = {i for i, _ in rejected}
    kept = [f for i, f in enumerate(frames) if i not in bad]
    if not kept:
        raise EmptyInputError("every frame was rejected")
    report = {"spec": spec.to_dict(), "n_frames": len(frames), "n_injected": len(injected),
              "rejected": [{"frame": i, "reason": r} for i, r in rejected], "warnings": []}
    report["eta"] = injector.variance_share(kept, injected)
    report["sigma_f_nat"] = injector.force_scale(kept)
    report["sigma_f_inj"] = injector.force_scale(injected)
    if report["eta"] < injector.ETA_MIN:
        msg = f"variance share eta={report['eta']:.3f} is below {injector.ETA_MIN}; the injection may be undetectable"
        logger.warning(msg)
        report["warnings"].append(msg)

    coeffs = injector.projected_coefficients(kept, spec)
    splits = [coeffs[s] for s in _split(len(kept), cfg["split_fractions"])]
    if min(s.shape[0] for s in splits) >= 2:
        report["rho2_max"] = injector.split_leakage(splits)
        report["leakage_pass"] = injector.leakage_passes(report["rho2_max"], cfg["leakage_threshold"])
    else:
        report["rho2_max"], report["leakage_pass"] = None, None
        report["warnings"].append("splits too small for the leakage gate")

    write_xyz(out.stage(cfg["output"]), injected)
    out.write_text("inject.json", dumps({**report, "resolved_config": cfg}))
    if report["leakage_pass"] is False and not cfg["force"]:
        raise LeakageGateError(f"leakage rho^2_max={report['rho2_max']:.4f} >= {cfg['leakage_threshold']}",
                               report)
    return report


def cmd_grid(cfg, out):
    cells = probe.saturation_grid(cfg["L"], cfg["d"], cfg["lmax_extra"], cfg["n"], cfg["seed"],
                                  cfg["max_ceiling"], cfg["l_floor"], cfg["ridge"], cfg["threads"])
    table = probe.format_grid_table(cells)
    report = {"cells": [c.to_dict() for c in cells], "n": cfg["n"], "seed": cfg["seed"]}
    out.write_text("grid.txt", table)
    out.write_text("grid.json", dumps({**report, "resolved_config": cfg}))
    print(table, end="", file=sys.stderr)
    return report


def cmd_hardceil(cfg, out):
    res = probe.hard_ceiling_check(cfg["L"], cfg["band"], cfg["seed"], cfg["n"])
    report = res.to_dict()
    report["ratio_above"] = res.mse_above / res.var_above
    out.write_text("hardceil.json", dumps({**report, "resolved_config": cfg}))
    return report


def cmd_spn_train(cfg, out):
    if cfg["data"]:
        with np.load(cfg["data"]) as z:
            X, y = z["X"], z["y"]
    else:
        X, y = spn.synthetic_density_task(cfg["n"], cfg["L"], cfg["ell"], cfg["channels"],
                                          cfg["neighbors"], cfg["seed"])
    if X.shape[0] < 4:
        raise EmptyInputError("need at least four samples")
    n_test = max(1, int(round(cfg["test_fraction"] * X.shape[0])))
    model = spn.SPNRegressor(cfg["degree"], tuple(cfg["hidden"]), cfg["energy_hidden"], cfg["l_out"],
                             cfg["activation"], cfg["lr"], cfg["weight_decay"], cfg["epochs"],
                             cfg["batch_size"], random_state=cfg["seed"])
    model.fit(X[:-n_test], y[:-n_test])
    report = {"test_r2": model.score(X[-n_test:], y[-n_test:]),
              "n_parameters": model.params_.n_parameters(),
              "best_epoch": model.history_["best_epoch"],
              "history": model.history_}
    with open(out.stage("spn_params.npz"), "wb") as fh:
        np.savez(fh, **model.params_.weights)
    out.write_text("spn.json", dumps({**report, "resolved_config": cfg}))
    return report


def read_triples(path):
    """``{ell: rows}`` from a whitespace or comma separated file; ``#`` starts a comment."""
    rows = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].replace(",", " ").strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 4):
                raise XYZParseError(f"line {lineno}: expected 'ell rho' or 'ell y_low y_arch y_high'")
            try:
                ell = int(parts[0])
                vals = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise XYZParseError(f"line {lineno}: non-numeric field") from exc
            rows.setdefault(ell, []).append(vals)
    for ell, vals in rows.items():
        if len({len(v) for v in vals}) != 1:
            raise XYZParseError(f"ell={ell}: mixed row formats")
    return rows


def guidance(ell_star, ceiling):
    if ell_star is None:
        return "No cliff detected: the readout follows the anchors across the tested degrees."
    if ceiling is None:
        return f"Cliff at l*={ell_star}. Pass --L and --d-r to compare it with the d_r*L ceiling."
    if ell_star == ceiling:
        return (f"Cliff at l*={ell_star} matches the ceiling d_r*L={ceiling}. "
                "Raise L or d_r if the task needs higher angular degrees.")
    if ell_star < ceiling:
        return (f"Cliff at l*={ell_star} sits below the ceiling d_r*L={ceiling}. "
                "The readout stops short of its algebraic limit; check training budget and capacity.")
    return (f"Cliff at l*={ell_star} sits above the ceiling d_r*L={ceiling}. "
            "Check the injection gates for leakage before trusting the result.")


def _fmt(v, spec=".3f"):
    return "-" if v is None or (isinstance(v, float) and not math.isfinite(v)) else format(v, spec)


def format_diagnose_table(rows, reports):
    lines = [f"{'l':>3} {'y_low':>7} {'y_arch':>7} {'y_high':>7}  {'rho [95% CI]':<22} note"]
    for r in reports:
        vals = rows[r.ell]
        means = np.mean(vals, axis=0) if len(vals[0]) == 3 else [None] * 3
        ci = f" [{_fmt(r.ci_low, '.2f')},{_fmt(r.ci_high, '.2f')}]" if r.ci_low is not None else ""
        rho = f"{_fmt(r.rho)}{ci}" if r.rho is not None else f"delta={_fmt(r.delta)}"
        lines.append(f"{r.ell:>3} {_fmt(means[0]):>7} {_fmt(means[1]):>7} {_fmt(means[2]):>7}  "
                     f"{rho:<22} {r.undefined_reason or ''}".rstrip())
    return "\n".join(lines) + "\n"


def cmd_diagnose(cfg, out):
    rows = read_triples(_require_input(cfg))
    if not rows:
        raise EmptyInputError("no rows in the diagnose input")
    reports = []
    for ell in sorted(rows):
        vals = np.array(rows[ell])
        if vals.shape[1] == 1:
            rho = float(vals[:, 0].mean())
            reports.append(metrics.MetricReport(ell=ell, rho=rho, delta=float("nan"), n_seeds=vals.shape[0]))
        else:
            reports.append(metrics.seedwise_report(ell, vals[:, 0], vals[:, 1], vals[:, 2],
                                                   cfg["B"], cfg["boot_seed"]))
    warnings = []
    if all(r.rho is None for r in reports):
        msg = "recovery fraction undefined at every degree; reporting raw gains only"
        logger.warning(msg)
        warnings.append(msg)
    ell_star, sharp = metrics.locate_cliff(reports, cfg["contrast"], cfg["min_rho"])
    ceiling = cfg["L"] * cfg["d_r"] if cfg["L"] is not None and cfg["d_r"] is not None else None
    text = guidance(ell_star, ceiling)
    table = format_diagnose_table(rows, reports)
    if sharp is not None:
        table += f"sharpness Xi = {_fmt(sharp.value, '.2f')} ({sharp.method})\n"
    table += text + "\n"
    report = {"rows": [r.to_dict() for r in reports], "ell_star": ell_star,
              "xi": None if sharp is None else sharp.value,
              "xi_method": None if sharp is None else sharp.method,
              "ceiling": ceiling, "ceiling_match": None if ceiling is None or ell_star is None
              else ell_star == ceiling, "guidance": text, "warnings": warnings}
    out.write_text("diagnose.txt", table)
    out.write_text("diagnose.json", dumps({**report, "resolved_config": cfg}))
    print(table, end="", file=sys.stderr)
    return report


def cmd_bandwidth(cfg, out):
    groups = read_point_cloud(_require_input(cfg))
    if not groups or all(len(s) == 0 for s, _ in groups):
        raise EmptyInputError("no atoms in the bandwidth input")
    params = bandwidth.BandwidthParams(cfg["r_cut"], cfg["shell_mu"], cfg["shell_sigma"], cfg["L_max"],
                                       cfg["threshold"], cfg["cutoff_l"], cfg["B"], cfg["boot_seed"],
                                       bandwidth.heavy_atom if cfg["heavy_only"] else None)
    summary = bandwidth.dataset_bandwidth(groups, params, n_jobs=cfg["threads"])
    if summary.n_atoms == 0:
        raise EmptyInputError("no atoms passed the filter")
    report = summary.to_dict()
    report["mean_w"] = np.mean([p.w for p in summary.profiles], axis=0)
    if cfg["csv"]:
        bandwidth.write_profiles_csv(out.stage(cfg["csv"]), summary.profiles)
    out.write_text("bandwidth.json", dumps({**report, "resolved_config": cfg}))
    return report


def cmd_spectrum(cfg, out):
    frames = read_xyz(_require_input(cfg))
    if not frames:
        raise EmptyInputError("input trajectory has no frames")
    spec = bandwidth.natural_energy_spectrum(frames, tuple(cfg["frame"]), cfg["anchor"], cfg["L_max"],
                                             cfg["center"])
    report = spec.to_dict()
    out.write_text("spectrum.json", dumps({**report, "resolved_config": cfg}))
    print(f"% power l>2, l>4, peaks: {spec.row()}", file=sys.stderr)
    return report


HANDLERS = {
    "inject": cmd_inject,
    "grid": cmd_grid,
    "hardceil": cmd_hardceil,
    "spn-train": cmd_spn_train,
    "diagnose": cmd_diagnose,
    "bandwidth": cmd_bandwidth,
    "spectrum": cmd_spectrum,
}


def _exit_code(exc):
    if isinstance(exc, (XYZParseError, configparser.Error, json.JSONDecodeError)):
        return EXIT_PARSE
    if isinstance(exc, (DegenerateFrameError, DegenerateAnchorError)):
        return EXIT_DEGENERATE
    if isinstance(exc, LeakageGateError):
        return EXIT_GATE_LEAKAGE
    if isinstance(exc, GateError):
        return EXIT_DEGENERATE
    if isinstance(exc, ResourceError):
        return EXIT_RESOURCE
    if isinstance(exc, EmptyInputError):
        return EXIT_EMPTY
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING
    if isinstance(exc, (ValueError, FileNotFoundError, KeyError, IndexError)):
        return EXIT_USAGE
    return EXIT_ERROR


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    given = vars(args)
    out = None
    try:
        cfg = resolve_config(args.command, given)
        cfg["command"] = args.command
        out = Outputs(cfg["out_dir"])
        report = HANDLERS[args.command](cfg, out)
    except Exception as exc:  # mapped to exit codes below
        code = _exit_code(exc)
        if code == EXIT_ERROR:
            raise
        print(f"specinj {args.command}: error: {exc}", file=sys.stderr)
        if out is not None and getattr(exc, "report", None):
            with open(out.path(f"{args.command}.error.json"), "w") as fh:
                fh.write(dumps({"error": str(exc), "exit_code": code, **exc.report}))
        return code
    out.commit()
    if given.get("json"):
        sys.stdout.write(dumps({**report, "resolved_config": cfg}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
