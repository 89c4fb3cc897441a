"""Command-line front end.

Subcommands: ``moments``, ``predict``, ``simulate``, ``verify``, ``separate``.
Exit codes: 0 success, 1 invalid input, 2 experiment failure or failed verification.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import predict_all
from .fastica import IterationPolicy, run as run_fastica
from .montecarlo import (MAX_EXCLUSION_RATE, ExperimentConfig, ExperimentFailure, TrialReport,
                         compare, run_experiment, theory_for)
from .nonlinearity import BUILTINS, NonSeparableError, builtin, compute_moments
from .preprocess import Scenario, Truth, preprocess
from .sources import SourceDistribution, read_observations_csv

log = logging.getLogger("fastica_asym")

CONFIG_VERSION = 1
PRESETS = {"paper-example": {"d": 3, "N": 5000, "trials": 5000}}
_CONFIG_KEYS = {"version", "d", "N", "trials", "scenario", "algorithm", "nonlinearity", "sources",
                "mixing", "seed", "policy", "alpha_tol", "scenario1_form", "outlier_sigma"}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


class UsageError(Exception):
    pass


# -- config -------------------------------------------------------------------

def _int(raw, field, lo=None):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)) or int(raw) != raw:
        raise ConfigError(field, f"expected an integer, got {raw!r}")
    if lo is not None and raw < lo:
        raise ConfigError(field, f"must be >= {lo}, got {raw}")
    return int(raw)


def _float(raw, field):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(field, f"expected a number, got {raw!r}")
    return float(raw)


def config_from_dict(doc: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a config document (plus CLI overrides) into an :class:`ExperimentConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a JSON object")
    doc = dict(doc)
    for key, val in (overrides or {}).items():
        if val is not None:
            doc[key] = val
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError("version", f"unsupported config version {version!r}")

    kw = {}
    d = _int(doc.get("d", 3), "d", lo=2)
    kw["d"] = d
    if "N" in doc:
        kw["N"] = _int(doc["N"], "N", lo=10 * d + 1)
    if "trials" in doc:
        kw["trials"] = _int(doc["trials"], "trials", lo=100)
    if "scenario" in doc:
        k = _int(doc["scenario"], "scenario")
        if k not in (1, 2, 3, 4):
            raise ConfigError("scenario", f"expected 1..4, got {k}")
        kw["scenario"] = k
    if "algorithm" in doc:
        if doc["algorithm"] not in ("dfl", "sym"):
            raise ConfigError("algorithm", f"expected 'dfl' or 'sym', got {doc['algorithm']!r}")
        kw["algorithm"] = doc["algorithm"]
    if "nonlinearity" in doc:
        if doc["nonlinearity"] not in BUILTINS:
            raise ConfigError("nonlinearity", f"expected one of {sorted(BUILTINS)}, got {doc['nonlinearity']!r}")
        kw["nonlinearity"] = doc["nonlinearity"]
    if "sources" in doc:
        kw["sources"] = _parse_sources(doc["sources"], d)
    if "mixing" in doc:
        mix = doc["mixing"]
        if not isinstance(mix, dict) or not ({"matrix", "seed"} & set(mix)):
            raise ConfigError("mixing", "expected {\"matrix\": [[...]]} or {\"seed\": n}")
        if "matrix" in mix:
            try:
                H = np.array(mix["matrix"], dtype=float)
            except (TypeError, ValueError) as exc:
                raise ConfigError("mixing.matrix", str(exc)) from None
            if H.shape != (d, d):
                raise ConfigError("mixing.matrix", f"expected {d}x{d}, got shape {H.shape}")
            if np.linalg.matrix_rank(H) < d:
                raise ConfigError("mixing.matrix", "matrix is singular")
            kw["H"] = H
        else:
            kw["mixing_seed"] = _int(mix["seed"], "mixing.seed", lo=0)
    if "seed" in doc:
        kw["master_seed"] = _int(doc["seed"], "seed", lo=0)
    if "policy" in doc:
        pol = doc["policy"]
        if not isinstance(pol, dict):
            raise ConfigError("policy", "expected an object")
        extra = sorted(set(pol) - {"tol", "max_sweeps"})
        if extra:
            raise ConfigError(f"policy.{extra[0]}", "unknown field")
        try:
            kw["policy"] = IterationPolicy(
                tol=_float(pol.get("tol", 1e-10), "policy.tol"),
                max_sweeps=_int(pol.get("max_sweeps", 500), "policy.max_sweeps", lo=2))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("policy", str(exc)) from None
    if "alpha_tol" in doc:
        kw["alpha_tol"] = _float(doc["alpha_tol"], "alpha_tol")
    if "scenario1_form" in doc:
        if doc["scenario1_form"] not in ("beta", "beta_squared", "printed"):
            raise ConfigError("scenario1_form", f"unknown form {doc['scenario1_form']!r}")
        kw["dfl1"] = doc["scenario1_form"]
    if "outlier_sigma" in doc:
        s = doc["outlier_sigma"]
        kw["outlier_sigma"] = None if s is None else _float(s, "outlier_sigma")
    try:
        return ExperimentConfig(**kw)
    except ValueError as exc:
        raise ConfigError("config", str(exc)) from None


def _parse_sources(raw, d):
    if isinstance(raw, dict):
        raw = [raw] * d
    if not isinstance(raw, list) or len(raw) != d:
        raise ConfigError("sources", f"expected one distribution object or a list of {d}")
    out = []
    for n, spec in enumerate(raw):
        if not isinstance(spec, dict):
            raise ConfigError(f"sources[{n}]", "expected an object")
        try:
            out.append(SourceDistribution.from_dict(spec))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"sources[{n}]", str(exc)) from None
    return tuple(out)


def _read_json(path, field):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(field, f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(field, f"{path} is not valid JSON ({exc.msg} at line {exc.lineno})") from None


def load_config(args) -> ExperimentConfig:
    doc = {}
    if getattr(args, "preset", None):
        doc.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        doc.update(_read_json(args.config, "--config"))
    over = {
        "scenario": getattr(args, "scenario", None),
        "algorithm": getattr(args, "algo", None),
        "nonlinearity": getattr(args, "nl", None),
        "seed": getattr(args, "seed", None),
        "trials": getattr(args, "trials", None),
        "N": getattr(args, "N", None),
    }
    return config_from_dict(doc, over)


# -- output helpers -----------------------------------------------------------

def _fmt(x) -> str:
    return "%.17g" % x


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _write_matrix_csv(path: Path, M: np.ndarray, prefix: str) -> None:
    header = [f"{prefix}{j + 1}" for j in range(M.shape[1])]
    path.write_text(_csv_text(header, [[float(v) for v in row] for row in M]))


# -- subcommands --------------------------------------------------------------

def cmd_moments(args) -> int:
    cfg = load_config(args)
    nl = builtin(cfg.nonlinearity)
    rows = []
    for n, src in enumerate(cfg.sources):
        m = compute_moments(src, nl, alpha_tol=cfg.alpha_tol)
        rows.append({"source": n, "nonlinearity": nl.name, **m.to_dict()})
    if args.format == "csv":
        keys = ["source", "nonlinearity", "alpha", "beta", "gamma", "eta", "tau", "skew"]
        _emit(_csv_text(keys, [[r[k] for k in keys] for r in rows]), args.out)
    else:
        _emit(_dump_json(rows), args.out)
    return 0


def cmd_predict(args) -> int:
    cfg = load_config(args)
    inp = cfg.theory_input(args.order)
    tables = predict_all(inp, dfl1=cfg.dfl1)
    if args.format == "csv":
        rows = []
        for t in tables:
            for i in range(inp.d):
                for j in range(inp.d):
                    rows.append([t.algorithm, t.scenario, i, j, float(t.V[i, j]), float(t.theorem_V[i, j])])
        _emit(_csv_text(["algorithm", "scenario", "i", "j", "V", "theorem_V"], rows), args.out)
    else:
        doc = {"config_hash": cfg.config_hash(), "tables": [t.to_dict() for t in tables]}
        _emit(_dump_json(doc), args.out)
    return 0


def _histogram_rows(report: TrialReport):
    for e in report.entries:
        edges = e["histogram"]["edges"]
        counts = e["histogram"]["counts"]
        pdf = e["overlay"]["pdf"]
        width = edges[1] - edges[0]
        for b in range(len(counts)):
            expected = pdf[b] * width * e["n"] if pdf is not None else float("nan")
            yield [e["i"], e["j"], float(edges[b]), float(edges[b + 1]), counts[b], float(expected)]


GNUPLOT_TEMPLATE = """\
# histogram of sqrt(N)(G_ij - delta_ij) with the predicted normal overlay
# usage: gnuplot {script}
set datafile separator ","
set terminal pngcairo size {width},{height}
set output "histograms.png"
set multiplot layout {d},{d}
set style fill solid 0.4
{panels}unset multiplot
"""

GNUPLOT_PANEL = """\
set title "G({i},{j})"
plot "{data}" every ::{first}::{last} using (($3+$4)/2):5 with boxes notitle, \\
     "" every ::{first}::{last} using (($3+$4)/2):6 with lines lw 2 notitle
"""


def gnuplot_script(report: TrialReport, data_name: str, script_name: str) -> str:
    panels = []
    row = 0
    for e in report.entries:
        nb = len(e["histogram"]["counts"])
        panels.append(GNUPLOT_PANEL.format(i=e["i"] + 1, j=e["j"] + 1, data=data_name,
                                           first=row, last=row + nb - 1))
        row += nb
    return GNUPLOT_TEMPLATE.format(script=script_name, d=report.d, width=300 * report.d,
                                   height=260 * report.d, panels="".join(panels))


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    report = run_experiment(cfg, threads=args.threads)
    files = {
        "report": "report.json",
        "theory": "theory.json",
        "histograms": "histograms.csv",
        "plot_script": "histograms.gp",
    }
    (out / files["report"]).write_text(report.to_json() + "\n")
    (out / files["theory"]).write_text(_dump_json(theory_for(cfg, report)))
    (out / files["histograms"]).write_text(_csv_text(
        ["i", "j", "bin_left", "bin_right", "count", "expected_count"], _histogram_rows(report)))
    (out / files["plot_script"]).write_text(gnuplot_script(report, files["histograms"], files["plot_script"]))
    manifest = {
        "config_hash": cfg.config_hash(),
        "tool_version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "outputs": dict(files, manifest="manifest.json"),
    }
    (out / "manifest.json").write_text(_dump_json(manifest))
    adj = report.adjudication
    if adj is not None:
        log.info("scenario-1 coefficient adjudication: winner %s (wins %s)", adj["winner"], adj["wins"])
    if not report.ok:
        raise ExperimentFailure(
            f"exclusion rate {report.exclusion_rate:.1%} exceeds {MAX_EXCLUSION_RATE:.0%} "
            f"({report.n_nonconverged} non-converged, {report.n_ambiguous} ambiguous, "
            f"{report.n_outliers} outliers of {report.n_trials})")
    return 0


def cmd_verify(args) -> int:
    rep_doc = _read_json(args.report, "--report")
    th_doc = _read_json(args.theory, "--theory")
    try:
        report = TrialReport.from_dict(rep_doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("--report", f"not a simulation report ({exc})") from None
    if "V" not in th_doc:
        raise ConfigError("--theory", "missing field V")
    verdict = compare(report, th_doc, rel_tol=args.rel_tol)
    doc = verdict.to_dict()
    doc["exclusion_rate"] = report.exclusion_rate
    doc["exclusion_ok"] = report.ok
    doc["passed"] = bool(verdict.passed and report.ok)
    _emit(_dump_json(doc), args.out)
    for r in verdict.entries:
        mark = {True: "ok", False: "FAIL", None: "-"}[r["passed"]]
        rel = "" if r["rel_error"] is None else f" rel={r['rel_error']:.3f}"
        print(f"G({r['i']},{r['j']}) emp={r['empirical_var']:.4g} pred={r['predicted_var']:.4g}{rel} {mark}",
              file=sys.stderr)
    return 0 if doc["passed"] else 2


def cmd_separate(args) -> int:
    try:
        y = read_observations_csv(args.input)
    except OSError as exc:
        raise ConfigError("--input", f"cannot read {args.input}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigError("--input", str(exc)) from None
    k = Scenario(args.scenario or 4)
    truth = None
    if args.truth:
        doc = _read_json(args.truth, "--truth")
        try:
            truth = Truth(mean=np.asarray(doc["mean"], dtype=float) if "mean" in doc else None,
                          cov=np.asarray(doc["cov"], dtype=float) if "cov" in doc else None)
        except (TypeError, ValueError) as exc:
            raise ConfigError("--truth", str(exc)) from None
    std = preprocess(y, k, truth)
    res = run_fastica(args.algo or "sym", std.x, builtin(args.nl or "tanh"),
                      init=args.seed if args.seed is not None else 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix_csv(out / "W.csv", res.W, "w")
    _write_matrix_csv(out / "sphering.csv", std.sphering, "c")
    _write_matrix_csv(out / "sources.csv", (res.W.T @ std.x).T, "s")
    if not res.all_converged:
        log.warning("some components did not converge within %d sweeps", IterationPolicy().max_sweeps)
        return 2
    return 0


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_experiment_flags(p, with_out=True):
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--scenario", type=int, choices=[1, 2, 3, 4])
    p.add_argument("--algo", choices=["dfl", "sym"])
    p.add_argument("--nl", choices=sorted(BUILTINS))
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--N", type=int)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fastica-asym", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("moments", help="moment table per source")
    _add_experiment_flags(m)
    m.add_argument("--format", choices=["json", "csv"], default="json")
    m.add_argument("--out")
    m.set_defaults(func=cmd_moments)

    pr = sub.add_parser("predict", help="asymptotic variance tables, both algorithms x four scenarios")
    _add_experiment_flags(pr)
    pr.add_argument("--order", type=lambda s: [int(v) for v in s.split(",")],
                    help="deflationary extraction order, e.g. 2,0,1")
    pr.add_argument("--format", choices=["json", "csv"], default="json")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("simulate", help="Monte Carlo run; writes report, theory, histograms, manifest")
    _add_experiment_flags(s)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="compare a report against a theory file")
    v.add_argument("--report", required=True)
    v.add_argument("--theory", required=True)
    v.add_argument("--rel-tol", type=float, default=0.15)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    sp = sub.add_parser("separate", help="run FastICA on a CSV of observations")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--algo", choices=["dfl", "sym"])
    sp.add_argument("--nl", choices=sorted(BUILTINS))
    sp.add_argument("--scenario", type=int, choices=[1, 2, 3, 4])
    sp.add_argument("--truth", help="JSON with true 'mean' and/or 'cov' (scenarios 1-3)")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_separate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    chatty = args.verbose or args.command == "simulate"
    logging.basicConfig(level=logging.INFO if chatty else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ExperimentFailure as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, NonSeparableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
