"""Command-line front end: ``python -m dpasync`` / ``dpasync``.

Settings come from defaults, then an optional ``key = value`` config file,
then flags. Every run writes CSV files plus a ``manifest.json`` into
``--out``; errors end with one ``error: <category>: <message>`` line on
stderr and a nonzero exit code.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import SingularMatrixError
from .filters import ALGORITHMS, Algorithm
from .harness import Actuation, MetricMode, MonteCarloResult, SimConfig, run_monte_carlo, trial_topology
from .network import ConnectivityError

logger = logging.getLogger("dpasync")

TRACE_HEADER = ["trial", "iteration", "node", "freq_error_hz", "phase_error_rad"]
AGGREGATE_HEADER = ["algorithm", "n_nodes", "connectivity", "snr_db", "iteration", "phase_std_rad_median",
                    "phase_std_rad_mean", "phase_std_rad_p10", "phase_std_rad_p90"]
CONVERGENCE_HEADER = ["algorithm", "trial", "convergence_iteration"]
TOPOLOGY_HEADER = ["node_i", "node_j", "adjacent", "weight"]

EXIT_CODES = {"usage": 2, "config": 2, "connectivity": 3, "numeric": 4, "io": 5}

INF = math.inf
# flag dest -> (SimConfig field, type, low, high, low is exclusive)
SETTINGS = {
    "nodes": ("n_nodes", int, 2, INF, False),
    "connectivity": ("connectivity", float, 0.05, 1.0, False),
    "snr_db": ("snr_db", float, -INF, INF, True),
    "trials": ("n_trials", int, 1, INF, False),
    "iterations": ("n_iterations", int, 1, INF, False),
    "seed": ("seed", int, 0, 2**64 - 1, False),
    "update_interval_s": ("T", float, 0.0, INF, True),
    "carrier_hz": ("fc", float, 0.0, INF, True),
    "sampling_hz": ("fs", float, 0.0, INF, True),
    "beta1": ("beta1", float, 0.0, INF, False),
    "beta2": ("beta2", float, 0.0, INF, False),
    "phase_noise_db": ("A", float, -INF, INF, True),
    "init_ppm": ("init_ppm", float, 0.0, INF, False),
}
CHOICES = {
    "algorithm": [a.value for a in ALGORITHMS] + ["all"],
    "metric": [m.value for m in MetricMode],
    "actuation": [a.value for a in Actuation],
}
# config-file keys may also use SimConfig field names
FILE_ALIASES = {field: dest for dest, (field, *_) in SETTINGS.items()}
FILE_ALIASES.update({"metric_mode": "metric", "threads": "threads"})

FIG2_NODES = (20, 40, 60, 80, 100)
FIG2_CONNECTIVITY = (0.2, 0.5)
FIG3_NODES = (20, 60)


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _flag(dest: str) -> str:
    return "--" + dest.replace("_", "-")


def _range_text(lo, hi, lo_open) -> str:
    if lo == -INF and hi == INF:
        return "finite values"
    if hi == INF:
        return f"{'>' if lo_open else '>='} {lo:g}"
    return f"[{lo:g}, {hi:g}]"


def check_value(dest: str, raw):
    """Convert and range-check one setting, naming its flag on failure."""
    if dest in CHOICES:
        value = str(raw).strip().lower()
        if value not in CHOICES[dest]:
            raise CliError("config", f"{_flag(dest)} must be one of {{{'|'.join(CHOICES[dest])}}}, got {raw!r}")
        return value
    if dest == "threads":
        rule = (None, int, 1, INF, False)
    else:
        rule = SETTINGS[dest]
    _, kind, lo, hi, lo_open = rule
    try:
        value = kind(raw) if kind is float else int(str(raw).strip())
    except (TypeError, ValueError):
        raise CliError("config", f"{_flag(dest)} expects {kind.__name__}, got {raw!r}") from None
    bad_low = value <= lo if lo_open else value < lo
    if (kind is float and math.isnan(value)) or bad_low or value > hi or (dest == "snr_db" and math.isinf(value)):
        raise CliError("config", f"{_flag(dest)} must lie in {_range_text(lo, hi, lo_open)}, got {raw}")
    return value


def read_config_file(path) -> dict:
    """Flat ``key = value`` file (``#`` comments, optional quotes) to checked settings."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise CliError("config", f"cannot parse {path}: {str(exc).splitlines()[0]}") from None
    out = {}
    for key, raw in cp["config"].items():
        dest = key.replace("-", "_")
        dest = FILE_ALIASES.get(dest, dest)
        if dest not in SETTINGS and dest not in CHOICES and dest != "threads":
            raise CliError("config", f"unknown key {key!r} in {path}")
        out[dest] = check_value(dest, raw.strip().strip("'\""))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpasync", description="Distributed Kalman-filter frequency/phase synchronization "
                                            "of an open-loop distributed phased array.")
    g = p.add_argument_group("experiment")
    g.add_argument("--nodes", help="number of nodes N (>= 2, default 100)")
    g.add_argument("--connectivity", help="edge probability c in [0.05, 1] (default 0.2)")
    g.add_argument("--snr-db", help="measurement SNR in dB (default 0)")
    g.add_argument("--trials", help="Monte Carlo trials (default 1000)")
    g.add_argument("--iterations", help="rounds per trial (default 300)")
    g.add_argument("--algorithm", help="dkf | kf-dfpc | kf-hcmci | ha-dkf | all (default all)")
    g.add_argument("--seed", help="master seed, 0 .. 2**64-1 (default 0)")
    g.add_argument("--update-interval-s", help="update interval T in seconds (default 1e-4)")
    g.add_argument("--carrier-hz", help="carrier frequency fc (default 1e9)")
    g.add_argument("--sampling-hz", help="sampling frequency fs (default 1e7)")
    g.add_argument("--beta1", help="Allan variance white-FM coefficient (default 5e-19)")
    g.add_argument("--beta2", help="Allan variance random-walk coefficient (default 5e-19)")
    g.add_argument("--phase-noise-db", help="integrated phase-noise power A in dB (default -53.46)")
    g.add_argument("--init-ppm", help="initial frequency spread, fractional (default 1e-4)")
    g.add_argument("--metric", help="paper-formula | deviation-from-mean (default paper-formula)")
    g.add_argument("--actuation", help="apply | observe (default apply)")
    g.add_argument("--preset", choices=["fig1", "fig2", "fig3"],
                   help="figure reproduction; sweeps override --nodes/--connectivity/--algorithm")
    o = p.add_argument_group("execution and output")
    o.add_argument("--config", metavar="FILE", help="key = value settings file; flags take precedence")
    o.add_argument("--out", default="results", metavar="DIR", help="output directory (default ./results)")
    o.add_argument("--threads", help="worker processes for trials (default 1)")
    o.add_argument("--traces", action="store_true", help="also write per-node trace CSVs")
    o.add_argument("--topology-csv", metavar="PATH", help="write trial 0's adjacency and weights")
    o.add_argument("-v", "--verbose", action="store_true")
    o.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def parse_config(argv=None):
    """Resolve settings to ``(SimConfig, algorithms, args)``.

    ``SimConfig.algorithm`` is the first selected algorithm.
    """
    args = build_parser().parse_args(argv)
    settings = read_config_file(args.config) if args.config else {}
    for dest in list(SETTINGS) + list(CHOICES) + ["threads"]:
        raw = getattr(args, dest, None)
        if raw is not None:
            settings[dest] = check_value(dest, raw)

    fields = {SETTINGS[d][0]: v for d, v in settings.items() if d in SETTINGS}
    if "metric" in settings:
        fields["metric_mode"] = settings["metric"]
    if "actuation" in settings:
        fields["actuation"] = settings["actuation"]
    algo = settings.get("algorithm", "all")
    algorithms = list(ALGORITHMS) if algo == "all" else [Algorithm(algo)]
    try:
        config = SimConfig(**fields, algorithm=algorithms[0])
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    args.threads = settings.get("threads", 1)
    return config, algorithms, args


# --- CSV ---------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(rows, header, path) -> Path:
    """Write rows under one header line; floats keep 17 significant digits."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise CliError("io", f"cannot write {path}: {exc.strerror or exc}") from None
    return path


def trace_rows(trials):
    for t in trials:
        if t.freq_errors is None:
            raise ValueError("trial traces were not kept")
        K, N = t.freq_errors.shape
        for k in range(K):
            for n in range(N):
                yield t.trial_index, k + 1, n, t.freq_errors[k, n], t.phase_errors[k, n]


def aggregate_rows(mc: MonteCarloResult):
    c = mc.config
    agg = mc.per_iteration()
    for k in range(c.n_iterations):
        yield (c.algorithm.value, c.n_nodes, c.connectivity, c.snr_db, k + 1,
               agg["median"][k], agg["mean"][k], agg["p10"][k], agg["p90"][k])


def steady_state_row(mc: MonteCarloResult):
    """One aggregate row summarizing each trial's steady-state std; ``iteration`` is the run length."""
    c, s = mc.config, mc.steady_state
    return (c.algorithm.value, c.n_nodes, c.connectivity, c.snr_db, c.n_iterations,
            np.median(s), np.mean(s), np.percentile(s, 10), np.percentile(s, 90))


def convergence_rows(mc: MonteCarloResult):
    for t in mc.trials:
        yield mc.config.algorithm.value, t.trial_index, t.convergence_iteration


def topology_rows(topology):
    n = topology.n
    for i in range(n):
        for j in range(n):
            yield i, j, int(topology.adjacency[i, j]), topology.weights[i, j]


def write_manifest(out_dir: Path, configs, outputs, argv) -> Path:
    manifest = {
        "tool": "dpasync",
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "command": list(argv),
        "configs": [c.to_dict() for c in configs],
        "outputs": [str(Path(p).name) for p in outputs],
    }
    path = out_dir / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        raise CliError("io", f"cannot write {path}: {exc.strerror or exc}") from None
    return path


# --- runs ----------------------------------------------------------------------

def _run(config: SimConfig, threads: int, keep_traces=False) -> MonteCarloResult:
    logger.info("running %s N=%d c=%g snr=%g dB, %d trials x %d iterations", config.algorithm.value,
                config.n_nodes, config.connectivity, config.snr_db, config.n_trials, config.n_iterations)
    return run_monte_carlo(config, threads=threads, keep_traces=keep_traces)


def _summary_line(mc: MonteCarloResult) -> str:
    c = mc.config
    return (f"{c.algorithm.value:9s} N={c.n_nodes:<4d} c={c.connectivity:<5g} snr={c.snr_db:<5g} "
            f"steady-state std {mc.steady_state_median():.6g} rad, "
            f"median convergence iteration {mc.median_convergence_iteration():g}")


def run_experiment(config, algorithms, out_dir: Path, threads=1, traces=False):
    results = [_run(replace(config, algorithm=a), threads, traces) for a in algorithms]
    outputs = [
        write_csv((r for mc in results for r in aggregate_rows(mc)), AGGREGATE_HEADER, out_dir / "aggregates.csv"),
        write_csv((r for mc in results for r in convergence_rows(mc)), CONVERGENCE_HEADER,
                  out_dir / "convergence.csv"),
    ]
    if traces:
        for mc in results:
            outputs.append(write_csv(trace_rows(mc.trials), TRACE_HEADER,
                                     out_dir / f"traces_{mc.config.algorithm.value}.csv"))
    return [mc.config for mc in results], outputs, [_summary_line(mc) for mc in results]


def run_figure_preset(preset: str, base: SimConfig, out_dir: Path, threads=1):
    """Run a figure preset on top of ``base``; returns (configs, output paths, summary lines)."""
    if preset == "fig1":
        configs = [replace(base, n_nodes=100, connectivity=0.2, snr_db=0.0, n_trials=1, algorithm=a)
                   for a in ALGORITHMS]
        results = [_run(c, threads, keep_traces=True) for c in configs]
        outputs = [write_csv(trace_rows(mc.trials), TRACE_HEADER, out_dir / f"fig1_traces_{mc.config.algorithm.value}.csv")
                   for mc in results]
        return configs, outputs, [_summary_line(mc) for mc in results]

    if preset == "fig2":
        configs = [replace(base, n_nodes=n, connectivity=c, snr_db=0.0, algorithm=a)
                   for c in FIG2_CONNECTIVITY for a in ALGORITHMS for n in FIG2_NODES]
        configs += [replace(base, n_nodes=n, connectivity=c, snr_db=10.0, algorithm=Algorithm.HA_DKF)
                    for c in FIG2_CONNECTIVITY for n in FIG2_NODES]
        results = [_run(c, threads) for c in configs]
        outputs = [
            write_csv([steady_state_row(mc) for mc in results], AGGREGATE_HEADER, out_dir / "fig2_steady_state.csv"),
            write_csv((r for mc in results for r in convergence_rows(mc)), CONVERGENCE_HEADER,
                      out_dir / "fig2_convergence.csv"),
        ]
        return configs, outputs, [_summary_line(mc) for mc in results]

    if preset == "fig3":
        configs = [replace(base, n_nodes=n, connectivity=0.2, snr_db=0.0, algorithm=a)
                   for n in FIG3_NODES for a in ALGORITHMS]
        results = [_run(c, threads) for c in configs]
        outputs = [
            write_csv((r for mc in results for r in aggregate_rows(mc)), AGGREGATE_HEADER,
                      out_dir / "fig3_aggregates.csv"),
            write_csv((r for mc in results for r in convergence_rows(mc)), CONVERGENCE_HEADER,
                      out_dir / "fig3_convergence.csv"),
        ]
        return configs, outputs, [_summary_line(mc) for mc in results]
    raise CliError("usage", f"unknown preset {preset!r}")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        config, algorithms, args = parse_config(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        out_dir = Path(args.out)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError("io", f"cannot create {out_dir}: {exc.strerror or exc}") from None

        extra = []
        if args.topology_csv:
            extra.append(write_csv(topology_rows(trial_topology(config, 0)), TOPOLOGY_HEADER, args.topology_csv))
        if args.preset:
            configs, outputs, lines = run_figure_preset(args.preset, config, out_dir, args.threads)
        else:
            configs, outputs, lines = run_experiment(config, algorithms, out_dir, args.threads, args.traces)
        write_manifest(out_dir, configs, outputs + extra, argv)
        for line in lines:
            print(line)
        return 0
    except CliError as exc:
        category, msg = exc.category, str(exc)
    except ConnectivityError as exc:
        category, msg = "connectivity", str(exc)
    except SingularMatrixError as exc:
        category, msg = "numeric", str(exc)
    except OSError as exc:
        category, msg = "io", f"{getattr(exc, 'filename', '') or ''} {exc.strerror or exc}".strip()
    except ValueError as exc:
        category, msg = "config", str(exc)
    print(f"error: {category}: {' '.join(msg.split())}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
