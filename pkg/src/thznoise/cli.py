"""Command-line front end: ``thznoise single | ensemble | validate``.

Output files (all values SI, scientific notation, ``.`` decimal point):

``current_trace.csv``  ``t_s,i_total_A,i_system_A,i_noise_A``
``histogram.csv``      ``bin_lo_A,bin_hi_A,count``
``sigma_w.csv``        ``frequency_Hz,sigma_w_A``
``means.csv``          ``quantity,value``
``manifest.json``      config snapshot, version, timestamps, statuses, SHA-256 digests

The output directory is ``--out``, else ``output.directory`` from the
config, else ``$THZNOISE_OUT``, else ``./thznoise_out``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .config import config_to_dict, parse_config
from .ensemble import ExperimentConfig, flux_table_for, frozen, run_ensemble, run_experiment
from .errors import ConfigError, SimulationError
from .probe import TrajectoryWriter

log = logging.getLogger("thznoise")

ENV_OUT = "THZNOISE_OUT"
DEFAULT_OUT = "thznoise_out"

EXIT_OK, EXIT_CONFIG, EXIT_SIMULATION, EXIT_IO = 0, 1, 2, 3

TRACE_HEADER = ["t_s", "i_total_A", "i_system_A", "i_noise_A"]
HISTOGRAM_HEADER = ["bin_lo_A", "bin_hi_A", "count"]
SIGMA_HEADER = ["frequency_Hz", "sigma_w_A"]
MEANS_HEADER = ["quantity", "value"]


def _fmt(value) -> str:
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    return f"{float(value):.16e}"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    version: str = __version__
    started: str = dataclasses.field(default_factory=_now)
    finished: str = ""
    statuses: list = dataclasses.field(default_factory=list)
    outputs: dict = dataclasses.field(default_factory=dict)
    error: str | None = None

    def add(self, name: str, path: Path, out_dir: Path):
        self.outputs[name] = {"path": str(path.relative_to(out_dir)), "sha256": sha256(path)}

    def write(self, out_dir: Path) -> Path:
        """Atomically write ``manifest.json`` into ``out_dir``."""
        self.finished = _now()
        target = out_dir / "manifest.json"
        fd, tmp = tempfile.mkstemp(prefix=".manifest.", suffix=".json", dir=out_dir)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return target


def verify_manifest(out_dir) -> bool:
    """True when every recorded digest matches the file on disk."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    return all(sha256(out_dir / entry["path"]) == entry["sha256"]
               for entry in manifest["outputs"].values())


def cmd_single(cfg: ExperimentConfig, out_dir, index: int = 0) -> RunManifest:
    """Run one experiment and write its current trace (and optional dumps)."""
    from .plots import plot_trace

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="single", config=config_to_dict(cfg))
    if cfg.output.flux_table_csv:
        path = flux_table_for(cfg).to_csv(out_dir / "flux_table.csv")
        manifest.add("flux_table", path, out_dir)
    writer = None
    if cfg.output.trajectory_stride:
        writer = TrajectoryWriter(out_dir / "probe_trajectory.csv", cfg.output.trajectory_stride)
    try:
        trace = run_experiment(cfg, index, trajectory=writer)
    except SimulationError as exc:
        manifest.statuses = [{"index": index, "ok": False, "error": str(exc)}]
        manifest.error = str(exc)
        manifest.write(out_dir)
        raise
    finally:
        if writer is not None:
            writer.close()
    if writer is not None:
        manifest.add("trajectory", writer.path, out_dir)
    manifest.statuses = [{"index": index, "ok": True, "error": ""}]
    rows = zip(trace.t, trace.i_total, trace.i_system, trace.i_noise)
    manifest.add("current_trace", write_csv(out_dir / "current_trace.csv", TRACE_HEADER, rows),
                 out_dir)
    if cfg.output.plots:
        plot_trace(trace, out_dir / "fig3.svg")
        manifest.add("fig3", out_dir / "fig3.svg", out_dir)
    manifest.write(out_dir)
    return manifest


def cmd_ensemble(cfg: ExperimentConfig, out_dir, with_frozen_reference: bool = True):
    """Run the ensemble and write histogram, window sweep and means.

    The frozen-probe reference ensemble reuses the packet seeds of the
    coupled one, so its mean is the device-only current of the same draws.
    """
    from .plots import plot_frequency_histograms, plot_histogram

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command="ensemble", config=config_to_dict(cfg))
    try:
        stats = run_ensemble(cfg, threads=cfg.threads)
        reference = run_ensemble(frozen(cfg), threads=cfg.threads) if with_frozen_reference \
            else None
    except SimulationError as exc:
        manifest.error = str(exc)
        manifest.write(out_dir)
        raise
    manifest.statuses = stats.statuses
    edges, counts = stats.histogram
    rows = [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]
    manifest.add("histogram", write_csv(out_dir / "histogram.csv", HISTOGRAM_HEADER, rows),
                 out_dir)
    rows = [(f, stats.sigma_w[f]) for f in sorted(stats.sigma_w, reverse=True)]
    manifest.add("sigma_w", write_csv(out_dir / "sigma_w.csv", SIGMA_HEADER, rows), out_dir)
    means = [
        ("mean_measured_A", stats.mean_measured),
        ("mean_system_only_A", stats.mean_system_only),
        ("sample_sigma_A", stats.sample_sigma),
        ("n_experiments", stats.n_experiments),
        ("n_failed", stats.n_failed),
    ]
    if reference is not None:
        means.append(("frozen_probe_mean_A", reference.mean_measured))
    manifest.add("means", write_csv(out_dir / "means.csv", MEANS_HEADER, means), out_dir)
    if cfg.output.plots:
        marker = reference.mean_measured if reference is not None else stats.mean_system_only
        plot_histogram(edges, counts, out_dir / "fig4.svg", frozen_mean=marker,
                       mean_measured=stats.mean_measured)
        plot_frequency_histograms(stats.histograms, stats.sigma_w, out_dir / "fig5.svg")
        manifest.add("fig4", out_dir / "fig4.svg", out_dir)
        manifest.add("fig5", out_dir / "fig5.svg", out_dir)
    manifest.write(out_dir)
    return manifest, stats


def cmd_validate(tolerance_scale: float = 1.0, stream=None) -> bool:
    from .validate import format_report, run_validation

    results = run_validation(tolerance_scale=tolerance_scale)
    print(format_report(results), file=stream or sys.stdout)
    return all(r.passed for r in results)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--out", type=Path, help=f"output directory (default ${ENV_OUT})")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--experiments", type=int, help="number of ensemble experiments")
    common.add_argument("--threads", type=int, help="worker processes for the ensemble")
    common.add_argument("--stride", type=int, help="record the current every N steps")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="thznoise", description="Coupled quantum/probe THz current simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("single", parents=[common], help="run one experiment")
    sub.add_parser("ensemble", parents=[common], help="run a seeded ensemble")
    val = sub.add_parser("validate", parents=[common], help="run the built-in oracle checks")
    val.add_argument("--tolerance-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.experiments is not None:
        overrides["n_experiments"] = args.experiments
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.stride is not None:
        overrides["record_stride"] = args.stride
    try:
        return dataclasses.replace(cfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def output_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out is not None:
        return args.out
    if cfg.output.directory:
        return Path(cfg.output.directory)
    return Path(os.environ.get(ENV_OUT) or DEFAULT_OUT)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors, --help and --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return EXIT_OK if cmd_validate(args.tolerance_scale) else EXIT_SIMULATION
        cfg = load_config(args)
        out = output_dir(args, cfg)
        if args.command == "single":
            cmd_single(cfg, out)
        else:
            _, stats = cmd_ensemble(cfg, out)
            if stats.n_failed:
                log.warning("%d of %d experiments failed", stats.n_failed, len(stats.statuses))
        print(f"wrote {out}")
        return EXIT_OK
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except ValueError as exc:
        # ConfigError and the window/regime checks on an unusable configuration
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
