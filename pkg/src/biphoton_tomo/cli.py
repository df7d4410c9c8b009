"""Command-line front end: simulate, reconstruct, metrics, pipeline.

Runs are configured by a flat, typed key=value text file (# comments
allowed, unknown keys rejected) so every run is reproducible from its
config and seed.  Outputs are CSV/JSON files plus a manifest carrying a
SHA-256 hash of every written file; identical (config, seed) pairs
produce byte-identical outputs.

Exit codes: 0 success, 2 config error, 3 data error, 4 threshold miss.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .interferometer import (
    AcquisitionConfig,
    CoincidenceHistogram,
    EventStreams,
    generate_event_streams,
    read_events_csv,
    read_histogram_csv,
    sample_histogram,
    source_coincidence,
    write_events_csv,
    write_histogram_csv,
)
from .metrics import metrics_report, phase_rmse, waveform_fidelity
from .tomography import (
    SIX_SETTINGS,
    SixPack,
    TomographyError,
    TomographyPlan,
    reconstruct,
    result_summary,
    six_pack_expected,
    six_pack_sampled,
    write_result_csv,
    write_result_json,
)
from .waveform import (
    NS_TO_S,
    ComplexEnvelope,
    RabiParams,
    SourceSpec,
    damped_rabi_envelope,
    exponential_envelope,
    make_time_grid,
    read_envelope_csv,
    write_envelope_csv,
)

__all__ = ["ConfigError", "DataError", "RunConfig", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_THRESHOLD = 4


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Missing, malformed or inconsistent input data."""


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {text!r}") from exc


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {text!r}") from exc


def _scenario(text: str) -> str:
    allowed = ("degenerate_rabi", "nondegenerate_rabi", "exponential", "custom")
    if text not in allowed:
        raise ConfigError(f"scenario must be one of {allowed}, got {text!r}")
    return text


def _auto_or_float(text: str):
    return "auto" if text == "auto" else _float(text)


def _none_or_float(text: str):
    return None if text in ("none", "") else _float(text)


def _str(text: str) -> str:
    return text


# key -> (caster, default); the single source of truth for the config format
SCHEMA = {
    "scenario": (_scenario, "degenerate_rabi"),
    "seed": (_int, 1),
    "tau_min_ns": (_float, -200.0),
    "tau_max_ns": (_float, 200.0),
    "bin_width_ns": (_float, 1.0),
    "rabi_omega_rad_per_s": (_float, 2 * np.pi * 50e6),
    "rabi_gamma_per_s": (_float, 2.6e7),
    "rabi_phi0_rad": (_float, 0.0),
    "exp_gamma_per_s": (_float, 4.0e7),
    "custom_envelope_csv": (_str, ""),
    "delta_rad_per_s": (_float, 0.0),
    "pair_rate_per_s": (_float, 1.0e5),
    "omega_s0_rad_per_s": (_float, 2.414e15),
    "eta": (_float, 0.3),
    "measure_time_s": (_float, 20.0),
    "background_per_bin": (_float, 0.0),
    "residual_phase_rad": (_float, 0.0),
    "t_s_ns": (_float, 1.0),
    "t_l_ns": (_float, 5.8),
    "island_threshold": (_float, 0.05),
    "count_floor": (_float, 20.0),
    "reference_tau0_ns": (_auto_or_float, "auto"),
    "lambda0_window_ns": (_none_or_float, None),
    "delta_window_bins": (_int, 24),
    "event_duration_s": (_float, 50.0),
    "singles_background_s_per_s": (_float, 200.0),
    "singles_background_as_per_s": (_float, 200.0),
    "auto_window_ns": (_float, 5.0),
    "heralding_window_ns": (_none_or_float, None),
}

SCENARIO_PRESETS = {
    "degenerate_rabi": {"delta_rad_per_s": 0.0},
    "nondegenerate_rabi": {"delta_rad_per_s": 2 * np.pi * 43e6},
    "exponential": {"delta_rad_per_s": 2 * np.pi * 43e6, "measure_time_s": 100.0},
    "custom": {},
}


class RunConfig:
    """Validated configuration of one run; attribute access per schema key."""

    def __init__(self, values: dict):
        unknown = set(values) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = {key: default for key, (_, default) in SCHEMA.items()}
        merged.update(SCENARIO_PRESETS[values.get("scenario", merged["scenario"])])
        merged.update(values)
        self._values = merged
        self.validate()

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError as exc:
            raise AttributeError(key) from exc

    def to_dict(self) -> dict:
        return dict(sorted(self._values.items()))

    def validate(self):
        v = self._values
        if v["seed"] < 0:
            raise ConfigError("seed must be non-negative")
        if v["bin_width_ns"] <= 0:
            raise ConfigError("bin_width_ns must be positive")
        if v["tau_max_ns"] <= v["tau_min_ns"]:
            raise ConfigError("tau_max_ns must exceed tau_min_ns")
        if not 0 < v["eta"] <= 1:
            raise ConfigError("eta must be in (0, 1]")
        if v["measure_time_s"] <= 0 or v["event_duration_s"] <= 0:
            raise ConfigError("durations must be positive")
        if v["pair_rate_per_s"] < 0 or v["background_per_bin"] < 0:
            raise ConfigError("rates must be non-negative")
        if v["t_s_ns"] <= 0 or v["t_l_ns"] <= v["t_s_ns"]:
            raise ConfigError("need 0 < t_s_ns < t_l_ns")
        if not 0 < v["island_threshold"] < 1:
            raise ConfigError("island_threshold must be in (0, 1)")
        if v["scenario"] == "custom" and not v["custom_envelope_csv"]:
            raise ConfigError("custom scenario requires custom_envelope_csv")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        values = {}
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for line_no, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            caster, _ = SCHEMA[key]
            try:
                values[key] = caster(value.strip())
            except ConfigError as exc:
                raise ConfigError(f"{path}:{line_no}: {key}: {exc}") from exc
        return cls(values)


def build_grid(cfg: RunConfig):
    try:
        return make_time_grid(cfg.tau_min_ns, cfg.tau_max_ns, cfg.bin_width_ns)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_envelope(cfg: RunConfig, grid) -> ComplexEnvelope:
    if cfg.scenario in ("degenerate_rabi", "nondegenerate_rabi"):
        params = RabiParams(
            omega_e=cfg.rabi_omega_rad_per_s,
            gamma=cfg.rabi_gamma_per_s,
            phi0=cfg.rabi_phi0_rad,
        )
        return damped_rabi_envelope(params, grid)
    if cfg.scenario == "exponential":
        return exponential_envelope(cfg.exp_gamma_per_s, grid)
    try:
        env = read_envelope_csv(cfg.custom_envelope_csv)
    except (OSError, ValueError) as exc:
        raise DataError(f"custom envelope: {exc}") from exc
    return env


def build_source(cfg: RunConfig) -> SourceSpec:
    return SourceSpec.from_delta(
        delta=cfg.delta_rad_per_s,
        pair_rate=cfg.pair_rate_per_s,
        omega_s0=cfg.omega_s0_rad_per_s,
    )


def build_acquisition(cfg: RunConfig, grid) -> AcquisitionConfig:
    return AcquisitionConfig(
        eta=cfg.eta,
        bin_width=grid.bin_width * NS_TO_S,
        measure_time=cfg.measure_time_s,
        background_rate=cfg.background_per_bin,
        seed=cfg.seed,
    )


def build_plan(cfg: RunConfig) -> TomographyPlan:
    try:
        return TomographyPlan(
            t_s_ns=cfg.t_s_ns,
            t_l_ns=cfg.t_l_ns,
            island_threshold=cfg.island_threshold,
            count_floor=cfg.count_floor,
            reference_tau0_ns=cfg.reference_tau0_ns,
            lambda0_window_ns=cfg.lambda0_window_ns,
            delta_window_bins=cfg.delta_window_bins,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig, files: list[str]) -> dict:
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "delta_rad_per_s": cfg.delta_rad_per_s,
        "files": {name: _sha256(out_dir / name) for name in sorted(files)},
    }
    previous = out_dir / "manifest.json"
    if previous.exists():
        try:
            old = json.loads(previous.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            old = None
        if old and old.get("config") == manifest["config"] and old.get("command") == command:
            stale = {
                name
                for name, digest in old.get("files", {}).items()
                if name in manifest["files"] and manifest["files"][name] != digest
            }
            if stale:
                raise DataError(
                    f"rerun with identical config produced different content for {sorted(stale)}"
                )
    with open(previous, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _hist_filename(prefix: str, labels: tuple[str, str]) -> str:
    return f"hist_{prefix}_{labels[0].lower()}{labels[1].lower()}.csv"


def cmd_simulate(cfg: RunConfig, out_dir: Path) -> dict:
    """Forward-simulate one scenario: envelope, 13 histograms, events, manifest."""
    grid = build_grid(cfg)
    env = build_envelope(cfg, grid)
    grid = env.grid  # custom envelopes carry their own grid
    source = build_source(cfg)
    acq = build_acquisition(cfg, grid)

    out_dir.mkdir(parents=True, exist_ok=True)
    files = []

    write_envelope_csv(env, out_dir / "envelope.csv")
    files.append("envelope.csv")

    for prefix, t_ns in (("ts", cfg.t_s_ns), ("tl", cfg.t_l_ns)):
        expected = six_pack_expected(
            env, source, t_ns, acq, residual_phase=cfg.residual_phase_rad
        )
        sampled = six_pack_sampled(expected, cfg.seed)
        for _, hist in sampled.items():
            name = _hist_filename(prefix, hist.labels)
            write_histogram_csv(hist, out_dir / name)
            files.append(name)

    c12 = sample_histogram(source_coincidence(env, source, acq), cfg.seed)
    write_histogram_csv(c12, out_dir / "c12.csv")
    files.append("c12.csv")

    streams = generate_event_streams(
        env,
        source,
        acq,
        cfg.singles_background_s_per_s,
        cfg.singles_background_as_per_s,
        cfg.event_duration_s,
        cfg.seed,
    )
    write_events_csv(streams, out_dir / "events.csv")
    files.append("events.csv")

    return _write_manifest(out_dir, "simulate", cfg, files)


def _load_histograms(input_dir: Path):
    """Classify every histogram CSV in a directory by (delay, labels)."""
    if not input_dir.is_dir():
        raise DataError(f"input directory {input_dir} does not exist")
    sixes: dict[float, dict] = {}
    c12 = None
    for path in sorted(input_dir.glob("*.csv")):
        try:
            hist = read_histogram_csv(path)
        except ValueError:
            continue  # not a histogram CSV (envelope, events, result, ...)
        if hist.setting3 is None and hist.setting4 is None:
            c12 = hist
        else:
            sixes.setdefault(hist.delay_ns, {})[hist.labels] = hist
    return sixes, c12


def _assemble_six_pack(histograms: dict, delay_name: str, delay_ns: float) -> SixPack:
    missing = [pair for pair in SIX_SETTINGS if pair not in histograms]
    if missing:
        names = ", ".join(f"({l3},{l4})" for l3, l4 in missing)
        raise DataError(f"missing histogram for setting {names} at {delay_name}={delay_ns} ns")
    try:
        return SixPack.from_label_map(histograms)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def cmd_reconstruct(input_dir: Path, out_dir: Path, cfg: RunConfig | None) -> dict:
    """Reconstruct from histogram files; score against truth when present."""
    sixes, c12 = _load_histograms(input_dir)
    if c12 is None:
        raise DataError("missing direct coincidence histogram (c12)")
    if len(sixes) != 2:
        raise DataError(
            f"need six-packs at exactly two delays, found delays {sorted(sixes)}"
        )
    t_s, t_l = sorted(sixes)
    pack_fine = _assemble_six_pack(sixes[t_s], "T_s", t_s)
    pack_coarse = _assemble_six_pack(sixes[t_l], "T_l", t_l)

    if cfg is not None:
        plan = build_plan(cfg)
        if abs(plan.t_s_ns - t_s) > 1e-9 or abs(plan.t_l_ns - t_l) > 1e-9:
            raise DataError(
                f"config delays ({plan.t_s_ns}, {plan.t_l_ns}) ns do not match "
                f"data delays ({t_s}, {t_l}) ns"
            )
        background = cfg.background_per_bin
    else:
        plan = TomographyPlan(t_s_ns=t_s, t_l_ns=t_l)
        background = 0.0

    try:
        result = reconstruct(pack_fine, pack_coarse, c12, plan, background=background)
    except TomographyError as exc:
        raise DataError(str(exc)) from exc

    rmse = fidelity = None
    truth_path = input_dir / "envelope.csv"
    if truth_path.exists():
        truth = read_envelope_csv(truth_path)
        if truth.grid.same_lattice(result.grid):
            rmse = phase_rmse(result, truth)
            fidelity = waveform_fidelity(result, truth)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_result_csv(result, out_dir / "result.csv")
    summary = result_summary(result, rmse_vs_truth=rmse, fidelity=fidelity)
    write_result_json(summary, out_dir / "summary.json")
    return summary


def cmd_metrics(
    events_path: Path,
    cfg: RunConfig,
    out_dir: Path,
    streams: EventStreams | None = None,
) -> dict:
    """Correlation metrics from an event-stream file."""
    if streams is None:
        try:
            streams = read_events_csv(events_path)
        except OSError as exc:
            raise DataError(f"cannot read events: {exc}") from exc
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    grid = build_grid(cfg)
    heralding = cfg.heralding_window_ns
    if heralding is None:
        heralding = max(grid.tau_max, grid.bin_width)
    report = metrics_report(
        streams,
        grid,
        auto_window_s=cfg.auto_window_ns * NS_TO_S,
        heralding_window_s=heralding * NS_TO_S,
        split_seed=cfg.seed,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


THRESHOLD_RULES = {
    # key: (direction, description); "max" passes when value <= limit
    "phase_rmse_rad": ("max", "gauge-removed phase RMSE vs truth"),
    "fidelity": ("min", "waveform overlap fidelity vs truth"),
    "delta_rel_err": ("max", "relative error of the recovered frequency difference"),
    "delta_abs_err_rad_per_s": ("max", "absolute error of the recovered frequency difference"),
    "lambda0_abs_err_rad": ("max", "absolute error of the recovered residual phase"),
    "xi_step_abs_err_rad": ("max", "absolute error of the coarse-delay step at tau=0"),
    "cs": ("min", "Cauchy-Schwarz figure"),
    "gc": ("max", "heralded conditional autocorrelation"),
}


def _parse_thresholds(pairs: list[str]) -> dict:
    thresholds = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or key not in THRESHOLD_RULES:
            raise ConfigError(
                f"threshold must be key=value with key in {sorted(THRESHOLD_RULES)}, "
                f"got {pair!r}"
            )
        thresholds[key] = _float(value)
    return thresholds


def cmd_pipeline(cfg: RunConfig, out_dir: Path, thresholds: dict) -> tuple[dict, bool]:
    """simulate -> reconstruct -> metrics -> consolidated report."""
    manifest = cmd_simulate(cfg, out_dir)
    summary = cmd_reconstruct(out_dir, out_dir, cfg)
    report = cmd_metrics(out_dir / "events.csv", cfg, out_dir)

    delta_true = cfg.delta_rad_per_s
    step_true = 2.0 * delta_true * cfg.t_l_ns * NS_TO_S
    observed = {
        "phase_rmse_rad": summary.get("rmse_vs_truth"),
        "fidelity": summary.get("fidelity"),
        "delta_rel_err": (
            abs(summary["delta_hat_rad_per_s"] - delta_true) / abs(delta_true)
            if delta_true
            else None
        ),
        "delta_abs_err_rad_per_s": abs(summary["delta_hat_rad_per_s"] - delta_true),
        "lambda0_abs_err_rad": abs(summary["lambda0_hat_rad"] - cfg.residual_phase_rad),
        "xi_step_abs_err_rad": abs(summary["xi_step_rad"] - step_true),
        "cs": report["cs"],
        "gc": report["gc"],
    }

    checks = []
    all_passed = True
    for key, limit in sorted(thresholds.items()):
        direction, _ = THRESHOLD_RULES[key]
        value = observed.get(key)
        if value is None:
            passed = False
        elif direction == "max":
            passed = value <= limit
        else:
            passed = value >= limit
        all_passed &= passed
        checks.append({"key": key, "value": value, "limit": limit, "passed": passed})

    consolidated = {
        "reconstruction": summary,
        "metrics": report,
        "thresholds": checks,
        "passed": all_passed,
        "manifest_files": sorted(manifest["files"]),
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(consolidated, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return consolidated, all_passed


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig({})
    if getattr(args, "seed", None) is not None:
        values = cfg.to_dict()
        values["seed"] = args.seed
        cfg = RunConfig(values)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biphoton-tomo",
        description="Simulate and reconstruct temporal two-photon waveforms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="forward-model one scenario to CSV files")
    sim.add_argument("--config", type=Path, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", type=Path, required=True)

    rec = sub.add_parser("reconstruct", help="invert histogram files to a waveform")
    rec.add_argument("--in", dest="input_dir", type=Path, required=True)
    rec.add_argument("--config", type=Path, default=None)
    rec.add_argument("--seed", type=int, default=None)
    rec.add_argument("--out", type=Path, required=True)

    met = sub.add_parser("metrics", help="correlation metrics from an event file")
    met.add_argument("--events", type=Path, required=True)
    met.add_argument("--config", type=Path, default=None)
    met.add_argument("--seed", type=int, default=None)
    met.add_argument("--out", type=Path, required=True)

    pipe = sub.add_parser("pipeline", help="simulate, reconstruct and score in one go")
    pipe.add_argument("--config", type=Path, default=None)
    pipe.add_argument("--seed", type=int, default=None)
    pipe.add_argument("--out", type=Path, required=True)
    pipe.add_argument(
        "--threshold",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help=f"repeatable; keys: {', '.join(sorted(THRESHOLD_RULES))}",
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _load_config(args)
            manifest = cmd_simulate(cfg, args.out)
            print(f"simulate: wrote {len(manifest['files'])} files to {args.out}")
            return EXIT_OK
        if args.command == "reconstruct":
            cfg = RunConfig.from_file(args.config) if args.config else None
            summary = cmd_reconstruct(args.input_dir, args.out, cfg)
            print(json.dumps(summary, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "metrics":
            cfg = _load_config(args)
            report = cmd_metrics(args.events, cfg, args.out)
            print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "pipeline":
            cfg = _load_config(args)
            thresholds = _parse_thresholds(args.threshold)
            consolidated, passed = cmd_pipeline(cfg, args.out, thresholds)
            print(json.dumps(consolidated["thresholds"], indent=2, sort_keys=True))
            if not passed:
                print("pipeline: threshold miss", file=sys.stderr)
                return EXIT_THRESHOLD
            return EXIT_OK
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TomographyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
