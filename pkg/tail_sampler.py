#!/usr/bin/env python3
"""
EPS Tail Sampler command line

Subcommands:
  generate   synthetic spans / alarms / ground truth for a scenario
  sample     run the sampling pipeline over a span file
  evaluate   quality metrics of one or more samples against the corpus
  bench      per-trace runtime and similarity cache hit rate

Exit codes: 0 success, 1 data error, 2 usage or configuration error.
"""

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from libtailsampler import __version__, create_state
from libtailsampler.config import Config, load_config
from libtailsampler.dpp_selector import cache_stats
from libtailsampler.errors import ConfigError, InvalidScenario, MalformedRecord, TailSamplerError
from libtailsampler.evaluation import (build_index, compare_rows, compute_metrics, format_table,
                                       mean_report, parse_seed_spec, random_sample,
                                       write_comparison_csv)
from libtailsampler.jsonl_io import (dumps, iter_lines, optional_writer, read_records, write_json,
                                     write_records)
from libtailsampler.pipeline import (PipelineSinks, SamplerVariant, aggregate_runtime,
                                     run_stream)
from libtailsampler.quota_allocator import AlarmFeed, parse_alarm_stream
from libtailsampler.run_manifest import RunManifest
from libtailsampler.trace_model import Trace, parse_trace_stream
from libtailsampler.workload_gen import ScenarioConfig, generate, preset_scenarios

logger = logging.getLogger("tail_sampler")

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2


# =========================================================================
# Input helpers
# =========================================================================

def load_traces(path: str, skip_malformed: bool) -> List[Trace]:
    """
    Parse a span file into traces sorted by arrival

    Raises:
        MalformedRecord: first bad line, unless skip_malformed
    """
    parsed = parse_trace_stream(iter_lines(path), source=path)
    malformed = [d for d in parsed.diagnostics if isinstance(d, MalformedRecord)]
    if malformed and not skip_malformed:
        raise malformed[0]
    if parsed.diagnostics:
        logger.warning(f"{len(parsed.diagnostics)} record problems in {path} (first: {parsed.first_error})")
    return sorted(parsed.traces, key=lambda t: (t.arrival, t.trace_id))


def load_alarms(path: Optional[str]) -> AlarmFeed:
    if path is None:
        return AlarmFeed()
    return parse_alarm_stream(iter_lines(path), source=path)


def load_sample_ids(path: str) -> List[str]:
    ids = []
    for line_no, record in enumerate(read_records(path), start=1):
        if not isinstance(record, dict) or not isinstance(record.get("trace_id"), str):
            raise MalformedRecord(line_no, "sample record needs a string trace_id", path)
        ids.append(record["trace_id"])
    return ids


def load_ground_truth(path: Optional[str]) -> Optional[Dict[str, bool]]:
    if path is None:
        return None
    truth = {}
    for line_no, record in enumerate(read_records(path), start=1):
        if not isinstance(record, dict) or "trace_id" not in record or "anomalous" not in record:
            raise MalformedRecord(line_no, "ground truth record needs trace_id and anomalous", path)
        truth[record["trace_id"]] = bool(record["anomalous"])
    return truth


def apply_sampling_flags(config: Config, args: argparse.Namespace) -> Config:
    overrides: Dict[str, Any] = {
        "allocator.base_budget_fraction": getattr(args, "rate", None),
        "pipeline.window_seconds": getattr(args, "window_seconds", None),
        "pipeline.variant": getattr(args, "variant", None),
        "selector.epsilon": getattr(args, "epsilon", None),
    }
    if getattr(args, "no_cache", False):
        overrides["pipeline.cache_enabled"] = False
    if getattr(args, "no_qpm_scaling", False):
        overrides["allocator.qpm_scaling_enabled"] = False
    return config.with_overrides(overrides)


def run_sampler(traces: Sequence[Trace], alarms: AlarmFeed, config: Config,
                sinks: Optional[PipelineSinks] = None):
    state = create_state(config)
    try:
        sets = list(run_stream(traces, alarms, state, sinks))
    finally:
        if sinks is not None:
            sinks.close()
    return sets, state


def sample_digest(sets) -> str:
    sha = hashlib.sha256()
    for s in sets:
        for selected in s.selected:
            sha.update((dumps(selected.to_record(s.window_id)) + "\n").encode("utf-8"))
    return sha.hexdigest()


# =========================================================================
# Subcommands
# =========================================================================

def resolve_scenario(args: argparse.Namespace, config: Config) -> ScenarioConfig:
    if args.scenario_file:
        try:
            with open(args.scenario_file, 'r', encoding='utf-8') as f:
                raw = json.load(f)
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read scenario file {args.scenario_file}: {e}")
        if not isinstance(raw, dict):
            raise InvalidScenario([f"{args.scenario_file} must hold one JSON object"])
        scenario = ScenarioConfig.from_dict(raw)
    else:
        name = args.scenario or config.workload_scenario
        presets = preset_scenarios()
        if name not in presets:
            raise ConfigError(f"Unknown scenario '{name}' (choose from {', '.join(presets)})")
        scenario = presets[name]
        overrides = config.workload_overrides
        if overrides:
            merged = scenario.to_dict()
            merged.update(overrides)
            scenario = ScenarioConfig.from_dict(merged)
    seed = args.seed if args.seed is not None else (None if args.scenario_file else config.workload_seed)
    if seed is not None and seed != scenario.seed:
        merged = scenario.to_dict()
        merged["seed"] = seed
        scenario = ScenarioConfig.from_dict(merged)
    return scenario


def cmd_generate(args: argparse.Namespace, config: Config) -> int:
    scenario = resolve_scenario(args, config)
    workload = generate(scenario)
    paths = workload.write(args.out)

    manifest = RunManifest("generate", {"scenario": scenario.to_dict()}, seed=scenario.seed)
    if args.scenario_file:
        manifest.add_input("scenario_file", args.scenario_file)
    for name, path in paths.items():
        manifest.add_output(name, path)
    manifest.write(args.out)

    print(f"Generated {workload.trace_count} traces ({len(workload.span_records)} spans) "
          f"for scenario '{scenario.name}' into {args.out}")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace, config: Config) -> int:
    config = apply_sampling_flags(config, args)
    out = Path(args.out)
    traces = load_traces(args.traces, args.skip_malformed)
    alarms = load_alarms(args.alarms)

    files = {
        "samples": out / "samples.jsonl",
        "telemetry": out / "telemetry.jsonl",
    }
    if args.passthrough:
        files["passthrough"] = out / "sampled_traces.jsonl"
    if args.debug:
        files["encoded"] = out / "encoded.jsonl"
        files["quota_plan"] = out / "quota_plan.jsonl"
        files["selection_trace"] = out / "selection_trace.jsonl"

    sinks = PipelineSinks(**{name: optional_writer(path) for name, path in files.items()})
    started = time.perf_counter()
    sets, state = run_sampler(traces, alarms, config, sinks)
    wall = time.perf_counter() - started

    if args.debug:
        files["templates"] = out / "templates.jsonl"
        write_records(files["templates"], state.template_store.dump_records())

    selected = sum(len(s.selected) for s in sets)
    runtime = {
        "traces": len(traces),
        "windows": len(sets),
        "selected": selected,
        "unspent": sum(s.unspent for s in sets),
        "wall_s": wall,
        "per_trace": aggregate_runtime(sets),
        "similarity_cache": cache_stats(state.similarity_cache),
    }
    files["runtime"] = out / "runtime.json"
    write_json(files["runtime"], runtime)

    manifest = RunManifest("sample", config.resolved())
    manifest.add_input("traces", args.traces)
    if args.alarms:
        manifest.add_input("alarms", args.alarms)
    for name, path in files.items():
        manifest.add_output(name, path, volatile=name in ("telemetry", "runtime"))
    manifest.write(out)

    print(f"Sampled {selected} of {len(traces)} traces over {len(sets)} windows into {out}")
    return EXIT_OK


def _sample_name(spec: str) -> Tuple[str, str]:
    if "=" in spec:
        name, _, path = spec.partition("=")
        return name, path
    p = Path(spec)
    return (f"{p.parent.name}/{p.stem}" if p.parent.name else p.stem), spec


def cmd_evaluate(args: argparse.Namespace, config: Config) -> int:
    traces = load_traces(args.traces, args.skip_malformed)
    truth = load_ground_truth(args.ground_truth)
    index = build_index(traces, config.anomaly_config(), truth, config.rare_max)

    reports = {}
    rows = []
    first_rate = None
    for spec in args.samples:
        name, path = _sample_name(spec)
        report = compute_metrics(index, load_sample_ids(path))
        reports[name] = report
        rows.append((name, f"{report.actual_rate:.6f}", None, report))
        if first_rate is None:
            first_rate = report.actual_rate

    if args.baseline_random:
        seeds = args.baseline_random
        rate = args.rate if args.rate is not None else first_rate
        if rate is None or rate <= 0:
            raise ConfigError("--baseline-random needs --rate or a non-empty sample to infer it from")
        ids = [t.trace_id for t in sorted(traces, key=lambda t: t.trace_id)]
        runs = []
        for seed in seeds:
            report = compute_metrics(index, random_sample(ids, rate, seed))
            runs.append(report)
            rows.append(("random", f"{rate:.6f}", seed, report))
        reports["random" if len(runs) == 1 else f"random(mean of {len(runs)})"] = mean_report(runs)

    out = Path(args.out)
    metrics_path = out / "metrics.json"
    csv_path = out / "comparison.csv"
    write_json(metrics_path, {
        "reports": {name: r.to_dict() for name, r in reports.items()},
        "config": config.resolved(),
        "baseline_seeds": args.baseline_random or [],
    })
    write_comparison_csv(csv_path, compare_rows(rows))

    manifest = RunManifest("evaluate", config.resolved())
    manifest.add_input("traces", args.traces)
    for spec in args.samples:
        name, path = _sample_name(spec)
        manifest.add_input(f"sample:{name}", path)
    if args.ground_truth:
        manifest.add_input("ground_truth", args.ground_truth)
    manifest.add_output("metrics", metrics_path)
    manifest.add_output("comparison", csv_path)
    manifest.write(out)

    print(format_table(reports))
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, config: Config) -> int:
    config = apply_sampling_flags(config, args)
    traces = load_traces(args.traces, args.skip_malformed)
    alarms = load_alarms(args.alarms)

    sinks = None
    if args.out:
        sinks = PipelineSinks(telemetry=optional_writer(Path(args.out) / "telemetry.jsonl"))
    sets, state = run_sampler(traces, alarms, config, sinks)

    runtime = aggregate_runtime(sets)
    stats = cache_stats(state.similarity_cache)
    digest = sample_digest(sets)
    report = {
        "traces": len(traces),
        "windows": len(sets),
        "per_trace": runtime,
        "similarity_cache": stats,
        "sample_digest": digest,
    }

    def fmt(value):
        return "n/a" if value is None else f"{value:.3f}"

    print(f"traces={len(traces)} windows={len(sets)}")
    print(f"per-trace ms: mean={fmt(runtime['mean_ms'])} p50={fmt(runtime['p50_ms'])} p99={fmt(runtime['p99_ms'])}")
    print(f"cache hit rate: {stats['hit_rate']:.3f} ({stats['hits']} hits, {stats['misses']} misses)")
    print(f"sample digest: {digest}")

    if args.out:
        out = Path(args.out)
        write_json(out / "bench.json", report)
        manifest = RunManifest("bench", config.resolved())
        manifest.add_input("traces", args.traces)
        if args.alarms:
            manifest.add_input("alarms", args.alarms)
        manifest.add_output("bench", out / "bench.json", volatile=True)
        manifest.add_output("telemetry", out / "telemetry.jsonl", volatile=True)
        manifest.write(out)
    return EXIT_OK


# =========================================================================
# Argument parsing
# =========================================================================

def _rate(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError("rate must be in (0, 1]")
    return value


def _seed_spec(text: str) -> List[int]:
    try:
        return parse_seed_spec(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _add_sampling_flags(p: argparse.ArgumentParser, rate_required: bool) -> None:
    p.add_argument("--traces", required=True, help="Span JSONL file")
    p.add_argument("--alarms", default=None, help="Alarm JSONL file")
    p.add_argument("--rate", type=_rate, required=rate_required, default=None if rate_required else 0.05,
                   help="Target sampling rate in (0, 1]")
    p.add_argument("--variant", choices=[v.value for v in SamplerVariant], default=None,
                   help="Sampler variant (default from config: full)")
    p.add_argument("--window-seconds", type=float, default=None, help="Buffer window length")
    p.add_argument("--epsilon", type=float, default=None, help="Greedy early-stop threshold")
    p.add_argument("--no-cache", action="store_true", help="Disable the similarity cache")
    p.add_argument("--no-qpm-scaling", action="store_true", help="Disable traffic-drop budget scaling")
    p.add_argument("--skip-malformed", action="store_true",
                   help="Skip malformed span lines instead of failing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="EPS tail-based trace sampler")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Config file (default: config_default.json)")
    common.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="Generate a synthetic workload")
    g.add_argument("--scenario", default=None, help="Preset scenario name")
    g.add_argument("--scenario-file", default=None, help="Scenario JSON file")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True, help="Output directory")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("sample", parents=[common], help="Run the sampler")
    _add_sampling_flags(s, rate_required=True)
    s.add_argument("--out", required=True, help="Output directory")
    s.add_argument("--debug", action="store_true",
                   help="Also write templates, encoded traces, quota plans and selection steps")
    s.add_argument("--passthrough", action="store_true",
                   help="Also write the full span records of selected traces")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("evaluate", parents=[common], help="Score samples against the corpus")
    e.add_argument("--traces", required=True, help="Corpus span JSONL file")
    e.add_argument("--samples", nargs="+", required=True, help="Sample files, optionally name=path")
    e.add_argument("--ground-truth", default=None, help="Ground truth JSONL file")
    e.add_argument("--baseline-random", type=_seed_spec, default=None, help="seed=N or seeds=A-B")
    e.add_argument("--rate", type=_rate, default=None, help="Random baseline rate (default: first sample's)")
    e.add_argument("--skip-malformed", action="store_true")
    e.add_argument("--out", required=True, help="Output directory")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", parents=[common], help="Measure per-trace runtime")
    _add_sampling_flags(b, rate_required=False)
    b.add_argument("--out", default=None, help="Optional output directory")
    b.set_defaults(func=cmd_bench)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except ConfigError as e:
        logging.basicConfig(level=logging.ERROR)
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE

    # Setup logging
    level = args.log_level or config.log_level.upper()
    logging.basicConfig(
        level=getattr(logging, level),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    try:
        return args.func(args, config)
    except (ConfigError, InvalidScenario) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except TailSamplerError as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
