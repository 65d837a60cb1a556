"""Command-line experiment runner.

Every subcommand writes ``<subcommand>-<run_id>.csv`` files into the output
directory plus a JSON manifest with the config hash and seed.  The run id
is a hash of the subcommand, the effective config, the seed and any
per-file key, so rerunning the same command rewrites the same files with
the same bytes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .harness import DataPattern
from .config import ConfigError, ExperimentConfig, load_config, write_calibrated

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class InputError(RuntimeError):
    pass


class Run:
    """Output bookkeeping for one subcommand invocation."""

    def __init__(self, name: str, cfg: ExperimentConfig, seed: int, out_dir: Path):
        self.name, self.cfg, self.seed = name, cfg, seed
        self.out_dir = out_dir
        self.outputs = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def run_id(self, key="") -> str:
        text = f"{self.name}|{self.cfg.digest()}|{self.seed}|{key}"
        return hashlib.sha1(text.encode()).hexdigest()[:12]

    def path(self, key="", suffix=".csv") -> Path:
        return self.out_dir / f"{self.name}-{self.run_id(key)}{suffix}"

    def write_rows(self, fields, rows, key="", **meta) -> Path:
        path = self.path(key)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fields, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: _cell(v) for k, v in r.items()})
        self.record(path, **meta)
        return path

    def record(self, path: Path, **meta):
        self.outputs.append({"file": path.name, **meta})

    def manifest(self, argv) -> Path:
        path = self.out_dir / f"manifest-{self.name}-{self.run_id()}.json"
        doc = {"subcommand": self.name, "run_id": self.run_id(), "seed": self.seed,
               "config_sha256": self.cfg.digest(), "version": __version__,
               "argv": list(argv), "outputs": self.outputs,
               "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if np.isfinite(v) else str(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _key_count_rows(counts, key_name="key"):
    return [{key_name: i, "count": int(c)} for i, c in enumerate(counts)]


# --- subcommands -------------------------------------------------------------

def cmd_gen_device(args, cfg, run):
    """Describe the device: geometry, row-bit wiring and column layout."""
    dev = cfg.device(run.seed)
    g, amap, var = dev.geometry, dev.address_map, dev.variation
    rows = [{"field": k, "value": getattr(g, k)} for k in (
        "chips_per_dimm", "banks_per_chip", "subarrays_per_bank", "mats_per_subarray_row")]
    rows.append({"field": "seed", "value": dev.seed})
    rows.append({"field": "bank", "value": dev.bank})
    rows.append({"field": "row_xor_mask", "value": amap.row_xor_mask})
    for k, ext in enumerate(amap.row_bit_permutation):
        rows.append({"field": f"internal_row_bit_{k}", "value": ext})
    for name in var.field_names():
        val = getattr(var, name)
        if isinstance(val, dict):
            rows += [{"field": f"base_{p}", "value": v} for p, v in val.items()]
        else:
            rows.append({"field": name, "value": val})
    run.write_rows(["field", "value"], rows, kind="device")
    layout_path = run.path("layout")
    dev.layout.to_csv(layout_path)
    run.record(layout_path, kind="column_layout")
    print(f"device seed {dev.seed}: {g.rows_per_bank} rows x {g.columns_per_row} columns "
          f"per bank, row bits {amap.row_bit_permutation}")


def _patterns(cfg):
    return [DataPattern.parse(p) for p in cfg.get_list("harness", "patterns")]


def _optional_int(cfg, section, key):
    raw = cfg.get_str(section, key)
    return None if raw == "" else cfg.get_int(section, key)


def cmd_sweep(args, cfg, run):
    """Lower one parameter over the sweep grid; one per-residue CSV per value."""
    from .harness import aggregate_by_row_mod, evenly_spaced, sweep
    dev = cfg.device(run.seed)
    param = cfg.get_str("harness", "sweep_param")
    values = cfg.get_list("harness", "sweep_values", float)
    modulus = cfg.get_int("harness", "modulus")
    cols = evenly_spaced(dev.geometry.columns_per_row,
                         _optional_int(cfg, "harness", "row_sweep_columns"))
    iterations = cfg.get_int("harness", "iterations")
    keys = cfg.get_str("aggregate", "row_keys")
    amap = dev.address_map if keys == "internal" else None
    logs = sweep(dev, param, values, cfg.env(), _patterns(cfg), iterations, cols=cols)
    for v, log in logs.items():
        residue = aggregate_by_row_mod(log, modulus, amap)
        run.write_rows(["key", "count"], _key_count_rows(residue), key=f"{param}={v}",
                       param=param, value=v, kind="residue")
        if args.write_log:
            path = run.path(f"{param}={v}", "-log.csv")
            log.to_csv(path)
            run.record(path, param=param, value=v, kind="error_log")
        print(f"{param}={v:g} ns: {log.erroneous_requests()} erroneous requests")


def _read_log(path):
    from .harness import ErrorLog
    if not Path(path).exists():
        raise InputError(f"input file {path} not found")
    return ErrorLog.from_csv(path)


def cmd_aggregate(args, cfg, run):
    from .harness import (aggregate_by_burst_bit, aggregate_by_column, aggregate_by_row_mod,
                          per_row_counts, sort_and_overlay_rows)
    if not args.input:
        raise InputError("aggregate needs --input ERROR_LOG.csv")
    log = _read_log(args.input)
    dev = cfg.device(run.seed)
    g = dev.geometry
    kind = cfg.get_str("aggregate", "kind")
    amap = dev.address_map if cfg.get_str("aggregate", "row_keys") == "internal" else None
    modulus = cfg.get_int("harness", "modulus")
    if kind == "row_mod":
        counts = aggregate_by_row_mod(log, modulus, amap)
    elif kind == "row":
        counts = per_row_counts(log, g.rows_per_bank, amap)
    elif kind == "column":
        counts = aggregate_by_column(log, g.columns_per_row)
    elif kind == "burst_bit":
        counts = aggregate_by_burst_bit(log)
    elif kind == "sorted":
        counts, order, _ = sort_and_overlay_rows(log, g.rows_per_bank, modulus, amap)
        rows = [{"key": int(k), "count": int(c)} for k, c in zip(order, counts)]
        run.write_rows(["key", "count"], rows, key=kind, kind=kind)
        return
    else:
        raise ConfigError(f"{cfg.source.at('aggregate', 'kind')}: unknown aggregation {kind!r}")
    run.write_rows(["key", "count"], _key_count_rows(counts), key=kind, kind=kind)
    print(f"{kind}: {int(np.sum(counts))} total over {len(counts)} keys")


def _read_counts(path):
    if not Path(path).exists():
        raise InputError(f"input file {path} not found")
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"ext_row", "count"} <= set(reader.fieldnames or []):
            raise InputError(f"{path}: expected columns ext_row,count")
        for line_no, r in enumerate(reader, start=2):
            try:
                rows[int(r["ext_row"])] = float(r["count"])
            except ValueError as exc:
                raise InputError(f"{path}:{line_no}: {exc}") from None
    n = max(rows) + 1 if rows else 0
    counts = np.zeros(n)
    for k, v in rows.items():
        counts[k] = v
    return counts


def cmd_infer_map(args, cfg, run):
    """Estimate the row-bit permutation from per-row counts (file or device run)."""
    from .harness import per_row_bit_counts, run_patterns
    from .mapping import estimate_row_mapping
    from .variation import STANDARD_TIMING
    nbits = cfg.get_int("mapping", "nbits")
    if args.input:
        counts = _read_counts(args.input)
        nbits = min(nbits, max(1, len(counts).bit_length() - 1))
    else:
        dev = cfg.device(run.seed)
        n = _optional_int(cfg, "mapping", "rows") or dev.geometry.rows_per_bank
        applied = STANDARD_TIMING.with_value("tRP", cfg.get_float("mapping", "trp"))
        log = run_patterns(dev, applied, cfg.env(), [DataPattern()], 1,
                           rows=np.arange(n, dtype=np.int64))
        counts = per_row_bit_counts(log, n, cfg.get_list("mapping", "beats", int))
        path = run.path("counts")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ext_row", "count"])
            w.writerows(enumerate(counts.tolist()))
        run.record(path, kind="per_row_counts")
    est = estimate_row_mapping(counts, nbits, cfg.get_str("mapping", "method"))
    rows = [{"internal_bit": k, "external_bit": est.permutation[k],
             "confidence": round(float(est.confidence[k]), 6)}
            for k in reversed(range(est.nbits))]
    run.write_rows(["internal_bit", "external_bit", "confidence"], rows, kind="mapping")
    print(est.report())


def cmd_profile(args, cfg, run):
    from .ecc import ShuffleLayout
    from .profiling import (ProfileOutcome, default_grid, profile, select_random_rows,
                            select_test_rows)
    from .variation import PARAMS
    dev = cfg.device(run.seed)
    grids = {}
    floor = cfg.get_float("profiling", "grid_floor")
    clock = cfg.get_float("profiling", "clock_period")
    for p in PARAMS:
        grid = cfg.get_list("profiling", p.lower() + "_grid", float)
        grids[p] = grid or default_grid(p, floor, clock)
    choice = cfg.get_str("profiling", "row_choice")
    regions = select_random_rows(dev, dev.seed) if choice == "random" else select_test_rows(dev)
    layout = ShuffleLayout.named(cfg.get_str("profiling", "shuffle"))
    rows = []
    for env in cfg.env_grid():
        out = cfg._validated("profiling", "margin_cycles", lambda: profile(
            dev, env, grids, _patterns(cfg), regions, cfg.get_int("profiling", "margin_cycles"),
            clock, layout))
        rows += [{"seed": dev.seed, **r} for r in out.rows()]
        print(f"-- {env.temperature:g} C, {env.refresh_interval:g} ms")
        print(out.report(), end="")
    run.write_rows(("seed",) + ProfileOutcome.FIELDS, rows, kind="profile")


def _seeds(args, cfg):
    return [args.seed] if args.seed is not None else cfg.seeds()


def _ecc_rows(cfg):
    n = _optional_int(cfg, "ecc", "rows")
    return None if n is None else np.arange(n, dtype=np.int64)


def cmd_ecc_analyze(args, cfg, run):
    """Correctable fraction with and without shuffling, per device seed."""
    from .ecc import ShuffleLayout, correctable_fraction
    from .experiments import SHUFFLE_FIELDS, mean_relative_gain, shuffle_comparison
    from .variation import EnvConditions
    layout = cfg.get_str("ecc", "layout")
    check_chip = cfg.get_bool("ecc", "check_chip")
    if args.input:
        log = _read_log(args.input)
        shuffled = ShuffleLayout.named(layout, min(log.chips, 8), log.beats)
        a, b = correctable_fraction(log, None, check_chip), correctable_fraction(
            log, shuffled, check_chip)
        rows = [{"seed": run.seed, "source": Path(args.input).name, "codewords": "",
                 "identity_fraction": float("nan") if a is None else a,
                 "shuffled_fraction": float("nan") if b is None else b}]
    else:
        source = cfg.get_str("ecc", "source")
        env = EnvConditions(cfg.get_float("ecc", "temperature"),
                            cfg.get_float("env", "refresh_interval"))
        devices = (cfg.device(s) for s in _seeds(args, cfg))
        rows = shuffle_comparison(devices, source, cfg.get_float("ecc", "trp"), env, layout,
                                  check_chip, rows=_ecc_rows(cfg),
                                  process_trp=cfg.get_float("ecc", "process_trp"),
                                  n_requests=cfg.get_int("ecc", "n_requests"))
        print(f"mean relative gain from {layout} shuffling: {mean_relative_gain(rows):+.1%}")
    run.write_rows(SHUFFLE_FIELDS, rows, kind="ecc")


def cmd_circuit_sim(args, cfg, run):
    from .circuit import check_orderings, simulate_access, time_to_ready
    params = cfg.circuit()
    act, pre = cfg.get_float("circuit", "act_time"), cfg.get_float("circuit", "pre_time")
    row, col = cfg.get_int("circuit", "row"), cfg.get_int("circuit", "col")
    wf = simulate_access(row, col, act, pre, params, cfg.get_float("circuit", "end_time"))
    path = run.path(f"cell={row},{col}")
    wf.to_csv(path)
    run.record(path, kind="waveform", row=row, col=col)
    print(f"cell ({row}, {col}): bitline ready at {time_to_ready(wf, params):.3f} ns")
    rep = check_orderings(params, act, pre)
    for k, ok in rep.holds.items():
        print(f"ordering {k}: {'holds' if ok else 'VIOLATED'}")


def cmd_calibrate(args, cfg, run):
    from .calibration import CalibrationTargets, calibrate, verify
    from .harness import evenly_spaced
    # requirements are fitted at the reference environment, so the shipped
    # coefficients do not influence the fit
    dev = cfg.device(run.seed)
    targets = CalibrationTargets(
        applied=cfg.get_float("calibration", "trp"),
        temp_high=cfg.get_float("calibration", "temp_high"),
        temp_reduction=cfg.get_float("calibration", "temp_reduction"),
        refresh_long=cfg.get_float("calibration", "refresh_long"),
        refresh_reduction=cfg.get_float("calibration", "refresh_reduction"),
        tolerance=cfg.get_float("calibration", "tolerance"))
    cols = _optional_int(cfg, "calibration", "columns")
    cols = None if cols is None else evenly_spaced(dev.geometry.columns_per_row, cols)
    patterns = _patterns(cfg)
    res = calibrate(dev, targets, patterns, cols=cols)
    print(res.note())
    rows = [{"quantity": "temp_coeff", "value": res.temp_coeff},
            {"quantity": "refresh_coeff", "value": res.refresh_coeff},
            {"quantity": "base_count", "value": res.base_count},
            {"quantity": "hot_count", "value": res.hot_count},
            {"quantity": "long_count", "value": res.long_count}]
    if args.verify:
        fitted = dev.with_variation(dev.variation.replace(temp_coeff=res.temp_coeff,
                                                          refresh_coeff=res.refresh_coeff))
        chk = verify(fitted, targets, patterns, cols=cols)
        rows += [{"quantity": "temp_reduction", "value": chk.temp_reduction},
                 {"quantity": "refresh_reduction", "value": chk.refresh_reduction},
                 {"quantity": "temp_cosine", "value": chk.temp_cosine},
                 {"quantity": "refresh_cosine", "value": chk.refresh_cosine}]
        print(f"harness check: temperature reduction {chk.temp_reduction:.4f}, refresh "
              f"reduction {chk.refresh_reduction:.4f}, cosines {chk.temp_cosine:.4f} / "
              f"{chk.refresh_cosine:.4f}")
    run.write_rows(["quantity", "value"], rows, kind="calibration")
    cols_note = "all" if cols is None else f"{len(cols)}"
    note = (f"fit on tRP={targets.applied} ns, seed {dev.seed}, {len(patterns)} patterns, "
            f"all rows, {cols_note} columns\n{res.note()}")
    dest = write_calibrated(res.temp_coeff, res.refresh_coeff, args.calibrated_out, note)
    print(f"wrote {dest}")


def cmd_report(args, cfg, run):
    """Latency summary per seed and env for standard timings, profiling with
    identity codeword grouping, and profiling with shuffling."""
    from .accounting import SUMMARY_FIELDS, summary_row
    from .ecc import ShuffleLayout
    from .profiling import default_grid, profile, select_test_rows
    from .variation import PARAMS, STANDARD_TIMING
    clock = cfg.get_float("profiling", "clock_period")
    floor = cfg.get_float("profiling", "grid_floor")
    grids = {p: cfg.get_list("profiling", p.lower() + "_grid", float)
             or default_grid(p, floor, clock) for p in PARAMS}
    margin = cfg.get_int("profiling", "margin_cycles")
    rows = []
    for seed in _seeds(args, cfg):
        dev = cfg.device(seed)
        regions = select_test_rows(dev)
        for env in cfg.env_grid():
            rows.append(summary_row(seed, env, "standard", STANDARD_TIMING, clock_period=clock))
            for mech, layout in (("profiling", None),
                                 ("profiling+shuffling", ShuffleLayout.diva())):
                out = profile(dev, env, grids, _patterns(cfg), regions, margin, clock, layout)
                rows.append(summary_row(seed, env, mech, out.chosen, clock_period=clock))
    run.write_rows(SUMMARY_FIELDS, rows, kind="latency")
    for mech in ("profiling", "profiling+shuffling"):
        sel = [r for r in rows if r["mechanism"] == mech]
        print(f"{mech}: mean read reduction "
              f"{np.mean([r['read_reduction_pct'] for r in sel]):.1f}%, write "
              f"{np.mean([r['write_reduction_pct'] for r in sel]):.1f}%")


COMMANDS = {
    "gen-device": (cmd_gen_device, "describe a generated device"),
    "sweep": (cmd_sweep, "lower one timing parameter and aggregate errors by row residue"),
    "aggregate": (cmd_aggregate, "aggregate an error-log CSV"),
    "infer-map": (cmd_infer_map, "estimate the row-address bit permutation"),
    "profile": (cmd_profile, "find minimal reliable timings on the test rows"),
    "ecc-analyze": (cmd_ecc_analyze, "correctable fraction with and without shuffling"),
    "circuit-sim": (cmd_circuit_sim, "simulate one cell access on the RC bitline"),
    "calibrate": (cmd_calibrate, "fit temperature and refresh sensitivities"),
    "report": (cmd_report, "read/write latency reduction summary"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="divasim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file layered over the packaged defaults")
    common.add_argument("--seed", type=int, help="device seed (default: [experiment] seed)")
    common.add_argument("--out-dir", help="output directory (default: [experiment] out_dir)")
    common.add_argument("--threads", type=int, default=None, help="numba worker threads")
    common.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="set one config value; repeatable")
    common.add_argument("--input", help="input CSV for aggregate, infer-map and ecc-analyze")
    sub = ap.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "sweep":
            p.add_argument("--write-log", action="store_true",
                           help="also write the full error log of every sweep value")
        if name == "calibrate":
            p.add_argument("--calibrated-out", default=None,
                           help="where to write the fitted INI (default: the packaged asset)")
            p.add_argument("--verify", action="store_true",
                           help="re-measure the fitted effects with full harness runs")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override)
        seed = cfg.seed() if args.seed is None else args.seed
        out_dir = Path(args.out_dir or cfg.get_str("experiment", "out_dir"))
    except ConfigError as exc:
        print(f"divasim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"divasim: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads is not None:
        import numba
        try:
            numba.set_num_threads(args.threads)
        except ValueError as exc:
            print(f"divasim: --threads: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    run = Run(args.command, cfg, seed, out_dir)
    func = COMMANDS[args.command][0]
    try:
        func(args, cfg, run)
    except ConfigError as exc:
        print(f"divasim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, RuntimeError, ValueError, IndexError, OSError) as exc:
        print(f"divasim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    run.manifest(argv)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
