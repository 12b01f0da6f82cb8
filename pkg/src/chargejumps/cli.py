"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 analysis error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import presets
from .config import DatasetManifest, RunConfig, scans_livetime_hours
from .errors import ChargeJumpError, ConfigInvalid, DataError
from .jumpfind import find_jumps_many, read_events, write_events_csv, write_events_jsonl
from .model import group_by_qubit, read_scans, wrap_charge, write_scans_csv, write_scans_jsonl
from .rates import (
    RateEstimate, corrected_rate, format_table, lmo_flux_ratio, pair_coincidences, pooled_rate,
    read_spectrum, solve_excess_rate, stochastic_coincidence_rate, write_pairs_csv, write_rates_csv,
)
from .synth import InjectionPlan, NoiseModel, generate_scan, inject_jumps, run_efficiency_mc, simulate_timeseries
from .template import Template, build_template

log = logging.getLogger("chargejumps")


def _keyval(text: str):
    """Parse ``Q=VALUE`` into ``(int(Q), VALUE)``."""
    try:
        k, v = text.split("=", 1)
        return int(k), v
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected QUBIT=VALUE, got {text!r}") from None


def _config(args, **overrides) -> RunConfig:
    flags = {"seed": getattr(args, "seed", None), "workers": getattr(args, "workers", None)}
    flags.update(overrides)
    return RunConfig.load(args.config, flags)


def _write_scans(scans, path: Path):
    if path.suffix == ".csv":
        write_scans_csv(scans, path)
    else:
        write_scans_jsonl(scans, path)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sched = cfg.schedule
    tag = args.tag
    if args.kind == "mc":
        q = args.qubit
        if q is None:
            raise ConfigInvalid("--kind mc needs --qubit")
        tpl = Template.load(args.template) if args.template else presets.replica_template(q, tag)
        noise = presets.noise(q, tag, cfg.seed) if args.sigma is None else NoiseModel(args.sigma, cfg.seed)
        plan = InjectionPlan(rate=args.rate, n_scans=args.n_scans)
        scans, truth = [], []
        for k in range(args.n_scans):
            rng = np.random.default_rng([cfg.seed, k])
            clean = generate_scan(tpl, sched, noise, wrap_charge(rng.uniform(-0.5, 0.5)), qubit_id=q,
                                  start_time=k * sched.scan_duration, rng=rng, scan_id=f"mc{k:05d}")
            scan, injected = inject_jumps(clean, plan, [cfg.seed, k, 1], tpl)
            scans.append(scan)
            truth.extend({"scan_id": scan.scan_id, "index": i, "delta_q_e": dq} for i, dq in injected)
        (out / "truth.json").write_text(json.dumps(truth, indent=1) + "\n")
    else:
        n = args.n_scans if args.n_scans else presets.livetime_scans(tag)
        singles, pairs = presets.injected_rates(tag)
        if args.no_jumps:
            singles, pairs = {}, {}
        noise = {q: (presets.noise(q, tag, cfg.seed + q) if args.sigma is None
                     else NoiseModel(args.sigma, cfg.seed + q)) for q in sched.qubit_order}
        refs = {q: presets.CURVES[q] for q in sched.qubit_order}
        ts = simulate_timeseries(refs, sched, noise, n, cfg.seed, singles, pairs, tag=tag)
        scans = ts.scans
        truth = [{"time": b["time"], "steps": {str(k): v for k, v in b["steps"].items()}} for b in ts.truth]
        (out / "truth.json").write_text(json.dumps(truth, indent=1) + "\n")
    scan_path = out / f"scans{args.format}"
    _write_scans(scans, scan_path)
    manifest = DatasetManifest(tag, (scan_path,), scans_livetime_hours(scans),
                               tuple(sorted({s.qubit_id for s in scans})))
    manifest.save(out / "manifest.json")
    print(f"wrote {len(scans)} scans, {manifest.livetime_hours:.3f} h -> {out / 'manifest.json'}")
    return 0


def cmd_build_template(args) -> int:
    scans = read_scans(args.scans)
    if args.qubit is not None:
        scans = [s for s in scans if s.qubit_id == args.qubit]
    groups = group_by_qubit(scans)
    if len(groups) != 1:
        raise DataError(f"{args.scans}: pick one qubit with --qubit (found {sorted(groups)})")
    src = next(iter(groups.values()))[: args.max_scans]
    tpl = build_template(src, max_internal_jump=args.max_internal_jump, sigma_floor=args.sigma_floor,
                         shield_config_tag=args.tag, strict=args.strict)
    tpl.save(args.out)
    print(f"Q{tpl.qubit_id}: template from {tpl.n_source_scans} scans, noise {tpl.noise_sigma:.4f} -> {args.out}")
    return 0


def cmd_find_jumps(args) -> int:
    cfg = _config(args)
    scans = read_scans(args.scans)
    templates = {q: Template.load(p) for q, p in args.template}
    dets = {q: cfg.detection_for(q, args.tag) for q in {s.qubit_id for s in scans}}
    events = find_jumps_many(scans, templates, dets, workers=cfg.workers)
    events.sort(key=lambda e: (e.time, e.qubit_id, e.scan_id, e.point_index))
    out = Path(args.out)
    (write_events_jsonl if out.suffix == ".jsonl" else write_events_csv)(events, out)
    n_in = sum(e.in_window for e in events)
    print(f"{len(events)} jumps ({n_in} with magnitude in window) -> {out}")
    return 0


def cmd_efficiency(args) -> int:
    cfg = _config(args)
    q, tag = args.qubit, args.tag
    tpl = Template.load(args.template) if args.template else presets.replica_template(q, tag)
    sigma = args.sigma if args.sigma is not None else presets.NOISE_SIGMA[(q, tag)]
    noise = NoiseModel(sigma, seed=cfg.seed)
    det = cfg.detection_for(q, tag)
    if args.tune:
        from .synth import tune_detector

        det, rows = tune_detector(tpl, cfg.schedule, NoiseModel(sigma, seed=cfg.seed + 10_000), det)
        for r in rows:
            print(f"  min_segment={r['min_segment']:>3} threshold={r['chi2_threshold']:<5} "
                  f"efficiency={r['efficiency']:.3f} spread={r['sys_spread']:.3f}")
    rep = run_efficiency_mc(tpl, cfg.schedule, noise, InjectionPlan(rate=args.rate, n_scans=args.n_scans),
                            det, qubit_id=q, config_tag=tag, workers=cfg.workers)
    print(f"Q{q} {tag}: efficiency {rep.efficiency:.3f} +- {rep.stat_error:.3f} (stat), "
          f"spread {rep.sys_spread:.3f}; {rep.n_found}/{rep.n_injected} found; "
          f"threshold {det.chi2_threshold}, min_segment {det.min_segment}")
    if args.out:
        rep.save(args.out)
    if args.truth:
        rep.write_truth_csv(args.truth)
    return 0


def _parse_efficiencies(args, cfg, qubits):
    given = {q: float(v) for q, v in (args.efficiency or [])}
    return {q: given[q] if q in given else cfg.efficiency_for(q, args.tag) for q in qubits}


def cmd_rates(args) -> int:
    cfg = _config(args)
    events = [e for e in read_events(args.events) if e.in_window]
    qubits = sorted(set(args.qubits or presets.QUBITS))
    eff = _parse_efficiencies(args, cfg, qubits)
    live = args.livetime if args.livetime else presets.LIVETIME_HOURS[args.tag]
    rates = [corrected_rate(sum(e.qubit_id == q for e in events), live, eff[q], label=f"Q{q}") for q in qubits]
    avg = pooled_rate([(r.n_events, live, r.efficiency) for r in rates], label="average")
    rows = [(f"{r.label} Rate" if r is not avg else "Average Rate", [r.format()]) for r in rates + [avg]]
    print(format_table([args.tag], rows))
    if args.out:
        write_rates_csv(rates + [avg], args.out)
    return 0


def cmd_coincidence(args) -> int:
    cfg = _config(args)
    events = read_events(args.events)
    window = args.window if args.window is not None else cfg.coincidence_window_s
    positions = {q: c.position for q, c in presets.QUBITS.items()}
    pairs = pair_coincidences(events, window, cfg.magnitude_window_e, positions=positions)
    for p in pairs:
        print(f"Q{p.qubit_a}-Q{p.qubit_b}  t={p.t_a:.1f}s dt={p.dt:+.1f}s  dq=({p.dq_a:+.3f}, {p.dq_b:+.3f})e")
    print(f"{len(pairs)} pairs within {window:g} s")
    if args.out:
        write_pairs_csv(pairs, args.out)
    if args.accidental:
        ra, rb = args.accidental
        print(f"accidental rate: {stochastic_coincidence_rate(ra, rb, window):.4f} mHz")
    return 0


def cmd_lmo_ratio(args) -> int:
    so, sc = read_spectrum(args.so), read_spectrum(args.sc)
    ratio, err = lmo_flux_ratio(so, sc, args.threshold)
    print(json.dumps({"a_lmo": ratio, "a_lmo_err": err, "threshold_kev": args.threshold}))
    return 0


def _average_row(path) -> RateEstimate:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    row = next((r for r in rows if r["label"] == "average"), None)
    if row is None:
        raise DataError(f"{path}: no 'average' row")
    return RateEstimate("average", float(row["rate_mhz"]), float(row["ci_low_mhz"]),
                        float(row["ci_high_mhz"]), int(row["n_events"]), float(row["livetime_h"]),
                        float(row["efficiency"]))


def _rate_arg(text: str) -> RateEstimate:
    """``RATE:LOW:HIGH`` in mHz, or a rates CSV path."""
    if Path(text).exists():
        return _average_row(text)
    try:
        r, lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigInvalid(f"expected RATE:LOW:HIGH or a rates CSV, got {text!r}") from None
    return RateEstimate("cli", r, lo, hi, 0, 1.0, 1.0)


def cmd_excess(args) -> int:
    cfg = _config(args)
    a, a_err = cfg.a_lmo
    if args.a_lmo is not None:
        a, a_err = args.a_lmo
    sol = solve_excess_rate(_rate_arg(args.so), _rate_arg(args.sc), a, a_err,
                            method=args.method or cfg.excess_method)
    print(f"SO gamma rate  {sol.r_so_gamma.format()} mHz")
    print(f"SC gamma rate  {sol.r_sc_gamma.format()} mHz")
    print(f"excess rate    {sol.r_excess.format()} mHz")
    if sol.excess_negative:
        print("warning: negative excess rate")
    if args.out:
        Path(args.out).write_text(json.dumps(sol.to_dict(), indent=1, sort_keys=True) + "\n")
    return 0


def cmd_pipeline(args) -> int:
    from .pipeline import run_pipeline

    cfg = _config(args, output=args.out)
    manifests = [DatasetManifest.load(p) for p in args.dataset]
    tags = [m.tag for m in manifests]
    if len(set(tags)) != len(tags):
        raise ConfigInvalid(f"duplicate dataset tags {tags}")
    run_pipeline(cfg, manifests)
    print((Path(cfg.output) / "single_rates.txt").read_text(), end="")
    print((Path(cfg.output) / "pair_rates.txt").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chargejumps", description="Charge-jump analysis for charge-sensitive qubits.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, tag=True):
        sp.add_argument("--config", type=Path, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="seed for all stochastic stages")
        sp.add_argument("--workers", type=int, help="maximum worker processes")
        if tag:
            sp.add_argument("--tag", default="SC", help="dataset / shield configuration tag (default SC)")
        return sp

    s = common(sub.add_parser("simulate", help="write a synthetic dataset and its manifest"))
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--kind", choices=("timeseries", "mc"), default="timeseries")
    s.add_argument("--n-scans", type=int, default=0, help="default: the tag's published livetime")
    s.add_argument("--qubit", type=int)
    s.add_argument("--template", type=Path)
    s.add_argument("--sigma", type=float, help="override noise sigma for every qubit")
    s.add_argument("--rate", type=float, default=presets.MC_JUMP_RATE_MHZ, help="mc injection rate, mHz")
    s.add_argument("--no-jumps", action="store_true")
    s.add_argument("--format", choices=(".jsonl", ".csv"), default=".jsonl")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("build-template", help="average jump-free scans into a template")
    s.add_argument("--scans", required=True, type=Path)
    s.add_argument("--qubit", type=int)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--tag", default="")
    s.add_argument("--max-scans", type=int, default=30)
    s.add_argument("--max-internal-jump", type=float, default=0.03)
    s.add_argument("--sigma-floor", type=float, default=0.01)
    s.add_argument("--strict", action="store_true", help="fail if any scan fails the jump screen")
    s.set_defaults(func=cmd_build_template)

    s = common(sub.add_parser("find-jumps", help="detect jumps in scans"))
    s.add_argument("--scans", required=True, type=Path)
    s.add_argument("--template", required=True, action="append", type=_keyval, metavar="Q=PATH")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_find_jumps)

    s = common(sub.add_parser("efficiency", help="Monte-Carlo detection efficiency"))
    s.add_argument("--qubit", type=int, required=True)
    s.add_argument("--template", type=Path)
    s.add_argument("--sigma", type=float)
    s.add_argument("--n-scans", type=int, default=presets.MC_SCANS)
    s.add_argument("--rate", type=float, default=presets.MC_JUMP_RATE_MHZ)
    s.add_argument("--tune", action="store_true", help="re-tune threshold and min segment first")
    s.add_argument("--out", type=Path)
    s.add_argument("--truth", type=Path, help="write per-injection truth CSV")
    s.set_defaults(func=cmd_efficiency)

    s = common(sub.add_parser("rates", help="efficiency-corrected single-qubit rates"))
    s.add_argument("--events", required=True, type=Path)
    s.add_argument("--livetime", type=float, help="hours (default: published livetime for the tag)")
    s.add_argument("--efficiency", action="append", type=_keyval, metavar="Q=EFF")
    s.add_argument("--qubits", type=int, nargs="*")
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_rates)

    s = common(sub.add_parser("coincidence", help="pair time-correlated jumps"), tag=False)
    s.add_argument("--events", required=True, type=Path)
    s.add_argument("--window", type=float)
    s.add_argument("--accidental", type=float, nargs=2, metavar=("RA", "RB"),
                   help="also print the accidental rate for these single rates (mHz)")
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_coincidence)

    s = sub.add_parser("lmo-ratio", help="gamma flux ratio from two spectra")
    s.add_argument("--so", required=True, type=Path)
    s.add_argument("--sc", required=True, type=Path)
    s.add_argument("--threshold", type=float, default=presets.LMO_THRESHOLD_KEV)
    s.set_defaults(func=cmd_lmo_ratio)

    s = common(sub.add_parser("excess", help="split rates into gamma and excess parts"), tag=False)
    s.add_argument("--so", required=True, help="rates CSV or RATE:LOW:HIGH")
    s.add_argument("--sc", required=True, help="rates CSV or RATE:LOW:HIGH")
    s.add_argument("--a-lmo", type=float, nargs=2, metavar=("RATIO", "ERR"))
    s.add_argument("--method", choices=("linear", "subtraction"))
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_excess)

    s = common(sub.add_parser("pipeline", help="full analysis of one or two datasets"), tag=False)
    s.add_argument("--dataset", required=True, action="append", type=Path, help="manifest JSON")
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ChargeJumpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
