"""End-to-end analysis of one or two datasets into a report bundle.

Stages run in order: template, find-jumps, rates, coincidence, and (with an
SO and an SC dataset) lmo-ratio and excess.  A failing stage re-raises its
error with the stage name and the offending file prepended, keeping the
exception type so the exit code is preserved.
"""
from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import replace
from itertools import combinations
from pathlib import Path
from typing import Sequence

from . import presets
from .config import DatasetManifest, RunConfig
from .errors import ChargeJumpError
from .jumpfind import JumpEvent, find_jumps_many, write_events_csv
from .model import group_by_qubit
from .rates import (
    CoincidencePair, RateEstimate, corrected_rate, format_table, lmo_flux_ratio, pair_coincidences,
    pair_rate, pooled_rate, read_spectrum, solve_excess_rate, stochastic_coincidence_rate,
    write_pairs_csv, write_rates_csv,
)
from .template import Template, build_template

log = logging.getLogger(__name__)


@contextlib.contextmanager
def stage(name: str, path=None):
    try:
        yield
    except ChargeJumpError as exc:
        where = f" ({path})" if path is not None else ""
        msg = exc.args[0] if exc.args else ""
        exc.args = (f"stage {name}{where}: {msg}",) + exc.args[1:]
        exc.stage = name
        raise


def counted(events: Sequence[JumpEvent]) -> list[JumpEvent]:
    """Events entering the rate and coincidence analysis: magnitude in window."""
    return [e for e in events if e.in_window]


def templates_for(cfg: RunConfig, tag: str, by_qubit) -> dict[int, Template]:
    out = {}
    for q in sorted(by_qubit):
        path = cfg.templates.get(tag, {}).get(q)
        if path is not None:
            with stage("build-template", path):
                out[q] = Template.load(path)
            continue
        src = by_qubit[q][: cfg.template_candidates]
        with stage("build-template", f"{tag} Q{q}"):
            out[q] = build_template(src, shield_config_tag=tag)
        if out[q].n_source_scans < 15:
            log.warning("%s Q%d template averages only %d scans", tag, q, out[q].n_source_scans)
    return out


def pair_separation_um(a: int, b: int) -> float:
    key = (min(a, b), max(a, b))
    if key in presets.PAIR_SEPARATION_UM:
        return presets.PAIR_SEPARATION_UM[key]
    if (key[1], key[0]) in presets.PAIR_SEPARATION_UM:
        return presets.PAIR_SEPARATION_UM[(key[1], key[0])]
    return float("nan")


def pair_order(qubits) -> list[tuple[int, int]]:
    """Qubit pairs, nearest-neighbour pairs of the reference layout first."""
    all_pairs = list(combinations(sorted(qubits), 2))
    known = [k for k in presets.PAIR_SEPARATION_UM if k in all_pairs]
    return known + [k for k in all_pairs if k not in known]


def analyse_dataset(cfg: RunConfig, manifest: DatasetManifest, out_dir: Path) -> dict:
    tag = manifest.tag
    out_dir.mkdir(parents=True, exist_ok=True)
    with stage("load", manifest.scan_files[0] if len(manifest.scan_files) == 1 else tag):
        scans = manifest.read_scans()
    by_qubit = group_by_qubit(scans)
    templates = templates_for(cfg, tag, by_qubit)
    tpl_dir = out_dir / "templates"
    tpl_dir.mkdir(exist_ok=True)
    for q, t in templates.items():
        t.save(tpl_dir / f"q{q}.json")

    cfgs = {q: cfg.detection_for(q, tag) for q in manifest.qubit_ids}
    with stage("find-jumps", tag):
        events = find_jumps_many(scans, templates, cfgs, workers=cfg.workers)
    events.sort(key=lambda e: (e.time, e.qubit_id, e.scan_id, e.point_index))
    write_events_csv(events, out_dir / "jumps.csv")
    good = counted(events)

    with stage("rates", tag):
        eff = {q: cfg.efficiency_for(q, tag) for q in manifest.qubit_ids}
        live = manifest.livetime_hours
        rates = [
            corrected_rate(sum(1 for e in good if e.qubit_id == q), live, eff[q], label=f"Q{q}")
            for q in manifest.qubit_ids
        ]
        avg = pooled_rate([(r.n_events, live, r.efficiency) for r in rates], label="average")
    write_rates_csv(rates + [avg], out_dir / "rates.csv")

    with stage("coincidence", tag):
        pairs = pair_coincidences(good, cfg.coincidence_window_s, cfg.magnitude_window_e)
        pair_rows = []
        single = {int(r.label[1:]): r for r in rates}
        for a, b in pair_order(manifest.qubit_ids):
            n = sum(1 for p in pairs if (p.qubit_a, p.qubit_b) == (a, b))
            est = pair_rate(n, live, eff[a], eff[b], label=f"Q{a}-Q{b}", mode=cfg.pair_efficiency)
            acc = stochastic_coincidence_rate(single[a].rate, single[b].rate, cfg.coincidence_window_s)
            pair_rows.append((a, b, est, acc))
    pairs = [_with_separation(p) for p in pairs]
    write_pairs_csv(pairs, out_dir / "pairs.csv")
    write_rates_csv([r for _, _, r, _ in pair_rows], out_dir / "pair_rates.csv")

    return {
        "tag": tag,
        "livetime_hours": live,
        "n_scans": len(scans),
        "n_events": len(events),
        "n_events_in_window": len(good),
        "templates": {str(q): t.n_source_scans for q, t in templates.items()},
        "detection": {str(q): {"chi2_threshold": c.chi2_threshold, "min_segment": c.min_segment}
                      for q, c in cfgs.items()},
        "rates": [_rate_dict(r) for r in rates + [avg]],
        "pairs": [
            {**_rate_dict(r), "separation_um": pair_separation_um(a, b), "accidental_mhz": acc}
            for a, b, r, acc in pair_rows
        ],
        "_rates": rates + [avg],
        "_pair_rows": pair_rows,
    }


def _with_separation(p: CoincidencePair) -> CoincidencePair:
    return replace(p, separation=pair_separation_um(p.qubit_a, p.qubit_b))


def _rate_dict(r: RateEstimate) -> dict:
    return {"label": r.label, "n_events": r.n_events, "livetime_hours": r.livetime,
            "efficiency": r.efficiency, "rate_mhz": r.rate, "ci_low_mhz": r.ci_low,
            "ci_high_mhz": r.ci_high}


def _cell(r: RateEstimate) -> str:
    return r.format(2)


def run_pipeline(cfg: RunConfig, manifests: Sequence[DatasetManifest]) -> dict:
    """Analyse each dataset and write the report bundle under ``cfg.output``."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    results = {m.tag: analyse_dataset(cfg, m, out / m.tag) for m in manifests}
    tags = [m.tag for m in manifests]

    excess = None
    if "SO" in results and "SC" in results:
        a_lmo, a_err = cfg.a_lmo
        if "SO" in cfg.spectra and "SC" in cfg.spectra:
            with stage("lmo-ratio", cfg.spectra["SO"]):
                so, sc = read_spectrum(cfg.spectra["SO"]), read_spectrum(cfg.spectra["SC"])
                a_lmo, a_err = lmo_flux_ratio(so, sc, cfg.lmo_threshold_kev)
        with stage("excess"):
            excess = solve_excess_rate(results["SO"]["_rates"][-1], results["SC"]["_rates"][-1],
                                       a_lmo, a_err, method=cfg.excess_method)
        (out / "excess.json").write_text(json.dumps(excess.to_dict(), indent=1, sort_keys=True) + "\n")

    # single-qubit table
    labels = [r.label for r in results[tags[0]]["_rates"]]
    rows = [("Livetime", [f"{results[t]['livetime_hours']:.3f}" for t in tags], "h")]
    for i, lab in enumerate(labels):
        name = "Average Rate" if lab == "average" else f"{lab} Rate"
        rows.append((name, [_cell(results[t]["_rates"][i]) for t in tags]))
    if excess is not None:
        cols = {"SO": excess.r_so_gamma.format(), "SC": excess.r_sc_gamma.format()}
        rows.append(("Corrected gamma Rate", [cols.get(t, "") for t in tags]))
        rows.append(("Calculated Excess Rate", [excess.r_excess.format()] + [""] * (len(tags) - 1)))
    table1 = format_table(tags, rows)

    # pair table
    first = results[tags[0]]["_pair_rows"]
    cols = [f"Q{a}-Q{b}" for a, b, _, _ in first]
    prow = [("Separation", [f"{pair_separation_um(a, b):.0f}" for a, b, _, _ in first], "um")]
    for t in tags:
        prow.append((t, [_cell(r) for _, _, r, _ in results[t]["_pair_rows"]]))
        prow.append((f"{t} accidental", [f"{acc:.4f}" for _, _, _, acc in results[t]["_pair_rows"]]))
    table2 = format_table(cols, prow)

    (out / "single_rates.txt").write_text(table1 + "\n")
    (out / "pair_rates.txt").write_text(table2 + "\n")
    report = {
        "datasets": {t: {k: v for k, v in r.items() if not k.startswith("_")} for t, r in results.items()},
        "a_lmo": None if excess is None else [excess.a_lmo, excess.a_lmo_err],
        "excess": None if excess is None else excess.to_dict(),
        "coincidence_window_s": cfg.coincidence_window_s,
        "magnitude_window_e": list(cfg.magnitude_window_e),
        "seed": cfg.seed,
    }
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return report

