"""Experiment orchestration, metrics persistence and post-processing."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from .config import EMBB, URLLC, ExperimentPlan, NetworkConfig, TrainConfig, config_to_dict
from . import federation
from .federation import run_training

log = logging.getLogger(__name__)

CSV_COLUMNS = ("tti", "bs", "slice", "delivered_bits", "completed_packets", "mean_delay_s", "dropped",
               "queue_len", "power_w", "action_alpha", "action_beta", "reward_alpha", "reward_beta")
TRACE_COLUMNS = ("epoch", "epsilon", "reward", "reward_alpha", "reward_beta")
DELAY_COLUMNS = ("tti", "bs", "slice", "delay_s")
MANIFEST = "manifest.json"


@dataclass
class RunRecord:
    regime: str
    embb_load_bps: float
    urllc_load_bps: float
    seed: int
    master_seed: int
    ttis: int
    warmup_fraction: float
    config: dict
    reward_trace: list = field(default_factory=list)
    trace_rows: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    urllc_delays: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    estimator: object = field(default=None, repr=False, compare=False)

    @property
    def name(self) -> str:
        return run_name(self.regime, self.embb_load_bps, self.seed)


def run_name(regime: str, embb_load_bps: float, seed: int) -> str:
    return f"{regime}_embb{embb_load_bps / 1e6:g}M_seed{seed}"


def summarize_rows(rows, slice_types, tti_duration_s: float, num_bs: int, ttis: int, warmup_fraction: float,
                   reward_trace=()) -> dict:
    """Headline metrics of one run, computed from its per-TTI rows after the warm-up.

    ``math.fsum`` keeps the result independent of summation order, so any reader of the
    CSV reproduces it exactly.
    """
    start = int(warmup_fraction * ttis)
    delay_terms, completed, embb_bits = [], 0, 0
    drops = {EMBB: 0, URLLC: 0}
    for row in rows:
        tti, _, n = row[0], row[1], row[2]
        if tti < start:
            continue
        kind = slice_types[n]
        drops[kind] += row[6]
        if kind == URLLC:
            delay_terms.append(row[5] * row[4])
            completed += row[4]
        else:
            embb_bits += row[3]
    measured = max(ttis - start, 1)
    trace = list(reward_trace)
    tail = trace[-max(1, int(round(0.1 * len(trace)))):] if trace else []
    return {
        "urllc_mean_delay_s": math.fsum(delay_terms) / completed if completed else float("nan"),
        "urllc_completed": completed,
        "embb_throughput_bps": embb_bits / (measured * tti_duration_s) / num_bs,
        "urllc_dropped": drops[URLLC],
        "embb_dropped": drops[EMBB],
        "final_reward": math.fsum(tail) / len(tail) if tail else float("nan"),
    }


def execute_run(network: NetworkConfig, train: TrainConfig, regime: str, embb_load_bps: float,
                urllc_load_bps: float, seed: int, ttis: int, master_seed: int = 0,
                warmup_fraction: float = 0.1) -> RunRecord:
    net = network.with_loads(embb_load_bps, urllc_load_bps)
    tr = replace(train, regime=regime)
    est = run_training(net, tr, seed, ttis=ttis, master_seed=master_seed, record_ttis=True)
    trace_rows = [(e.epoch, e.epsilon, e.reward, float(np.mean(e.rewards_a)), float(np.mean(e.rewards_b)))
                  for e in est.epoch_log_]
    record = RunRecord(regime=regime, embb_load_bps=embb_load_bps, urllc_load_bps=urllc_load_bps, seed=seed,
                       master_seed=master_seed, ttis=ttis, warmup_fraction=warmup_fraction,
                       config=config_to_dict(net, tr), reward_trace=list(est.reward_trace_),
                       trace_rows=trace_rows, rows=est.tti_rows_, urllc_delays=est.urllc_delays_,
                       estimator=est)
    record.summary = summarize_rows(record.rows, [s.slice_type for s in net.slices], net.tti_duration_s,
                                    net.num_bs, ttis, warmup_fraction, record.reward_trace)
    return record


# --------------------------------------------------------------------------- persistence

def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not serializable: {type(obj)!r}")


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def write_run(record: RunRecord, out_dir: str | Path, save_models: bool = True) -> dict:
    out = Path(out_dir)
    name = record.name
    files = {"metrics": f"{name}.csv", "trace": f"{name}_trace.csv", "delays": f"{name}_delays.csv",
             "meta": f"{name}.json"}
    if save_models and record.estimator is not None:
        files["models"] = federation.save_models(record.estimator, out, name)
    _write_csv(out / files["metrics"], CSV_COLUMNS, record.rows)
    _write_csv(out / files["trace"], TRACE_COLUMNS, record.trace_rows)
    _write_csv(out / files["delays"], DELAY_COLUMNS, record.urllc_delays)
    meta = {
        "name": name, "regime": record.regime, "embb_load_bps": record.embb_load_bps,
        "urllc_load_bps": record.urllc_load_bps, "seed": record.seed, "master_seed": record.master_seed,
        "ttis": record.ttis, "warmup_fraction": record.warmup_fraction, "config": record.config,
        "summary": record.summary, "files": files,
        "reward_definition": "mean over BSs of reward_alpha + reward_beta per decision epoch",
    }
    _dump_json(out / files["meta"], meta)
    return {"name": name, "regime": record.regime, "embb_load_bps": record.embb_load_bps, "seed": record.seed,
            "files": files}


def ensure_writable(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise PermissionError(f"output directory {out} is not writable: {exc}") from exc
    return out


def write_manifest(out_dir: Path, entries, master_seed: int, plan: ExperimentPlan | None = None) -> Path:
    payload = {"master_seed": master_seed, "runs": sorted(entries, key=lambda e: e["name"]),
               "seed_scheme": "run streams = SeedSequence([master_seed, seed]).spawn(5)"}
    if plan is not None:
        payload["plan"] = config_to_dict(NetworkConfig(), TrainConfig(), plan)["experiment"]
        payload["plan"].pop("output_dir", None)   # keep manifests relocatable
    path = out_dir / MANIFEST
    _dump_json(path, payload)
    return path


def _run_and_write(args) -> dict:
    network, train, regime, load, urllc, seed, ttis, master_seed, warmup, out_dir, save_models = args
    record = execute_run(network, train, regime, load, urllc, seed, ttis, master_seed, warmup)
    log.info("finished %s: %s", record.name, record.summary)
    return write_run(record, out_dir, save_models)


def plan_grid(plan: ExperimentPlan) -> list[tuple[str, float, int]]:
    return list(product(plan.regimes, plan.embb_loads_bps, plan.seeds))


def run_experiment(plan: ExperimentPlan, network: NetworkConfig | None = None,
                   train: TrainConfig | None = None) -> Path:
    """Run regimes x loads x seeds; returns the manifest path."""
    plan.validate()
    network = NetworkConfig() if network is None else network
    train = TrainConfig() if train is None else train
    network.validate()
    train.validate()
    out = ensure_writable(plan.output_dir)
    jobs = [(network, train, regime, load, plan.urllc_load_bps, seed, plan.ttis_per_run, plan.master_seed,
             plan.warmup_fraction, out, plan.save_models) for regime, load, seed in plan_grid(plan)]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            entries = list(pool.map(_run_and_write, jobs))
    else:
        entries = [_run_and_write(job) for job in jobs]
    return write_manifest(out, entries, plan.master_seed, plan)


# --------------------------------------------------------------------------- analysis

def eccdf(samples) -> list[tuple[float, float]]:
    """Fraction of samples strictly above each sorted unique sample value."""
    x = np.sort(np.asarray(list(samples), dtype=float))
    if x.size == 0:
        raise ValueError("no samples")
    values = np.unique(x)
    above = x.size - np.searchsorted(x, values, side="right")
    return [(float(v), float(a) / x.size) for v, a in zip(values, above)]


def read_manifest(out_dir: str | Path) -> dict:
    path = Path(out_dir) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {out_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_run_meta(out_dir: str | Path) -> list[dict]:
    out = Path(out_dir)
    return [json.loads((out / e["files"]["meta"]).read_text(encoding="utf-8")) for e in read_manifest(out)["runs"]]


def read_delays(out_dir: str | Path, meta: dict) -> list[float]:
    with open(Path(out_dir) / meta["files"]["delays"], newline="", encoding="utf-8") as fh:
        return [float(r["delay_s"]) for r in csv.DictReader(fh)]


def _mean_std(values):
    values = [v for v in values if not math.isnan(v)]
    if not values:
        return float("nan"), float("nan")
    if len(values) == 1:
        return values[0], 0.0
    return statistics.fmean(values), statistics.stdev(values)


def summarize(metas: list[dict], regimes=None, loads=None) -> tuple[list[dict], list[dict]]:
    """Seed-averaged table per (regime, load) and FRL-vs-IRL relative deltas.

    Cells of the requested grid without any run are reported with ``n = 0``.
    """
    cells: dict[tuple[str, float], list[dict]] = {}
    for m in metas:
        cells.setdefault((m["regime"], float(m["embb_load_bps"])), []).append(m["summary"])
    regimes = regimes or sorted({r for r, _ in cells})
    loads = loads or sorted({l for _, l in cells})
    table = []
    for regime in regimes:
        for load in loads:
            runs = cells.get((regime, float(load)), [])
            row = {"regime": regime, "embb_load_bps": float(load), "n": len(runs)}
            for key in ("urllc_mean_delay_s", "embb_throughput_bps", "final_reward"):
                mean, std = _mean_std([r[key] for r in runs]) if runs else (float("nan"), float("nan"))
                row[f"{key}_mean"] = mean
                row[f"{key}_std"] = std
            table.append(row)
    index = {(r["regime"], r["embb_load_bps"]): r for r in table}
    deltas = []
    for load in loads:
        irl, frl = index.get(("IRL", float(load))), index.get(("FRL", float(load)))
        if not irl or not frl or not irl["n"] or not frl["n"]:
            continue
        deltas.append({
            "embb_load_bps": float(load),
            "urllc_delay_reduction": relative_delay_reduction(irl["urllc_mean_delay_s_mean"],
                                                              frl["urllc_mean_delay_s_mean"]),
            "embb_throughput_gain": relative_gain(irl["embb_throughput_bps_mean"], frl["embb_throughput_bps_mean"]),
        })
    return table, deltas


def relative_delay_reduction(baseline: float, candidate: float) -> float:
    """``(baseline - candidate) / baseline``: 0.33 means 33% lower delay."""
    return (baseline - candidate) / baseline


def relative_gain(baseline: float, candidate: float) -> float:
    return (candidate - baseline) / baseline


def format_table(table: list[dict]) -> str:
    header = ["regime", "eMBB load", "n", "URLLC delay (ms)", "eMBB thr (Mbps)", "final reward"]
    lines = []
    for r in table:
        if not r["n"]:
            lines.append([r["regime"], f"{r['embb_load_bps'] / 1e6:g}M", "0", "absent", "absent", "absent"])
            continue
        lines.append([
            r["regime"], f"{r['embb_load_bps'] / 1e6:g}M", str(r["n"]),
            f"{1e3 * r['urllc_mean_delay_s_mean']:.4f} ± {1e3 * r['urllc_mean_delay_s_std']:.4f}",
            f"{r['embb_throughput_bps_mean'] / 1e6:.4f} ± {r['embb_throughput_bps_std'] / 1e6:.4f}",
            f"{r['final_reward_mean']:.4f} ± {r['final_reward_std']:.4f}",
        ])
    widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*header), fmt.format(*("-" * w for w in widths))] + [fmt.format(*l) for l in lines]
    return "\n".join(line.rstrip() for line in out) + "\n"


def report(out_dir: str | Path) -> dict:
    """Write summary.csv, summary.txt, deltas.csv and per-cell URLLC delay ECCDFs."""
    out = Path(out_dir)
    manifest = read_manifest(out)
    metas = load_run_meta(out)
    plan = manifest.get("plan") or {}
    table, deltas = summarize(metas, plan.get("regimes"), plan.get("embb_loads_bps"))
    keys = list(table[0]) if table else []
    _write_csv(out / "summary.csv", keys, [[r[k] for k in keys] for r in table])
    (out / "summary.txt").write_text(format_table(table), encoding="utf-8")
    _write_csv(out / "deltas.csv", ("embb_load_bps", "urllc_delay_reduction", "embb_throughput_gain"),
               [[d["embb_load_bps"], d["urllc_delay_reduction"], d["embb_throughput_gain"]] for d in deltas])
    pooled: dict[tuple[str, float], list[float]] = {}
    for m in metas:
        pooled.setdefault((m["regime"], float(m["embb_load_bps"])), []).extend(read_delays(out, m))
    curves = []
    for (regime, load), samples in sorted(pooled.items()):
        if not samples:
            continue
        path = out / f"eccdf_{regime}_embb{load / 1e6:g}M.csv"
        _write_csv(path, ("delay_s", "fraction_above"), eccdf(samples))
        curves.append(path.name)
    return {"table": table, "deltas": deltas, "eccdf_files": curves}


def read_metrics_csv(path: str | Path) -> list[tuple]:
    """Parse a per-TTI metrics CSV back into typed row tuples."""
    ints = {"tti", "bs", "slice", "delivered_bits", "completed_packets", "dropped", "queue_len",
            "action_alpha", "action_beta"}
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected header in {path}")
        for rec in reader:
            rows.append(tuple(int(v) if k in ints else float(v) for k, v in zip(header, rec)))
    return rows


def default_jobs_count() -> int:
    return max(1, (os.cpu_count() or 1))


def moving_average(x, window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    x = np.asarray(x, dtype=float)
    c = np.cumsum(np.insert(x, 0, 0.0))
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def convergence_epoch(trace, level: float = 0.9, window: int = 20, final_fraction: float = 0.1) -> int | None:
    """First epoch at which the smoothed trace reaches ``level`` times its own final value.

    The final value is the mean of the last ``final_fraction`` of the raw trace. Returns
    ``None`` if the level is never reached.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.size == 0:
        raise ValueError("empty trace")
    n = max(1, int(round(final_fraction * trace.size)))
    final = trace[-n:].mean()
    hits = np.flatnonzero(moving_average(trace, window) >= level * final)
    return int(hits[0]) if hits.size else None


def compare_regimes(network: NetworkConfig, train: TrainConfig, regimes, seeds, ttis: int,
                    embb_load_bps: float, urllc_load_bps: float, master_seed: int = 0,
                    warmup_fraction: float = 0.1) -> dict[str, list[RunRecord]]:
    """Run each regime on the same seeds (hence the same topologies and traffic)."""
    return {regime: [execute_run(network, train, regime, embb_load_bps, urllc_load_bps, seed, ttis, master_seed,
                                 warmup_fraction) for seed in seeds]
            for regime in regimes}
