"""Command-line front end: train, attack, partition, report.

Every artifact lands under the config's output directory:

    config.resolved.json   defaults materialized, the run's full recipe
    metrics.csv            one row per (round, client) plus `_mean` rows
    timings.csv            wall-clock seconds per round
    final_accuracy.json    client id -> last-round test accuracy
    snapshots/             full-state checkpoints (cadence configurable)
    attack_report.json     per-sample reconstructions and traces
    attack_summary.csv     per-sample PSNR/SSIM table
    report/                summary.json plus plot-ready per-metric series

Exit codes: 0 success, 1 bad configuration, 2 numeric failure mid-run
(a best-effort emergency snapshot is written first), 3 file or format
problems.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import attack as atk
from . import checkpoint as ckpt
from . import config as cfgmod
from . import datakit as dk
from . import fedsim as fs
from . import hypernet as hn
from . import metrics as mx
from .errors import (
    CapabilityError,
    CapacityError,
    ConfigError,
    ConsistencyError,
    DimensionError,
    FormatError,
    NumericError,
    PrivacyError,
)

_CONFIG_ERRORS = (ConfigError, CapacityError, CapabilityError, DimensionError)
_IO_ERRORS = (FormatError, ConsistencyError, PrivacyError, OSError)


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 2
    except _IO_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyperfl", description="federated hypernetwork simulator")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a federated training experiment")
    t.add_argument("config", help="path to an experiment config (JSON)")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="reconstruct inputs from a training snapshot")
    a.add_argument("snapshot", help="path to a state snapshot written by train")
    a.add_argument("config", help="path to attack settings (JSON)")
    a.set_defaults(func=cmd_attack)

    q = sub.add_parser("partition", help="emit the client partition manifest only")
    q.add_argument("config", help="path to an experiment config (JSON)")
    q.set_defaults(func=cmd_partition)

    r = sub.add_parser("report", help="summarize a finished run directory")
    r.add_argument("run_dir", help="output directory of a train run")
    r.set_defaults(func=cmd_report)
    return p


# -- train ------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = cfgmod.load_config(args.config)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "snapshots").mkdir(exist_ok=True)
    (out / "config.resolved.json").write_text(cfg.to_json(), encoding="utf-8")

    ds = cfgmod.build_dataset(cfg)
    shards = cfgmod.build_shards(cfg, ds)
    bundle = cfgmod.build_bundle(cfg)
    rounds = cfg.round_config

    timings: list[tuple[int, float]] = []
    latest: dict = {}
    clock = {"t": time.perf_counter()}

    def on_round(t: int, server, clients) -> None:
        now = time.perf_counter()
        timings.append((t, now - clock["t"]))
        clock["t"] = now
        latest["state"] = (server, clients)
        if t > 0 and cfg.snapshot_every > 0 and t % cfg.snapshot_every == 0:
            _write_snapshot(out / "snapshots" / f"round_{t:04d}.hfl", server, clients)

    try:
        server, clients, records = fs.run_experiment(
            cfg.algorithm,
            bundle,
            shards,
            rounds,
            seed=cfg.seed,
            dp=cfg.dp_config,
            workers=cfg.workers,
            on_round=on_round,
        )
    except NumericError:
        if "state" in latest:  # keep what progress there was
            _write_snapshot(out / "snapshots" / "emergency.hfl", *latest["state"])
        raise

    _write_snapshot(out / "snapshots" / f"round_{server.round_t:04d}.hfl", server, clients)
    mx.write_metrics_csv(out / "metrics.csv", records)
    mx.write_timings_csv(out / "timings.csv", timings)

    final_round = max(r.round for r in records)
    final_acc = {
        r.client_id: r.test_acc
        for r in records
        if r.round == final_round and r.client_id != "_mean"
    }
    (out / "final_accuracy.json").write_text(
        json.dumps(final_acc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(out)
    return 0


def _write_snapshot(path: Path, server, clients) -> None:
    ckpt.write_checkpoint(path, fs.state_to_tensors(server, clients))


# -- attack -----------------------------------------------------------------------


def cmd_attack(args) -> int:
    snap_path = Path(args.snapshot)
    if not snap_path.exists():
        raise FormatError(f"snapshot not found: {snap_path}")
    run_dir = _find_run_dir(snap_path)
    cfg = cfgmod.load_config(run_dir / "config.resolved.json", apply_env=False)
    acfg, samples = cfgmod.load_attack_overrides(args.config)

    bundle = cfgmod.build_bundle(cfg)
    ds = cfgmod.build_dataset(cfg)
    shards = cfgmod.build_shards(cfg, ds)
    server, clients = fs.tensors_to_state(ckpt.read_checkpoint(snap_path), bundle, shards)
    if server.algorithm != cfg.algorithm:
        raise CapabilityError(
            f"snapshot was produced by {server.algorithm!r} but the run config says {cfg.algorithm!r}"
        )

    shape = cfg.image_shape or tuple(cfgmod.default_image_shape(ds.dim))
    records = []
    for i in range(samples):
        transcript = _build_transcript(i, server, clients, shards, bundle, cfg, acfg, shape)
        x_hat, trace = atk.attack_transcript(transcript.public(), acfg)
        scores = atk.score_reconstruction(transcript, x_hat)
        trace_rows = trace if trace and isinstance(trace[0], atk.TraceRow) else []
        records.append(
            atk.sample_record(
                i,
                transcript.view.algorithm,
                x_hat,
                scores,
                trace_rows,
                analytic_psnr=_analytic_control(transcript, shape),
            )
        )

    atk.write_attack_report(run_dir / "attack_report.json", acfg, records)
    atk.write_attack_summary_csv(run_dir / "attack_summary.csv", records)
    print(run_dir)
    return 0


def _analytic_control(transcript, shape) -> float:
    """Exact batch-1 recovery score where the full model's gradients leak."""
    view = transcript.view
    if view.algorithm == "hyperfl":
        return math.nan
    first = view.model_spec.layers[0].name
    try:
        x = atk.analytic_input_recovery(view.observed[f"{first}/W"], view.observed[f"{first}/b"])
    except NumericError:
        return math.nan
    return mx.psnr(x.reshape(shape), transcript.x_true)


def _find_run_dir(snap_path: Path) -> Path:
    for cand in (snap_path.parent, snap_path.parent.parent):
        if (cand / "config.resolved.json").exists():
            return cand
    raise FormatError(f"no config.resolved.json beside {snap_path}; is this a train output?")


def _build_transcript(i, server, clients, shards, bundle, cfg, acfg, shape):
    m = len(clients)
    cid = i % m
    j = i // m
    train = shards[cid][0]
    if j >= train.n:
        raise ConfigError(
            f"sample {i} needs item {j} of client {cid}, which holds only {train.n} samples"
        )
    img = train.x[j].reshape(shape)
    y = int(train.y[j])
    algo = server.algorithm

    if algo == "fedavg":
        return atk.fedavg_transcript(server.global_model, bundle.full, img, y)
    if algo == "dp_fedavg":
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(acfg.seed, 0x4450414B, i)))
        return atk.dp_fedavg_transcript(server.global_model, bundle.full, img, y, cfg.dp_config, rng)
    if algo == "pfedhn":
        model = hn.hypernet_forward(
            server.embeddings[cid], server.varphi_bar, bundle.pfedhn_hyper()
        )
        return atk.pfedhn_transcript(model, bundle.full, img, y, opt=cfg.round_config.eta_g)
    if algo == "hyperfl":
        client = clients[cid]
        return atk.hyperfl_transcript(
            client.v, server.varphi_bar, client.phi_c, bundle.hyper, bundle.fe, bundle.cls, img, y
        )
    raise CapabilityError(f"algorithm {algo!r} shares no model parameters; nothing to attack")


# -- partition ----------------------------------------------------------------------


def cmd_partition(args) -> int:
    cfg = cfgmod.load_config(args.config)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    ds = cfgmod.build_dataset(cfg)
    indices = dk.partition_indices(ds, cfg.partition_spec_for(ds.num_classes), cfg.clients, cfg.seed)
    dk.write_manifest(out / "partition.json", indices)
    print(out / "partition.json")
    return 0


# -- report -------------------------------------------------------------------------


_SERIES_FIELDS = ("train_loss", "test_acc", "grad_sq_norm", "hypernet_drift", "extractor_drift")


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.exists():
        raise FormatError(f"missing metrics file: {metrics_path}")
    records = mx.read_metrics_csv(metrics_path)
    report_dir = run_dir / "report"
    report_dir.mkdir(exist_ok=True)

    final_round = max(r.round for r in records)
    mean_rows = sorted(
        (r for r in records if r.client_id == "_mean"), key=lambda r: r.round
    )
    last_mean = mean_rows[-1]
    per_client = {
        r.client_id: r.test_acc
        for r in records
        if r.round == final_round and r.client_id != "_mean"
    }

    try:
        convergence = asdict(mx.convergence_stats(records))
    except ConfigError:  # single-round runs have no trend to summarize
        convergence = None

    summary = {
        "rounds": final_round,
        "final_mean_test_acc": last_mean.test_acc,
        "final_mean_train_loss": last_mean.train_loss,
        "per_client_final_acc": per_client,
        "convergence": convergence,
        "attack": _attack_digest(run_dir / "attack_summary.csv"),
    }
    (report_dir / "summary.json").write_text(
        json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    for field in _SERIES_FIELDS:
        lines = ["round,value"]
        for r in mean_rows:
            v = getattr(r, field)
            lines.append(f"{r.round}," + ("" if math.isnan(v) else repr(float(v))))
        (report_dir / f"series_{field}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    print(report_dir)
    return 0


def _attack_digest(path: Path) -> Optional[dict]:
    if not path.exists():
        return None
    lines = path.read_text(encoding="utf-8").splitlines()
    rows = [line.split(",") for line in lines[1:] if line]
    if not rows:
        return {"samples": 0, "mean_psnr": None, "mean_ssim": None}
    psnr = [float(r[2]) for r in rows]
    ssim = [float(r[3]) for r in rows]
    return {
        "samples": len(rows),
        "mean_psnr": float(np.mean(psnr)),
        "mean_ssim": float(np.mean(ssim)) if not any(math.isnan(s) for s in ssim) else None,
    }


def _jsonable(obj):
    """NaN-free, numpy-free copy for strict JSON emission."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) else f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


if __name__ == "__main__":
    sys.exit(main())
