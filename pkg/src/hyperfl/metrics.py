"""Reconstruction metrics, accuracy, and convergence diagnostics.

The round-record CSV schema is part of the package's external surface:

    round,client_id,train_loss,test_acc,grad_sq_norm,hypernet_drift,extractor_drift,seconds

one row per (round, client) plus a ``_mean`` aggregate row per round.  The
``seconds`` column is intentionally left empty in every row: wall-clock time
is inherently nondeterministic, and the metrics file must be byte-identical
across reruns of the same seeded experiment.  Timings go to a separate
``timings.csv`` (schema ``round,seconds``) next to the metrics file.

Fields that were not measured (e.g. step metrics of clients not sampled in a
round) serialize as ``nan``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConsistencyError, DimensionError
from .network import NetSpec, ParamSet, forward_logits

PSNR_CAP_DB = 100.0

CSV_HEADER = (
    "round",
    "client_id",
    "train_loss",
    "test_acc",
    "grad_sq_norm",
    "hypernet_drift",
    "extractor_drift",
    "seconds",
)


# -- image metrics ---------------------------------------------------------------


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """10*log10(max_val^2 / MSE), capped at 100 dB so the value serializes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr operands differ in shape: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(max_val**2 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"ssim operands differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise DimensionError(f"ssim expects 2-d images, got shape {a.shape}")
    if min(a.shape) < 11:
        raise DimensionError(f"image {a.shape} is smaller than the 11x11 window")

    kernel = _gaussian_window()
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2

    mu_a = _windowed_mean(a, kernel)
    mu_b = _windowed_mean(b, kernel)
    var_a = _windowed_mean(a * a, kernel) - mu_a**2
    var_b = _windowed_mean(b * b, kernel) - mu_b**2
    cov = _windowed_mean(a * b, kernel) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def accuracy(params: ParamSet, spec: NetSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Argmax-logit classification rate; argmax breaks ties toward class 0."""
    logits = forward_logits(params, spec, x)
    pred = np.argmax(logits, axis=1)
    y = np.asarray(y)
    if y.shape != pred.shape:
        raise DimensionError(f"{pred.size} predictions vs {y.shape} labels")
    return float(np.mean(pred == y))


# -- round records ------------------------------------------------------------------


@dataclass(frozen=True)
class RoundRecord:
    """One client's metrics for one round (client_id ``_mean`` for aggregates).

    ``seconds`` rides along in memory but is not written to the metrics CSV
    (see module docstring).
    """

    round: int
    client_id: str
    train_loss: float = math.nan
    test_acc: float = math.nan
    grad_sq_norm: float = math.nan
    hypernet_drift: float = math.nan
    extractor_drift: float = math.nan
    seconds: float = math.nan


_NUMERIC_FIELDS = ("train_loss", "test_acc", "grad_sq_norm", "hypernet_drift", "extractor_drift")


def _fmt(x: float) -> str:
    # repr() is the shortest exact round-trip form in CPython; 'nan' for NaN
    return repr(float(x))


def mean_record(records: Sequence[RoundRecord]) -> RoundRecord:
    """Aggregate row: NaN-ignoring mean of every numeric column."""
    if not records:
        raise ConfigError("cannot aggregate an empty record list")
    rounds = {r.round for r in records}
    if len(rounds) != 1:
        raise ConsistencyError(f"aggregate row spans rounds {sorted(rounds)}")
    values = {}
    for name in _NUMERIC_FIELDS:
        column = [getattr(r, name) for r in records]
        finite = [v for v in column if not math.isnan(v)]
        values[name] = float(np.mean(finite)) if finite else math.nan
    return RoundRecord(round=records[0].round, client_id="_mean", **values)


def write_metrics_csv(path: str | Path, records: Sequence[RoundRecord]) -> None:
    """Per-client rows in (round, client) order plus a _mean row per round.

    Rounds must be strictly increasing groups; within a round, client rows
    are sorted by numeric id.  Output is bytewise deterministic given the
    records.
    """
    by_round: dict[int, list[RoundRecord]] = {}
    for r in records:
        if r.client_id == "_mean":
            raise ConsistencyError("aggregate rows are derived at write time, not passed in")
        by_round.setdefault(r.round, []).append(r)
    round_ids = sorted(by_round)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t in round_ids:
            group = sorted(by_round[t], key=lambda r: int(r.client_id))
            for r in group + [mean_record(group)]:
                writer.writerow(
                    [r.round, r.client_id]
                    + [_fmt(getattr(r, name)) for name in _NUMERIC_FIELDS]
                    + [""]  # seconds: never serialized here
                )


def read_metrics_csv(path: str | Path) -> list[RoundRecord]:
    """Read every row back, aggregate rows included; empty fields become NaN."""
    out: list[RoundRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ConsistencyError(f"unexpected metrics header {header}")
        for row in reader:
            if len(row) != len(CSV_HEADER):
                raise ConsistencyError(f"row has {len(row)} fields, expected {len(CSV_HEADER)}")
            nums = [math.nan if cell == "" else float(cell) for cell in row[2:]]
            out.append(RoundRecord(int(row[0]), row[1], *nums))
    return out


def write_timings_csv(path: str | Path, seconds_by_round: Sequence[tuple[int, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "seconds"])
        for t, sec in seconds_by_round:
            writer.writerow([t, f"{sec:.6f}"])


# -- convergence summary ---------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceSummary:
    """Quartile-averaged training diagnostics over a run.

    Quartiles are four contiguous blocks of rounds (first block = earliest
    training).  The flags state the trend claims downstream checks care
    about; they are plain observations, not fitted rates.
    """

    rounds: int
    loss_quartiles: tuple[float, float, float, float]
    grad_sq_quartiles: tuple[float, float, float, float]
    hypernet_drift_quartiles: tuple[float, float, float, float]
    extractor_drift_quartiles: tuple[float, float, float, float]
    final_mean_test_acc: float
    grad_quartiles_nonincreasing: bool
    grad_last_le_half_first: bool
    extractor_drift_last_below_first: bool


def _per_round_mean(records: Sequence[RoundRecord], name: str) -> tuple[list[int], list[float]]:
    by_round: dict[int, list[float]] = {}
    for r in records:
        if r.client_id == "_mean":
            continue
        by_round.setdefault(r.round, []).append(getattr(r, name))
    rounds = sorted(by_round)
    means = []
    for t in rounds:
        finite = [v for v in by_round[t] if not math.isnan(v)]
        means.append(float(np.mean(finite)) if finite else math.nan)
    return rounds, means


def _quartile_means(series: Sequence[float]) -> tuple[float, float, float, float]:
    chunks = np.array_split(np.asarray(series, dtype=np.float64), 4)
    out = []
    for c in chunks:
        finite = c[np.isfinite(c)]
        out.append(float(np.mean(finite)) if finite.size else math.nan)
    return tuple(out)


def convergence_stats(records: Sequence[RoundRecord]) -> ConvergenceSummary:
    rounds, grad = _per_round_mean(records, "grad_sq_norm")
    if len(rounds) < 2:
        raise ConfigError(f"convergence_stats needs at least 2 rounds, got {len(rounds)}")
    _, loss = _per_round_mean(records, "train_loss")
    _, hdrift = _per_round_mean(records, "hypernet_drift")
    _, edrift = _per_round_mean(records, "extractor_drift")
    _, acc = _per_round_mean(records, "test_acc")

    gq = _quartile_means(grad)
    eq = _quartile_means(edrift)
    nonincreasing = all(
        b <= a or math.isnan(a) or math.isnan(b) for a, b in zip(gq, gq[1:])
    )
    return ConvergenceSummary(
        rounds=len(rounds),
        loss_quartiles=_quartile_means(loss),
        grad_sq_quartiles=gq,
        hypernet_drift_quartiles=_quartile_means(hdrift),
        extractor_drift_quartiles=eq,
        final_mean_test_acc=acc[-1],
        grad_quartiles_nonincreasing=nonincreasing,
        grad_last_le_half_first=bool(gq[-1] <= 0.5 * gq[0]),
        extractor_drift_last_below_first=bool(eq[-1] < eq[0]),
    )
