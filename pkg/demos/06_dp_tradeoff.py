"""Clipping and noise on FedAvg uploads, and what they buy and cost.

dp_sanitize clips each client's update to a norm bound C and adds
N(0, (sigma C)^2) noise per coordinate.  At sigma = 0 with C = inf the
mechanism is the identity and the run is bitwise the plain FedAvg run;
that equivalence is the baseline here.  Then sigma sweeps upward.  The leak
dies long before the accuracy does: the analytic batch-1 recovery loses
40 dB at noise levels training barely notices.
"""

import tempfile
from pathlib import Path

import numpy as np

from hyperfl import attack as atk
from hyperfl import datakit as dk
from hyperfl import fedsim as fs
from hyperfl import hypernet as hn
from hyperfl import metrics as mx
from hyperfl import network as nn

SEED = 6
ds = dk.pattern_dataset(num_classes=3, side=6, per_class=60, seed=SEED)
spec = dk.PartitionSpec(groups=dk.consecutive_groups(3, 3, 1), samples_per_client=36)
parts = dk.partition(ds, spec, 4, SEED)
shards = [dk.train_test_split(p, SEED + c) for c, p in enumerate(parts)]

fe = nn.dense_net("fe", [36, 10])
cls = nn.dense_net("cls", [10, 3])
hyper = hn.HypernetSpec(target=hn.target_from_netspec(fe), embedding_dim=6, hidden_dim=12)
bundle = fs.ModelBundle(fe=fe, cls=cls, hyper=hyper)
cfg = fs.RoundConfig(local_epochs=2, batch_size=12, total_rounds=20)

with tempfile.TemporaryDirectory() as tmp:
    ref = Path(tmp) / "fedavg.csv"
    _, _, records = fs.run_experiment("fedavg", bundle, shards, cfg, seed=SEED)
    mx.write_metrics_csv(ref, records)

    neutral = Path(tmp) / "dp_off.csv"
    _, _, records = fs.run_experiment("dp_fedavg", bundle, shards, cfg, seed=SEED,
                                      dp=fs.DPConfig())
    mx.write_metrics_csv(neutral, records)
    print("sigma=0, C=inf reproduces FedAvg bitwise:",
          ref.read_bytes() == neutral.read_bytes())

x_probe = shards[0][0].x[0].reshape(6, 6)
y_probe = int(shards[0][0].y[0])

print(f"\n{'sigma':>8} {'clip C':>7} {'final acc':>10} {'batch-1 leak (psnr)':>20}")
for sigma in (0.0, 1e-4, 1e-3, 1e-2, 0.3):
    dp = fs.DPConfig(clip_norm=1.0, sigma=sigma)
    server, _, records = fs.run_experiment("dp_fedavg", bundle, shards, cfg,
                                           seed=SEED, dp=dp)
    acc = mx.convergence_stats(records).final_mean_test_acc

    rng = np.random.default_rng(100)
    tr = atk.dp_fedavg_transcript(server.global_model, bundle.full,
                                  x_probe, y_probe, dp, rng)
    try:
        leak = atk.analytic_input_recovery(tr.view.observed["fe0/W"],
                                           tr.view.observed["fe0/b"])
        leak_psnr = mx.psnr(leak.reshape(6, 6), x_probe)
    except atk.NumericError:  # all-noise gradients have no usable row
        leak_psnr = float("nan")
    print(f"{sigma:>8} {dp.clip_norm:>7} {acc:>10.3f} {leak_psnr:>20.1f}")

print("\nclipping alone rescales gradients uniformly, so the row-ratio leak")
print("survives it; only the noise floor actually protects the image.")
