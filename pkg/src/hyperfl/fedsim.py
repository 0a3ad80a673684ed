"""Federated protocol engine: HyperFL plus Local-only / FedAvg / DP-FedAvg /
pFedHN baselines.

Wire discipline
---------------
Every value that crosses the client/server boundary goes through a
:class:`Wire` as serialized container bytes, and the receiving side decodes
those bytes; there is no side channel.  Each message is checked against the
exact set of tensor names the protocol allows in that direction; a classifier
tensor or an embedding showing up in a HyperFL message raises
:class:`~hyperfl.errors.PrivacyError` before anything is recorded.

Determinism
-----------
Every random decision draws from a stream derived by hashing
``(experiment_seed, purpose tag, client id, round)`` through numpy's
SeedSequence.  Client training is a pure function of (state, received bytes,
stream), uploads are consumed in ascending client id, and so results are
bit-identical for any number of worker threads.

Algorithm tags: ``hyperfl``, ``fedavg``, ``dp_fedavg``, ``local``,
``pfedhn``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from .datakit import Dataset
from .errors import ConfigError, ConsistencyError, DimensionError, PrivacyError
from .hypernet import HypernetSpec, hypernet_forward, hypernet_backward, init_hypernet, target_from_netspec
from .metrics import RoundRecord, accuracy
from .network import (
    NetSpec,
    OptimConfig,
    OptimState,
    ParamSet,
    concat_specs,
    init_optim_state,
    init_params,
    loss_and_grad_params,
    sgd_step,
    tree_add,
    tree_copy,
    tree_norm,
    tree_scale,
    tree_sub,
)

ALGORITHMS = ("hyperfl", "fedavg", "dp_fedavg", "local", "pfedhn")

# rng purpose tags; never reuse one for a second purpose
_TAG_INIT = 0x494E4954
_TAG_SAMPLE = 0x53414D50
_TAG_STEP = 0x53544550
_TAG_DPNOISE = 0x44504E53


def derive_rng(seed: int, tag: int, *rest: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, tag, *rest)))


# -- model bundle ------------------------------------------------------------------


@dataclass(frozen=True)
class ModelBundle:
    """The three architectures one experiment is built from."""

    fe: NetSpec
    cls: NetSpec
    hyper: HypernetSpec

    def __post_init__(self):
        if self.fe.out_dim != self.cls.in_dim:
            raise DimensionError(
                f"extractor emits {self.fe.out_dim}, classifier expects {self.cls.in_dim}"
            )
        want = target_from_netspec(self.fe)
        if self.hyper.target != want:
            raise DimensionError("hypernetwork target does not match the feature extractor")

    @property
    def full(self) -> NetSpec:
        return concat_specs(self.fe, self.cls)

    def pfedhn_hyper(self) -> HypernetSpec:
        """Server-side generator for pFedHN: targets the full client model."""
        return HypernetSpec(
            target=target_from_netspec(self.full),
            embedding_dim=self.hyper.embedding_dim,
            hidden_dim=self.hyper.hidden_dim,
            hidden_bias=self.hyper.hidden_bias,
        )


@dataclass(frozen=True)
class RoundConfig:
    """Per-round training recipe.

    ``eta_g`` drives the classifier in HyperFL Step 1 and the whole model in
    the FedAvg-family baselines; ``eta_h``/``eta_v`` drive the hypernetwork
    and embedding in Step 2.
    """

    local_epochs: int = 5
    eta_g: OptimConfig = field(default_factory=lambda: OptimConfig(0.1, 0.5, 5e-4))
    eta_h: OptimConfig = field(default_factory=lambda: OptimConfig(0.01, 0.5, 5e-4))
    eta_v: OptimConfig = field(default_factory=lambda: OptimConfig(0.01, 0.5, 5e-4))
    batch_size: int = 50
    sampling_rate: float = 1.0
    total_rounds: int = 200
    server_lr: float = 0.01  # pfedhn only

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be at least 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not (0.0 < self.sampling_rate <= 1.0):
            raise ConfigError(f"sampling_rate must lie in (0, 1], got {self.sampling_rate}")
        if self.total_rounds < 0:
            raise ConfigError(f"total_rounds must be nonnegative, got {self.total_rounds}")
        if self.server_lr < 0:
            raise ConfigError(f"server_lr must be nonnegative, got {self.server_lr}")


@dataclass(frozen=True)
class DPConfig:
    """Upload sanitization: clip to L2 norm ``clip_norm``, add N(0, (sigma*C)^2)."""

    clip_norm: float = math.inf
    sigma: float = 0.0

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma}")
        if self.sigma > 0 and not math.isfinite(self.clip_norm):
            raise ConfigError("noise std sigma*C needs a finite clip_norm when sigma > 0")


# -- states -----------------------------------------------------------------------


@dataclass(frozen=True)
class ClientState:
    """One client's private state; algorithm-dependent fields default None.

    HyperFL clients carry (v, phi_h, phi_c); FedAvg-family clients carry the
    whole model in ``model``.  ``last_theta`` remembers the previous round's
    generated extractor so round-over-round drift can be reported.
    """

    id: int
    train: Dataset
    test: Dataset
    v: np.ndarray | None = None
    phi_h: ParamSet | None = None
    phi_c: ParamSet | None = None
    model: ParamSet | None = None
    opt_c: OptimState | None = None
    opt_v: OptimState | None = None
    last_theta: ParamSet | None = None

    def __post_init__(self):
        if self.train.n < 1:
            raise ConfigError(f"client {self.id} has an empty shard")


@dataclass(frozen=True)
class ServerState:
    algorithm: str
    round_t: int = 0
    varphi_bar: ParamSet | None = None  # hyperfl: aggregated hypernetwork
    global_model: ParamSet | None = None  # fedavg / dp_fedavg
    embeddings: dict[int, np.ndarray] | None = None  # pfedhn
    opt_h: OptimState | None = None  # pfedhn server optimizer state
    opt_v: dict[int, OptimState] | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; pick one of {ALGORITHMS}")


# -- wire --------------------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    sender: str
    receiver: str
    kind: str  # "broadcast" | "upload"
    round_t: int
    payload: bytes  # checkpoint container bytes
    names: tuple[str, ...]

    def tensors(self) -> ParamSet:
        return checkpoint.load_params(self.payload)


@dataclass
class Wire:
    """Records every message and polices which tensor names may cross."""

    messages: list[Message] = field(default_factory=list)

    def send(
        self,
        sender: str,
        receiver: str,
        kind: str,
        round_t: int,
        payload: ParamSet,
        allowed_names: set[str],
    ) -> Message:
        illegal = set(payload.keys()) - allowed_names
        if illegal:
            raise PrivacyError(
                f"{sender} -> {receiver}: tensors {sorted(illegal)} are not allowed on the wire"
            )
        msg = Message(
            sender=sender,
            receiver=receiver,
            kind=kind,
            round_t=round_t,
            payload=checkpoint.dump_params(payload),
            names=tuple(sorted(payload.keys())),
        )
        self.messages.append(msg)
        return msg


def _allowed_upload_names(algorithm: str, bundle: ModelBundle) -> set[str]:
    if algorithm == "hyperfl":
        return set(bundle.hyper.param_shapes())
    if algorithm in ("fedavg", "dp_fedavg", "pfedhn"):
        return set(bundle.full.param_shapes())
    return set()


# -- batching ----------------------------------------------------------------------


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches covering all n samples; last batch may be short."""
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _sq_norm(tree: ParamSet) -> float:
    return float(sum(np.vdot(g, g) for g in tree.values()))


# -- local training ------------------------------------------------------------------


@dataclass(frozen=True)
class LocalStats:
    train_loss: float
    grad_sq_norm: float  # mean over the round's SGD steps


def local_train_hyperfl(
    client: ClientState,
    varphi_bar: ParamSet,
    bundle: ModelBundle,
    cfg: RoundConfig,
    rng: np.random.Generator,
) -> tuple[ClientState, ParamSet, LocalStats]:
    """Two-phase personal update; returns (new state, phi_h upload, stats).

    Step 1: one epoch on the classifier with the received hypernetwork and
    the embedding frozen (the generated extractor is computed once, since its
    inputs cannot change during this phase).  Step 2: ``local_epochs`` epochs
    moving the hypernetwork and the embedding jointly, classifier frozen.
    Hypernetwork optimizer state starts fresh each round because the
    incoming aggregate overwrites the parameters it belonged to; classifier
    and embedding momentum persist across rounds.
    """
    phi_h = tree_copy(varphi_bar)
    phi_c = tree_copy(client.phi_c)
    v = client.v.copy()
    opt_c = client.opt_c or init_optim_state(phi_c)
    opt_v = client.opt_v or {"v": np.zeros_like(v)}
    opt_h = init_optim_state(phi_h)

    x, y = client.train.x, client.train.y
    full_spec = bundle.full
    losses: list[float] = []
    step_sq_norms: list[float] = []

    # Step 1: classifier only
    theta = hypernet_forward(v, phi_h, bundle.hyper)
    for idx in minibatches(client.train.n, cfg.batch_size, rng):
        params = {**theta, **phi_c}
        loss, grads = loss_and_grad_params(params, full_spec, x[idx], y[idx])
        g_cls = {k: grads[k] for k in phi_c}
        losses.append(loss)
        step_sq_norms.append(_sq_norm(g_cls))
        phi_c, opt_c = sgd_step(phi_c, g_cls, cfg.eta_g, opt_c)

    # Step 2: hypernetwork + embedding, classifier frozen
    for _ in range(cfg.local_epochs):
        for idx in minibatches(client.train.n, cfg.batch_size, rng):
            theta = hypernet_forward(v, phi_h, bundle.hyper)
            params = {**theta, **phi_c}
            loss, grads = loss_and_grad_params(params, full_spec, x[idx], y[idx])
            d_theta = {k: grads[k] for k in theta}
            d_phi, dv = hypernet_backward(d_theta, v, phi_h, bundle.hyper)
            losses.append(loss)
            step_sq_norms.append(_sq_norm(d_phi) + float(np.vdot(dv, dv)))
            phi_h, opt_h = sgd_step(phi_h, d_phi, cfg.eta_h, opt_h)
            vt, opt_v = sgd_step({"v": v}, {"v": dv}, cfg.eta_v, opt_v)
            v = vt["v"]

    new_client = replace(
        client,
        v=v,
        phi_h=phi_h,
        phi_c=phi_c,
        opt_c=opt_c,
        opt_v=opt_v,
        last_theta=hypernet_forward(v, phi_h, bundle.hyper),
    )
    stats = LocalStats(
        train_loss=float(np.mean(losses)),
        grad_sq_norm=float(np.mean(step_sq_norms)),
    )
    return new_client, tree_copy(phi_h), stats


def local_train_fedavg(
    client: ClientState,
    global_model: ParamSet,
    bundle: ModelBundle,
    cfg: RoundConfig,
    rng: np.random.Generator,
) -> tuple[ClientState, ParamSet, LocalStats]:
    """E epochs of SGD on the whole model; the upload is the parameter delta.

    Local-only mode reuses this with the client's own model in place of a
    global one (and no aggregation afterwards).
    """
    model = tree_copy(global_model)
    opt = client.opt_c or init_optim_state(model)
    x, y = client.train.x, client.train.y
    full_spec = bundle.full
    losses: list[float] = []
    step_sq_norms: list[float] = []

    for _ in range(cfg.local_epochs):
        for idx in minibatches(client.train.n, cfg.batch_size, rng):
            loss, grads = loss_and_grad_params(model, full_spec, x[idx], y[idx])
            losses.append(loss)
            step_sq_norms.append(_sq_norm(grads))
            model, opt = sgd_step(model, grads, cfg.eta_g, opt)

    delta = tree_sub(model, global_model)
    new_client = replace(client, model=model, opt_c=opt)
    stats = LocalStats(float(np.mean(losses)), float(np.mean(step_sq_norms)))
    return new_client, delta, stats


def dp_sanitize(update: ParamSet, dp: DPConfig, rng: np.random.Generator) -> ParamSet:
    """Clip the whole update to L2 norm <= clip_norm, then add Gaussian noise.

    The clip bound is enforced literally: after the min(1, C/norm) scaling a
    rounding-error overshoot is corrected by a further tiny multiply, so the
    returned norm is <= C in exact float comparison.  With sigma == 0 and a
    norm already within the bound, the update passes through bitwise.
    """
    norm = tree_norm(update)
    out = update
    if math.isfinite(dp.clip_norm) and norm > dp.clip_norm:
        out = tree_scale(out, dp.clip_norm / norm)
        for _ in range(4):
            post = tree_norm(out)
            if post <= dp.clip_norm:
                break
            out = tree_scale(out, dp.clip_norm / post)
    else:
        out = tree_copy(out)
    if dp.sigma > 0.0:
        std = dp.sigma * dp.clip_norm
        out = {k: a + rng.normal(0.0, std, size=a.shape) for k, a in out.items()}
    return out


# -- aggregation ---------------------------------------------------------------------


def aggregate(uploads: Sequence[ParamSet], weights: Sequence[float]) -> ParamSet:
    """Weighted elementwise mean of parameter sets.

    Weights must be nonnegative with sum within 1e-9 of 1 (they are then
    renormalized exactly).  Computed as u0 + sum_i w_i (u_i - u0), which makes
    a single upload (and any set of identical uploads) return the common
    value bitwise.
    """
    if not uploads:
        raise ConfigError("aggregate needs at least one upload")
    if len(uploads) != len(weights):
        raise ConsistencyError(f"{len(uploads)} uploads but {len(weights)} weights")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ConfigError("aggregation weights must be nonnegative")
    total = float(w.sum())
    if abs(total - 1.0) > 1e-9:
        raise ConsistencyError(f"aggregation weights sum to {total}, expected 1 within 1e-9")
    w = w / total

    keys = uploads[0].keys()
    for i, u in enumerate(uploads[1:], start=1):
        if u.keys() != keys:
            raise DimensionError(f"upload {i} has different tensor names")
        for k in keys:
            if np.asarray(u[k]).shape != np.asarray(uploads[0][k]).shape:
                raise DimensionError(f"upload {i} tensor {k} has mismatched shape")

    anchor = uploads[0]
    out = tree_copy(anchor)
    for k in keys:
        acc = np.zeros_like(out[k])
        for wi, u in zip(w, uploads):
            acc += wi * (np.asarray(u[k], dtype=np.float64) - anchor[k])
        # skip the final add when the correction is identically zero so that
        # single or identical uploads come back bitwise (adding 0.0 would
        # flip the sign of -0.0 entries)
        if np.any(acc):
            out[k] = anchor[k] + acc
    return out


def sample_clients(
    m: int, rate: float, rng: np.random.Generator, force_full: bool = False
) -> np.ndarray:
    """ceil(rate*m) distinct ids, ascending; force_full overrides to everyone."""
    if not (0.0 < rate <= 1.0):
        raise ConfigError(f"sampling rate must lie in (0, 1], got {rate}")
    if force_full or rate == 1.0:
        return np.arange(m, dtype=np.int64)
    k = math.ceil(rate * m)
    return np.sort(rng.choice(m, size=k, replace=False)).astype(np.int64)


# -- initialization ------------------------------------------------------------------


def init_experiment(
    algorithm: str,
    bundle: ModelBundle,
    shards: Sequence[tuple[Dataset, Dataset]],
    seed: int,
) -> tuple[ServerState, list[ClientState]]:
    """Seeded initial states; every client starts from identical parameters.

    HyperFL: one hypernetwork draw becomes varphi_bar, one embedding draw is
    shared by all clients, one classifier draw is shared by all clients.
    FedAvg-family: one full-model draw.  pFedHN: the server draws its own
    (full-model-targeted) hypernetwork and gives every client the same
    initial embedding copy, stored server-side.
    """
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; pick one of {ALGORITHMS}")
    if not shards:
        raise ConfigError("need at least one client shard")
    init_rng = derive_rng(seed, _TAG_INIT)

    clients: list[ClientState] = []
    if algorithm == "hyperfl":
        phi_h0, v0 = init_hypernet(bundle.hyper, seed)
        phi_c0 = init_params(bundle.cls, init_rng)
        theta0 = hypernet_forward(v0, phi_h0, bundle.hyper)
        for cid, (train, test) in enumerate(shards):
            clients.append(
                ClientState(
                    id=cid,
                    train=train,
                    test=test,
                    v=v0.copy(),
                    phi_h=tree_copy(phi_h0),
                    phi_c=tree_copy(phi_c0),
                    last_theta=tree_copy(theta0),
                )
            )
        server = ServerState(algorithm=algorithm, varphi_bar=tree_copy(phi_h0))
    elif algorithm == "pfedhn":
        hyper = bundle.pfedhn_hyper()
        phi_h0, v0 = init_hypernet(hyper, seed)
        embeddings = {cid: v0.copy() for cid in range(len(shards))}
        for cid, (train, test) in enumerate(shards):
            model0 = hypernet_forward(v0, phi_h0, hyper)
            clients.append(ClientState(id=cid, train=train, test=test, model=model0))
        server = ServerState(
            algorithm=algorithm,
            varphi_bar=phi_h0,
            embeddings=embeddings,
            opt_h=init_optim_state(phi_h0),
            opt_v={cid: {"v": np.zeros_like(v0)} for cid in range(len(shards))},
        )
    else:  # fedavg / dp_fedavg / local
        model0 = init_params(bundle.full, init_rng)
        for cid, (train, test) in enumerate(shards):
            clients.append(ClientState(id=cid, train=train, test=test, model=tree_copy(model0)))
        server = ServerState(
            algorithm=algorithm,
            global_model=None if algorithm == "local" else model0,
        )
    return server, clients


# -- evaluation ----------------------------------------------------------------------


def client_eval_model(client: ClientState, server: ServerState, bundle: ModelBundle) -> ParamSet:
    """The parameters a client would use for inference right now."""
    if client.model is not None:
        return {**client.model}
    theta = hypernet_forward(client.v, client.phi_h, bundle.hyper)
    return {**theta, **client.phi_c}


def evaluate_clients(
    server: ServerState, clients: Sequence[ClientState], bundle: ModelBundle
) -> list[float]:
    spec = bundle.full
    return [
        accuracy(client_eval_model(c, server, bundle), spec, c.test.x, c.test.y) for c in clients
    ]


def initial_records(
    server: ServerState, clients: Sequence[ClientState], bundle: ModelBundle
) -> list[RoundRecord]:
    """Round-0 rows: initial test accuracy, every step metric unmeasured."""
    accs = evaluate_clients(server, clients, bundle)
    return [
        RoundRecord(round=0, client_id=str(c.id), test_acc=acc)
        for c, acc in zip(clients, accs)
    ]


# -- the round --------------------------------------------------------------------------


def run_round(
    server: ServerState,
    clients: Sequence[ClientState],
    bundle: ModelBundle,
    cfg: RoundConfig,
    dp: DPConfig,
    seed: int,
    wire: Wire | None = None,
    workers: int = 1,
) -> tuple[ServerState, list[ClientState], list[RoundRecord]]:
    """One communication round; returns one record per client.

    Sampled clients train and get fresh step metrics; unsampled clients keep
    NaN step metrics but are still evaluated on their test shards.
    """
    wire = wire if wire is not None else Wire()
    t = server.round_t + 1
    m = len(clients)
    sample_rng = derive_rng(seed, _TAG_SAMPLE, t)
    force_full = t == cfg.total_rounds
    sampled = sample_clients(m, cfg.sampling_rate, sample_rng, force_full=force_full)

    if server.algorithm == "pfedhn":
        return _run_round_pfedhn(server, clients, bundle, cfg, seed, wire, sampled, t)

    upload_names = _allowed_upload_names(server.algorithm, bundle)
    new_clients = list(clients)
    stats_by_id: dict[int, LocalStats] = {}
    drift_by_id: dict[int, tuple[float, float]] = {}  # (hypernet, extractor)

    # broadcast phase: payloads decoded from wire bytes on the "client side"
    received: dict[int, ParamSet] = {}
    for cid in sampled:
        cid = int(cid)
        if server.algorithm == "hyperfl":
            msg = wire.send("server", f"client:{cid}", "broadcast", t, server.varphi_bar, upload_names)
            received[cid] = msg.tensors()
        elif server.algorithm in ("fedavg", "dp_fedavg"):
            msg = wire.send("server", f"client:{cid}", "broadcast", t, server.global_model, upload_names)
            received[cid] = msg.tensors()
        else:  # local: no broadcast, train from own model
            received[cid] = clients[cid].model

    def train_one(cid: int) -> tuple[int, ClientState, ParamSet, LocalStats]:
        step_rng = derive_rng(seed, _TAG_STEP, cid, t)
        client = clients[cid]
        if server.algorithm == "hyperfl":
            new_c, upload, stats = local_train_hyperfl(client, received[cid], bundle, cfg, step_rng)
        else:
            new_c, upload, stats = local_train_fedavg(client, received[cid], bundle, cfg, step_rng)
        return cid, new_c, upload, stats

    ids = [int(c) for c in sampled]
    if workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(train_one, ids))
    else:
        results = [train_one(cid) for cid in ids]

    uploads_by_id: dict[int, ParamSet] = {}
    for cid, new_c, upload, stats in results:
        if server.algorithm == "dp_fedavg":
            noise_rng = derive_rng(seed, _TAG_DPNOISE, cid, t)
            upload = dp_sanitize(upload, dp, noise_rng)
        stats_by_id[cid] = stats
        old = clients[cid]
        if server.algorithm == "hyperfl":
            hdrift = tree_norm(tree_sub(new_c.phi_h, received[cid]))
            edrift = tree_norm(tree_sub(new_c.last_theta, old.last_theta))
        else:
            fe_names = set(bundle.fe.param_shapes())
            diff = tree_sub(new_c.model, received[cid])
            edrift = math.sqrt(sum(float(np.vdot(v, v)) for k, v in diff.items() if k in fe_names))
            hdrift = math.nan
        drift_by_id[cid] = (hdrift, edrift)
        new_clients[cid] = new_c
        if server.algorithm != "local":
            msg = wire.send(f"client:{cid}", "server", "upload", t, upload, upload_names)
            uploads_by_id[cid] = msg.tensors()

    # aggregation phase, ascending client id, weights n_i over the sampled subset
    new_server = server
    if server.algorithm != "local" and uploads_by_id:
        order = sorted(uploads_by_id)
        sizes = np.array([clients[cid].train.n for cid in order], dtype=np.float64)
        weights = sizes / sizes.sum()
        merged = aggregate([uploads_by_id[cid] for cid in order], list(weights))
        if server.algorithm == "hyperfl":
            new_server = replace(server, round_t=t, varphi_bar=merged)
        else:
            new_server = replace(server, round_t=t, global_model=tree_add(server.global_model, merged))
    else:
        new_server = replace(server, round_t=t)

    accs = evaluate_clients(new_server, new_clients, bundle)
    records = []
    for c, acc in zip(new_clients, accs):
        stats = stats_by_id.get(c.id)
        hdrift, edrift = drift_by_id.get(c.id, (math.nan, math.nan))
        records.append(
            RoundRecord(
                round=t,
                client_id=str(c.id),
                train_loss=stats.train_loss if stats else math.nan,
                test_acc=acc,
                grad_sq_norm=stats.grad_sq_norm if stats else math.nan,
                hypernet_drift=hdrift,
                extractor_drift=edrift,
            )
        )
    return new_server, new_clients, records


def _run_round_pfedhn(
    server: ServerState,
    clients: Sequence[ClientState],
    bundle: ModelBundle,
    cfg: RoundConfig,
    seed: int,
    wire: Wire,
    sampled: np.ndarray,
    t: int,
) -> tuple[ServerState, list[ClientState], list[RoundRecord]]:
    """Server-side hypernetwork round: generate, send, train, pull back VJP.

    Sampled clients are processed in ascending id; the server applies one
    update per client (sequential, as in the underlying method).
    """
    hyper = bundle.pfedhn_hyper()
    allowed = _allowed_upload_names("pfedhn", bundle)
    server_cfg = OptimConfig(learning_rate=cfg.server_lr)

    phi_h = tree_copy(server.varphi_bar)
    opt_h = {k: v.copy() for k, v in server.opt_h.items()}
    embeddings = {cid: v.copy() for cid, v in server.embeddings.items()}
    opt_v = {cid: {"v": st["v"].copy()} for cid, st in server.opt_v.items()}

    new_clients = list(clients)
    stats_by_id: dict[int, LocalStats] = {}
    drift_by_id: dict[int, tuple[float, float]] = {}

    for cid in [int(c) for c in sampled]:
        model_sent = hypernet_forward(embeddings[cid], phi_h, hyper)
        msg = wire.send("server", f"client:{cid}", "broadcast", t, model_sent, allowed)
        received = msg.tensors()

        step_rng = derive_rng(seed, _TAG_STEP, cid, t)
        new_c, delta, stats = local_train_fedavg(clients[cid], received, bundle, cfg, step_rng)
        up_msg = wire.send(f"client:{cid}", "server", "upload", t, delta, allowed)
        delta = up_msg.tensors()

        # descent direction on 1/2 ||h(v; phi) - model_trained||^2
        d_phi, dv = hypernet_backward(tree_scale(delta, -1.0), embeddings[cid], phi_h, hyper)
        phi_h, opt_h = sgd_step(phi_h, d_phi, server_cfg, opt_h)
        vt, opt_v[cid] = sgd_step({"v": embeddings[cid]}, {"v": dv}, server_cfg, opt_v[cid])
        embeddings[cid] = vt["v"]

        fe_names = set(bundle.fe.param_shapes())
        edrift = math.sqrt(sum(float(np.vdot(a, a)) for k, a in delta.items() if k in fe_names))
        drift_by_id[cid] = (tree_norm(d_phi) * cfg.server_lr, edrift)
        stats_by_id[cid] = stats
        new_clients[cid] = new_c

    new_server = replace(
        server, round_t=t, varphi_bar=phi_h, embeddings=embeddings, opt_h=opt_h, opt_v=opt_v
    )
    accs = evaluate_clients(new_server, new_clients, bundle)
    records = []
    for c, acc in zip(new_clients, accs):
        stats = stats_by_id.get(c.id)
        hdrift, edrift = drift_by_id.get(c.id, (math.nan, math.nan))
        records.append(
            RoundRecord(
                round=t,
                client_id=str(c.id),
                train_loss=stats.train_loss if stats else math.nan,
                test_acc=acc,
                grad_sq_norm=stats.grad_sq_norm if stats else math.nan,
                hypernet_drift=hdrift,
                extractor_drift=edrift,
            )
        )
    return new_server, new_clients, records


# -- experiment loop -----------------------------------------------------------------------


def run_experiment(
    algorithm: str,
    bundle: ModelBundle,
    shards: Sequence[tuple[Dataset, Dataset]],
    cfg: RoundConfig,
    seed: int,
    dp: DPConfig | None = None,
    workers: int = 1,
    wire: Wire | None = None,
    on_round: Callable[[int, ServerState, list[ClientState]], None] | None = None,
) -> tuple[ServerState, list[ClientState], list[RoundRecord]]:
    """Initialize, run ``cfg.total_rounds`` rounds, collect all records.

    ``workers`` only controls thread-pool width; any value yields the same
    bits.  ``on_round`` (if given) fires after every round with the fresh
    states; snapshotting hooks in there.
    """
    dp = dp or DPConfig()
    server, clients = init_experiment(algorithm, bundle, shards, seed)
    records = initial_records(server, clients, bundle)
    if on_round is not None:
        on_round(0, server, clients)
    for _ in range(cfg.total_rounds):
        server, clients, round_records = run_round(
            server, clients, bundle, cfg, dp, seed, wire=wire, workers=workers
        )
        records.extend(round_records)
        if on_round is not None:
            on_round(server.round_t, server, clients)
    return server, clients, records


# -- state serialization ---------------------------------------------------------------------


def state_to_tensors(server: ServerState, clients: Sequence[ClientState]) -> ParamSet:
    """Flatten an experiment state into one name -> tensor map.

    Layout: ``meta/round``, ``meta/algorithm`` (code point array),
    ``server/...`` for global parameters, ``client/<id>/...`` per client.
    Shards are not serialized: they are reproducible from the experiment
    config.
    """
    flat: ParamSet = {
        "meta/round": np.array(float(server.round_t)),
        "meta/algorithm": np.array([float(ord(ch)) for ch in server.algorithm]),
        "meta/clients": np.array(float(len(clients))),
    }
    if server.varphi_bar is not None:
        for k, a in server.varphi_bar.items():
            flat[f"server/varphi/{k}"] = a
    if server.global_model is not None:
        for k, a in server.global_model.items():
            flat[f"server/model/{k}"] = a
    if server.embeddings is not None:
        for cid, v in server.embeddings.items():
            flat[f"server/embedding/{cid}"] = v
    for c in clients:
        base = f"client/{c.id}"
        if c.v is not None:
            flat[f"{base}/v"] = c.v
        for group, tree in (("phi_h", c.phi_h), ("phi_c", c.phi_c), ("model", c.model)):
            if tree is not None:
                for k, a in tree.items():
                    flat[f"{base}/{group}/{k}"] = a
    return flat


def tensors_to_state(
    flat: ParamSet, bundle: ModelBundle, shards: Sequence[tuple[Dataset, Dataset]]
) -> tuple[ServerState, list[ClientState]]:
    """Rebuild (server, clients) from a flattened snapshot plus data shards.

    Optimizer state is not restored (snapshots capture parameters, not
    momentum); resuming treats the snapshot as a fresh-momentum start.
    """
    algorithm = "".join(chr(int(x)) for x in np.asarray(flat["meta/algorithm"]).ravel())
    n_clients = int(float(flat["meta/clients"]))
    if n_clients != len(shards):
        raise ConsistencyError(f"snapshot has {n_clients} clients, got {len(shards)} shards")
    round_t = int(float(flat["meta/round"]))

    def subtree(prefix: str) -> ParamSet:
        plen = len(prefix)
        return {k[plen:]: np.asarray(a) for k, a in flat.items() if k.startswith(prefix)}

    varphi = subtree("server/varphi/") or None
    global_model = subtree("server/model/") or None
    emb_tree = subtree("server/embedding/")
    embeddings = {int(k): np.asarray(v) for k, v in emb_tree.items()} or None

    clients = []
    for cid, (train, test) in enumerate(shards):
        base = f"client/{cid}/"
        v = flat.get(f"client/{cid}/v")
        phi_h = subtree(base + "phi_h/") or None
        phi_c = subtree(base + "phi_c/") or None
        model = subtree(base + "model/") or None
        theta = (
            hypernet_forward(np.asarray(v), phi_h, bundle.hyper)
            if (v is not None and phi_h is not None)
            else None
        )
        clients.append(
            ClientState(
                id=cid,
                train=train,
                test=test,
                v=None if v is None else np.asarray(v),
                phi_h=phi_h,
                phi_c=phi_c,
                model=model,
                last_theta=theta,
            )
        )
    server = ServerState(
        algorithm=algorithm,
        round_t=round_t,
        varphi_bar=varphi,
        global_model=global_model,
        embeddings=embeddings,
        opt_h=init_optim_state(varphi) if (algorithm == "pfedhn" and varphi) else None,
        opt_v=(
            {cid: {"v": np.zeros_like(v)} for cid, v in embeddings.items()}
            if (algorithm == "pfedhn" and embeddings)
            else None
        ),
    )
    return server, clients
