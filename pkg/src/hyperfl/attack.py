"""Gradient-inversion toolkit for an honest-but-curious server.

What the server can try depends on what a protocol leaks:

* full-model gradients (plain weight averaging, or a server-side
  hypernetwork whose generated models it knows): iterative gradient
  matching (`ig_attack`) plus an exact batch-1 oracle
  (`analytic_input_recovery`) that serves as the positive control;
* hypernetwork gradients only: the embedding must be recovered first
  (`recover_embedding`), then the reconstructed extractor is inverted
  (`hyperfl_bilevel_attack`).  No success is guaranteed; the residuals
  and scores are the experiment's outcome, not an error condition.

A `Transcript` keeps the true sample for scoring.  Attack operations
accept only its redacted `TranscriptView`, so reconstruction code cannot
touch ground truth even by accident.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import hypernet as hn
from . import metrics as mx
from . import network as nn
from .errors import (
    CapabilityError,
    ConfigError,
    ConsistencyError,
    DimensionError,
    NumericError,
)
from .fedsim import DPConfig, dp_sanitize
from .hypernet import HypernetSpec
from .network import NetSpec, OptimConfig, ParamSet

_TAG_INIT = 0x41545443
_TAG_EMBED = 0x52454D42
_TAG_PROBE = 0x50524F42

GRAD_LOSSES = ("cosine", "l2")
INIT_KINDS = ("uniform", "zeros")
OPTIMIZERS = ("adam", "sgd")

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class AttackConfig:
    """Reconstruction-search settings.

    Defaults are the strong published configuration: 10,000 iterations of
    adaptive-moment updates at step 0.1 (decayed by 0.1 at 3/8, 5/8 and 7/8
    of the budget), cosine gradient loss, total-variation weight 1e-6,
    seeded uniform init.
    """

    iterations: int = 10_000
    step_size: float = 0.1
    grad_loss: str = "cosine"
    tv_coeff: float = 1e-6
    init: str = "uniform"
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be nonnegative, got {self.iterations}")
        if not self.step_size > 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if self.tv_coeff < 0:
            raise ConfigError(f"tv_coeff must be nonnegative, got {self.tv_coeff}")
        if self.grad_loss not in GRAD_LOSSES:
            raise ConfigError(f"grad_loss must be one of {GRAD_LOSSES}, got {self.grad_loss!r}")
        if self.init not in INIT_KINDS:
            raise ConfigError(f"init must be one of {INIT_KINDS}, got {self.init!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    loss: float
    best_loss: float


@dataclass(frozen=True)
class TranscriptView:
    """What the server legitimately knows about one client round.

    ``params`` are the parameter values the server sent or can rebuild;
    ``observed`` are the gradient tensors it recovered from the upload.
    For protocols that expose the full model, ``model_spec`` describes it
    and ``observed`` is keyed by its tensor names.  For the
    hypernetwork-only protocol, ``params``/``observed`` hold hypernetwork
    tensors, ``hyper_spec`` describes them, and ``model_spec`` is the
    architecture of the generated feature extractor (weights unknown).
    """

    algorithm: str
    model_spec: NetSpec
    params: Mapping[str, np.ndarray]
    observed: Mapping[str, np.ndarray]
    label: int
    image_shape: tuple[int, int]
    hyper_spec: Optional[HypernetSpec] = None


@dataclass(frozen=True)
class Transcript:
    """A view plus the ground truth kept aside for scoring.

    Attack operations refuse this type; hand them ``public()`` instead.
    """

    view: TranscriptView
    x_true: np.ndarray
    y_true: int

    def public(self) -> TranscriptView:
        return self.view


def _require_view(view) -> TranscriptView:
    if isinstance(view, Transcript):
        raise CapabilityError(
            "attacks take the redacted view; call transcript.public() first"
        )
    if not isinstance(view, TranscriptView):
        raise CapabilityError(f"expected a TranscriptView, got {type(view).__name__}")
    return view


# -- priors ---------------------------------------------------------------


def total_variation(x):
    """Anisotropic total variation of a 2-D image.

    Sum of absolute differences between vertically and horizontally
    adjacent pixels.  Accepts an array (returns float) or an autodiff
    Var (returns a Var, usable inside attack objectives).
    """
    symbolic = isinstance(x, ad.Var)
    xv = x if symbolic else ad.constant(np.asarray(x, dtype=np.float64))
    if xv.ndim != 2:
        raise DimensionError(f"total_variation expects an H x W image, got shape {xv.shape}")
    dv = ad.sub(ad.slice_(xv, (slice(1, None), slice(None))), ad.slice_(xv, (slice(0, -1), slice(None))))
    dh = ad.sub(ad.slice_(xv, (slice(None), slice(1, None))), ad.slice_(xv, (slice(None), slice(0, -1))))
    tv = ad.add(ad.sum_(ad.abs_(dv)), ad.sum_(ad.abs_(dh)))
    return tv if symbolic else float(tv.data)


# -- optimizer loop ---------------------------------------------------------


def _decay_milestones(n: int) -> set[int]:
    return {(n * 3) // 8, (n * 5) // 8, (n * 7) // 8} if n > 0 else set()


def _value_and_grads(objective, xs: Mapping[str, np.ndarray]):
    names = sorted(xs)
    leaves = {k: ad.Var(np.asarray(xs[k], dtype=np.float64)) for k in names}
    out = objective(leaves)
    if not isinstance(out, ad.Var):
        raise NumericError("attack objective must return an autodiff scalar")
    grads = ad.grad(out, [leaves[k] for k in names])
    return float(out.data), {k: g.data for k, g in zip(names, grads)}


def _optimize(objective, init: Mapping[str, np.ndarray], cfg: AttackConfig):
    """Minimize a scalar objective over a dict of arrays.

    Returns (best iterate, best loss, trace).  The trace records loss and
    best-so-far every 100 iterations and once at the end.  A non-finite
    objective or gradient stops the search early; the best finite iterate
    found so far is returned rather than raising, because attack failure
    is a result to report.
    """
    xs = {k: np.array(v, dtype=np.float64, copy=True) for k, v in init.items()}
    best = {k: v.copy() for k, v in xs.items()}
    best_loss = math.inf
    trace: list[TraceRow] = []

    if cfg.iterations == 0:
        loss, _ = _value_and_grads(objective, xs)
        trace.append(TraceRow(0, loss, loss))
        return xs, loss, trace

    m = {k: np.zeros_like(v) for k, v in xs.items()}
    u = {k: np.zeros_like(v) for k, v in xs.items()}
    lr = cfg.step_size
    milestones = _decay_milestones(cfg.iterations)

    for t in range(cfg.iterations):
        if t > 0 and t in milestones:
            lr *= 0.1
        loss, grads = _value_and_grads(objective, xs)
        if not math.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads.values()):
            break
        if loss < best_loss:
            best_loss = loss
            best = {k: v.copy() for k, v in xs.items()}
        if t % 100 == 0:
            trace.append(TraceRow(t, loss, best_loss))
        if cfg.optimizer == "adam":
            step = t + 1
            for k, g in grads.items():
                m[k] = _ADAM_BETA1 * m[k] + (1.0 - _ADAM_BETA1) * g
                u[k] = _ADAM_BETA2 * u[k] + (1.0 - _ADAM_BETA2) * np.square(g)
                m_hat = m[k] / (1.0 - _ADAM_BETA1**step)
                u_hat = u[k] / (1.0 - _ADAM_BETA2**step)
                xs[k] = xs[k] - lr * m_hat / (np.sqrt(u_hat) + _ADAM_EPS)
        else:
            for k, g in grads.items():
                xs[k] = xs[k] - lr * g

    final_loss, _ = _value_and_grads(objective, xs)
    if math.isfinite(final_loss) and final_loss < best_loss:
        best_loss = final_loss
        best = {k: v.copy() for k, v in xs.items()}
    trace.append(TraceRow(cfg.iterations, final_loss, best_loss))
    return best, best_loss, trace


def _init_image(shape: tuple[int, int], cfg: AttackConfig) -> np.ndarray:
    if cfg.init == "zeros":
        return np.zeros(shape, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, _TAG_INIT)))
    return rng.uniform(0.0, 1.0, size=shape)


# -- gradient-matching losses ------------------------------------------------


def _gradient_loss_sym(sim: Mapping[str, ad.Var], obs: Mapping[str, np.ndarray], kind: str) -> ad.Var:
    names = sorted(obs)
    if kind == "l2":
        total = None
        for k in names:
            term = ad.sum_(ad.square(ad.sub(sim[k], ad.constant(obs[k]))))
            total = term if total is None else ad.add(total, term)
        return total
    # cosine distance over the concatenation of all tensors
    obs_sq = float(sum(np.sum(np.square(o)) for o in obs.values()))
    if obs_sq == 0.0:
        raise ConsistencyError("observed gradient is identically zero; cosine loss undefined")
    num = None
    sim_sq = None
    for k in names:
        n = ad.sum_(ad.mul(sim[k], ad.constant(obs[k])))
        s = ad.sum_(ad.square(sim[k]))
        num = n if num is None else ad.add(num, n)
        sim_sq = s if sim_sq is None else ad.add(sim_sq, s)
    denom = ad.mul(ad.sqrt(sim_sq), ad.constant(np.float64(math.sqrt(obs_sq))))
    return ad.sub(ad.constant(np.float64(1.0)), ad.div(num, denom))


# -- the generic attack (full-model gradients) -------------------------------------


def ig_attack(view: TranscriptView, cfg: AttackConfig):
    """Reconstruct the input from full-model batch-1 gradients.

    Minimizes gradient-matching loss plus a total-variation prior over
    the image, with the label taken as known.  Returns the best iterate
    by loss and the loss trace.
    """
    view = _require_view(view)
    if view.algorithm == "hyperfl":
        raise CapabilityError(
            "full-model gradients are not observable for hyperfl transcripts "
            "(the classifier never leaves the client); use hyperfl_bilevel_attack"
        )
    spec = view.model_spec
    expected = set(spec.param_shapes())
    if set(view.observed) != expected:
        raise ConsistencyError("observed gradients do not cover the model's tensors")
    h_px, w_px = view.image_shape
    if h_px * w_px != spec.in_dim:
        raise DimensionError(
            f"image shape {view.image_shape} does not match model input dim {spec.in_dim}"
        )
    obs = {k: np.asarray(v, dtype=np.float64) for k, v in view.observed.items()}
    y = np.array([view.label], dtype=np.int64)

    def objective(leaves: Mapping[str, ad.Var]) -> ad.Var:
        x_row = leaves["x"].reshape((1, h_px * w_px))
        params = {k: ad.Var(np.asarray(view.params[k], dtype=np.float64)) for k in expected}
        loss = nn.forward_loss_sym(params, spec, x_row, y)
        sim = dict(zip(sorted(params), ad.grad(loss, [params[k] for k in sorted(params)])))
        out = _gradient_loss_sym(sim, obs, cfg.grad_loss)
        if cfg.tv_coeff > 0:
            out = ad.add(out, ad.mul(ad.constant(np.float64(cfg.tv_coeff)), total_variation(leaves["x"])))
        return out

    best, _, trace = _optimize(objective, {"x": _init_image(view.image_shape, cfg)}, cfg)
    return best["x"], trace


def analytic_input_recovery(d_weight: np.ndarray, d_bias: np.ndarray, threshold: float = 1e-10) -> np.ndarray:
    """Exact batch-1 input from the first dense layer's gradients.

    With one sample, the weight gradient is the outer product of the bias
    gradient and the input, so any row with a usable bias entry yields x
    by division.  Raises a degenerate-gradient error when every bias
    entry is below ``threshold`` in magnitude.
    """
    d_weight = np.asarray(d_weight, dtype=np.float64)
    d_bias = np.asarray(d_bias, dtype=np.float64)
    if d_weight.ndim != 2 or d_bias.ndim != 1 or d_weight.shape[0] != d_bias.shape[0]:
        raise DimensionError(
            f"need matching [out, in] weight and [out] bias gradients, got {d_weight.shape} and {d_bias.shape}"
        )
    i = int(np.argmax(np.abs(d_bias)))
    if not abs(d_bias[i]) > threshold:
        raise NumericError("degenerate gradient: all bias entries below threshold, input unrecoverable")
    return d_weight[i] / d_bias[i]


def gradient_from_delta(delta: ParamSet, params: ParamSet, opt: OptimConfig) -> ParamSet:
    """Invert one fresh SGD step: recover the loss gradient from the update.

    Valid for the first step after an optimizer reset (no accumulated
    momentum), which is exactly what a server sees after a one-step round.
    """
    if opt.learning_rate <= 0:
        raise ConfigError("cannot invert a step taken with learning rate 0")
    out = {}
    for k, d in delta.items():
        out[k] = -np.asarray(d, dtype=np.float64) / opt.learning_rate - opt.weight_decay * np.asarray(
            params[k], dtype=np.float64
        )
    return out


# -- the hypernetwork-only attack --------------------------------------------------


def recover_embedding(
    view: TranscriptView,
    cfg: AttackConfig,
    init_v: Optional[np.ndarray] = None,
    init_theta: Optional[ParamSet] = None,
):
    """Search for the client embedding behind observed hypernetwork gradients.

    The classifier is private, so the true local loss cannot be formed;
    instead both the embedding v and the regression target theta are
    optimized jointly so that the gradient of 1/2 ||h(v) - theta||^2 with
    respect to the hypernetwork weights matches the observed gradient.
    The residual is always the squared-L2 mismatch (an absolute quantity
    comparable across runs).  Returns (v_hat, theta_hat, residual);
    failure to reach a small residual is an outcome, not an error.
    """
    view = _require_view(view)
    if view.algorithm != "hyperfl":
        raise CapabilityError("embedding recovery applies to hyperfl transcripts only")
    spec = view.hyper_spec
    if spec is None:
        raise ConsistencyError("hyperfl transcript lacks its hypernetwork description")
    if set(view.observed) != set(spec.param_shapes()):
        raise ConsistencyError("observed gradients do not cover the hypernetwork's tensors")
    obs = {k: np.asarray(v, dtype=np.float64) for k, v in view.observed.items()}
    phi_names = sorted(view.params)

    if init_v is None:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, _TAG_EMBED)))
        init_v = rng.standard_normal(spec.embedding_dim)
    if init_theta is None:
        init_theta = {name: np.zeros(shape) for name, shape in spec.target}

    start = {"v": np.asarray(init_v, dtype=np.float64)}
    for name, shape in spec.target:
        t = np.asarray(init_theta[name], dtype=np.float64)
        if t.shape != shape:
            raise DimensionError(f"init theta {name} has shape {t.shape}, expected {shape}")
        start[f"theta/{name}"] = t

    def objective(leaves: Mapping[str, ad.Var]) -> ad.Var:
        phi = {k: ad.Var(np.asarray(view.params[k], dtype=np.float64)) for k in phi_names}
        gen = hn.hypernet_forward_sym(leaves["v"], phi, spec)
        inner = None
        for name, _ in spec.target:
            term = ad.sum_(ad.square(ad.sub(gen[name], leaves[f"theta/{name}"])))
            inner = term if inner is None else ad.add(inner, term)
        inner = ad.mul(ad.constant(np.float64(0.5)), inner)
        sim = dict(zip(phi_names, ad.grad(inner, [phi[k] for k in phi_names])))
        return _gradient_loss_sym(sim, obs, "l2")

    best, residual, _ = _optimize(objective, start, cfg)
    v_hat = best["v"]
    theta_hat = {name: best[f"theta/{name}"] for name, _ in spec.target}
    return v_hat, theta_hat, residual


def hyperfl_bilevel_attack(view: TranscriptView, cfg: AttackConfig):
    """Two-stage reconstruction against hypernetwork-only transcripts.

    Stage one recovers an embedding candidate; stage two materializes the
    extractor it generates and inverts that extractor by matching its mean
    response to random probes, under a total-variation prior.  The true
    local loss cannot be rebuilt without the private classifier, so this
    activation-matching inversion is a deliberately weak stand-in for a
    full model-inversion attack; reported scores measure what the protocol
    leaks, not attacker optimality.  Each stage gets the full configured
    iteration budget.
    """
    view = _require_view(view)
    if view.algorithm != "hyperfl":
        raise CapabilityError("the bi-level attack applies to hyperfl transcripts only")
    fe_spec = view.model_spec
    h_px, w_px = view.image_shape
    if h_px * w_px != fe_spec.in_dim:
        raise DimensionError(
            f"image shape {view.image_shape} does not match extractor input dim {fe_spec.in_dim}"
        )

    v_hat, _, residual = recover_embedding(view, cfg)
    theta_gen = hn.hypernet_forward(v_hat, dict(view.params), view.hyper_spec)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, _TAG_PROBE)))
    probes = rng.uniform(0.0, 1.0, size=(16, fe_spec.in_dim))
    target = nn.forward_logits(theta_gen, fe_spec, probes).mean(axis=0)
    target_row = target.reshape(1, -1)

    def objective(leaves: Mapping[str, ad.Var]) -> ad.Var:
        x_row = leaves["x"].reshape((1, h_px * w_px))
        feats = nn.forward_logits_sym({k: ad.constant(v) for k, v in theta_gen.items()}, fe_spec, x_row)
        out = ad.sum_(ad.square(ad.sub(feats, ad.constant(target_row))))
        if cfg.tv_coeff > 0:
            out = ad.add(out, ad.mul(ad.constant(np.float64(cfg.tv_coeff)), total_variation(leaves["x"])))
        return out

    best, upper_loss, trace = _optimize(objective, {"x": _init_image(view.image_shape, cfg)}, cfg)
    report = {
        "algorithm": view.algorithm,
        "embedding_residual": residual,
        "inversion_loss": upper_loss,
        "iterations": {"lower": cfg.iterations, "upper": cfg.iterations},
        "trace": trace,
    }
    return best["x"], report


def attack_transcript(view: TranscriptView, cfg: AttackConfig):
    """Route a transcript to the applicable attack; returns (x_hat, trace)."""
    view = _require_view(view)
    if view.algorithm == "hyperfl":
        x_hat, report = hyperfl_bilevel_attack(view, cfg)
        return x_hat, report["trace"]
    return ig_attack(view, cfg)


# -- transcript builders ---------------------------------------------------------

# These run client-side: they see the private sample and package what the
# server would observe, keeping the sample on the Transcript for scoring.


def _check_image(spec: NetSpec, x_img: np.ndarray) -> np.ndarray:
    x_img = np.asarray(x_img, dtype=np.float64)
    if x_img.ndim != 2:
        raise DimensionError(f"expected an H x W image, got shape {x_img.shape}")
    if x_img.size != spec.in_dim:
        raise DimensionError(f"image has {x_img.size} pixels, model expects {spec.in_dim}")
    return x_img


def _batch1_grads(params: ParamSet, spec: NetSpec, x_img: np.ndarray, y: int) -> ParamSet:
    return nn.grad_params(params, spec, x_img.reshape(1, -1), np.array([y], dtype=np.int64))


def fedavg_transcript(params: ParamSet, spec: NetSpec, x_img: np.ndarray, y: int) -> Transcript:
    """One client, one sample, full model shared: the server sees everything."""
    x_img = _check_image(spec, x_img)
    view = TranscriptView(
        algorithm="fedavg",
        model_spec=spec,
        params=nn.tree_copy(params),
        observed=_batch1_grads(params, spec, x_img, y),
        label=int(y),
        image_shape=x_img.shape,
    )
    return Transcript(view=view, x_true=x_img.copy(), y_true=int(y))


def pfedhn_transcript(
    params: ParamSet, spec: NetSpec, x_img: np.ndarray, y: int, opt: OptimConfig = OptimConfig(0.1)
) -> Transcript:
    """Server-side hypernetwork baseline: the server generated the client
    model itself, so it inverts the returned one-step delta into gradients."""
    x_img = _check_image(spec, x_img)
    grads = _batch1_grads(params, spec, x_img, y)
    stepped, _ = nn.sgd_step(params, grads, opt)
    delta = nn.tree_sub(stepped, params)
    view = TranscriptView(
        algorithm="pfedhn",
        model_spec=spec,
        params=nn.tree_copy(params),
        observed=gradient_from_delta(delta, params, opt),
        label=int(y),
        image_shape=x_img.shape,
    )
    return Transcript(view=view, x_true=x_img.copy(), y_true=int(y))


def dp_fedavg_transcript(
    params: ParamSet,
    spec: NetSpec,
    x_img: np.ndarray,
    y: int,
    dp: DPConfig,
    rng: np.random.Generator,
) -> Transcript:
    """Full model shared but the upload was clipped and noised first."""
    x_img = _check_image(spec, x_img)
    observed = dp_sanitize(_batch1_grads(params, spec, x_img, y), dp, rng)
    view = TranscriptView(
        algorithm="dp_fedavg",
        model_spec=spec,
        params=nn.tree_copy(params),
        observed=observed,
        label=int(y),
        image_shape=x_img.shape,
    )
    return Transcript(view=view, x_true=x_img.copy(), y_true=int(y))


def hyperfl_transcript(
    v: np.ndarray,
    phi_h: ParamSet,
    phi_c: ParamSet,
    hyper_spec: HypernetSpec,
    fe_spec: NetSpec,
    cls_spec: NetSpec,
    x_img: np.ndarray,
    y: int,
) -> Transcript:
    """Hypernetwork protocol: the wire carries hypernetwork tensors only.

    The observed gradient is what one joint training step would push
    through the hypernetwork: the loss gradient at the generated extractor
    (computed with the client's private classifier) pulled back through
    the generator.
    """
    x_img = _check_image(fe_spec, x_img)
    theta = hn.hypernet_forward(v, phi_h, hyper_spec)
    full_spec = nn.concat_specs(fe_spec, cls_spec)
    full_params = {**theta, **phi_c}
    grads = _batch1_grads(full_params, full_spec, x_img, y)
    d_theta = {k: grads[k] for k in theta}
    d_phi, _ = hn.hypernet_backward(d_theta, v, phi_h, hyper_spec)
    view = TranscriptView(
        algorithm="hyperfl",
        model_spec=fe_spec,
        params=nn.tree_copy(phi_h),
        observed=d_phi,
        label=int(y),
        image_shape=x_img.shape,
        hyper_spec=hyper_spec,
    )
    return Transcript(view=view, x_true=x_img.copy(), y_true=int(y))


# -- scoring and reports ---------------------------------------------------------


def score_reconstruction(transcript: Transcript, x_hat: np.ndarray) -> dict[str, float]:
    """PSNR/SSIM of a reconstruction against the transcript's ground truth."""
    p = mx.psnr(x_hat, transcript.x_true)
    try:
        s = mx.ssim(x_hat, transcript.x_true)
    except DimensionError:  # image smaller than the SSIM window
        s = math.nan
    return {"psnr": p, "ssim": s}


def sample_record(sample_id, algorithm, x_hat, scores, trace, analytic_psnr=math.nan) -> dict:
    """Flat JSON-ready record of one attacked sample.

    ``analytic_psnr`` scores the closed-form batch-1 recovery where the
    transcript admits one (full-model protocols); NaN elsewhere.
    """
    return {
        "sample": int(sample_id),
        "algorithm": str(algorithm),
        "psnr": float(scores["psnr"]),
        "ssim": float(scores["ssim"]),
        "analytic_psnr": float(analytic_psnr),
        "trace": [[r.iteration, r.loss, r.best_loss] for r in trace] if trace else [],
        "reconstruction": np.asarray(x_hat, dtype=np.float64).ravel().tolist(),
    }


def write_attack_report(path, cfg: AttackConfig, samples: Sequence[Mapping]) -> None:
    payload = {"config": asdict(cfg), "samples": list(samples)}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_attack_summary_csv(path, samples: Sequence[Mapping]) -> None:
    """Per-sample score table; the analytic column is the exact-recovery control."""
    lines = ["sample,algorithm,psnr,ssim,analytic_psnr"]
    for s in samples:
        lines.append(
            f"{int(s['sample'])},{s['algorithm']},{repr(float(s['psnr']))},"
            f"{repr(float(s['ssim']))},{repr(float(s.get('analytic_psnr', math.nan)))}"
        )
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")
