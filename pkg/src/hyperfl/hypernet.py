"""Client hypernetwork: embedding -> feature-extractor parameters.

The map ``h(v; phi_h)`` is a one-hidden-layer ReLU net with one linear head
per target tensor.  Given an embedding ``v`` of dimension ``d``:

    hidden = relu(v @ W_t.T + b_t)              # trunk, d -> hidden_dim
    theta[name] = (hidden @ W_name.T + b_name)  # head, reshaped to the
                                                # target tensor's shape

Backward rules into both ``phi_h`` and ``v`` are exact vector-Jacobian
products computed through the autodiff engine, so a task loss can be trained
end to end while only ``phi_h`` ever leaves the client.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DimensionError
from .network import NetSpec, ParamSet

TargetSpec = tuple[tuple[str, tuple[int, ...]], ...]


def target_from_netspec(spec: NetSpec) -> TargetSpec:
    """TargetSpec mirroring a feature extractor's parameter tensors."""
    return tuple((name, shape) for name, shape in spec.param_shapes().items())


@dataclass(frozen=True)
class HypernetSpec:
    """Architecture of the weight generator.

    ``hidden_bias`` toggles the trunk bias (kept on by default).  Head
    widths are implied by the target shapes: one row per generated value.
    """

    target: TargetSpec
    embedding_dim: int = 64
    hidden_dim: int = 100
    hidden_bias: bool = True

    def __post_init__(self):
        if self.embedding_dim <= 0 or self.hidden_dim <= 0:
            raise DimensionError("embedding_dim and hidden_dim must be positive")
        if not self.target:
            raise DimensionError("hypernetwork needs at least one target tensor")
        names = [name for name, _ in self.target]
        if len(set(names)) != len(names):
            raise DimensionError(f"duplicate target names in {names}")
        for name, shape in self.target:
            if not shape or any(d <= 0 for d in shape):
                raise DimensionError(f"target {name!r} has invalid shape {shape}")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {"hyper/trunk/W": (self.hidden_dim, self.embedding_dim)}
        if self.hidden_bias:
            shapes["hyper/trunk/b"] = (self.hidden_dim,)
        for name, shape in self.target:
            size = int(np.prod(shape))
            shapes[f"hyper/head/{name}/W"] = (size, self.hidden_dim)
            shapes[f"hyper/head/{name}/b"] = (size,)
        return shapes


def _check_phi(phi_h, spec: HypernetSpec) -> None:
    shapes = spec.param_shapes()
    if set(phi_h.keys()) != set(shapes.keys()):
        raise DimensionError(
            f"hypernet parameter names {sorted(phi_h)} do not match spec {sorted(shapes)}"
        )
    for name, shape in shapes.items():
        got = np.asarray(getattr(phi_h[name], "data", phi_h[name])).shape
        if got != shape:
            raise DimensionError(f"{name}: expected shape {shape}, got {got}")


def _target_fan_in(shape: tuple[int, ...]) -> int:
    # Weight matrices report their input width; 1-d tensors fall back to
    # their own length so the scale stays a pure function of the shape.
    return shape[-1] if len(shape) >= 2 else shape[0]


def hypernet_forward_sym(v, phi_h, spec: HypernetSpec) -> dict[str, ad.Var]:
    """Traced forward pass; accepts Vars or arrays for ``v`` and ``phi_h``."""
    _check_phi(phi_h, spec)
    vv = ad.as_var(v)
    if vv.shape != (spec.embedding_dim,):
        raise DimensionError(f"embedding must have shape ({spec.embedding_dim},), got {vv.shape}")

    row = ad.reshape(vv, (1, spec.embedding_dim))
    hidden = ad.matmul(row, ad.transpose(ad.as_var(phi_h["hyper/trunk/W"])))
    if spec.hidden_bias:
        hidden = ad.add(hidden, ad.reshape(ad.as_var(phi_h["hyper/trunk/b"]), (1, spec.hidden_dim)))
    hidden = ad.relu(hidden)

    theta: dict[str, ad.Var] = {}
    for name, shape in spec.target:
        w = ad.as_var(phi_h[f"hyper/head/{name}/W"])
        b = ad.as_var(phi_h[f"hyper/head/{name}/b"])
        flat = ad.add(ad.matmul(hidden, ad.transpose(w)), ad.reshape(b, (1, b.shape[0])))
        theta[name] = ad.reshape(flat, shape)
    return theta


def hypernet_forward(v: np.ndarray, phi_h: ParamSet, spec: HypernetSpec) -> ParamSet:
    theta = hypernet_forward_sym(v, phi_h, spec)
    return {name: var.data.copy() for name, var in theta.items()}


def hypernet_backward(
    d_theta: ParamSet, v: np.ndarray, phi_h: ParamSet, spec: HypernetSpec
) -> tuple[ParamSet, np.ndarray]:
    """Pull a cotangent on θ back to (φ_h, v): exact VJPs through the forward map."""
    target_names = {name for name, _ in spec.target}
    if set(d_theta.keys()) != target_names:
        raise DimensionError(
            f"cotangent names {sorted(d_theta)} do not match target names {sorted(target_names)}"
        )
    v_leaf = ad.Var(np.asarray(v, dtype=np.float64))
    phi_leaves = {name: ad.Var(np.asarray(val, dtype=np.float64)) for name, val in phi_h.items()}
    theta = hypernet_forward_sym(v_leaf, phi_leaves, spec)

    # <d_theta, theta> has gradient J^T d_theta by construction.
    total = ad.constant(0.0)
    for name, shape in spec.target:
        cot = np.asarray(d_theta[name], dtype=np.float64)
        if cot.shape != shape:
            raise DimensionError(f"cotangent {name}: expected shape {shape}, got {cot.shape}")
        total = ad.add(total, ad.dot(theta[name], ad.constant(cot)))

    names = sorted(phi_leaves)
    grads = ad.grad(total, [phi_leaves[n] for n in names] + [v_leaf])
    d_phi = {n: g.data.copy() for n, g in zip(names, grads[:-1])}
    return d_phi, grads[-1].data.copy()


def init_hypernet(spec: HypernetSpec, seed: int) -> tuple[ParamSet, np.ndarray]:
    """Seeded (phi_h, v) pair.

    The trunk follows the usual ±1/sqrt(fan_in) dense init.  Each head is
    shrunk by an extra 1/sqrt(fan_in(target)) so the generated tensors start
    at magnitudes comparable to a directly initialized network; without the
    extra factor the generated weights start an order of magnitude too large
    and early training stalls.

    The embedding is one Gaussian draw from its own substream.  Callers that
    simulate many clients hand every client this same initial ``v``.
    """
    ss = np.random.SeedSequence(entropy=(seed, 0x48594E45))  # module-local tag
    phi_stream, v_stream = [np.random.default_rng(s) for s in ss.spawn(2)]

    phi_h: ParamSet = {}
    trunk_bound = 1.0 / math.sqrt(spec.embedding_dim)
    phi_h["hyper/trunk/W"] = phi_stream.uniform(
        -trunk_bound, trunk_bound, size=(spec.hidden_dim, spec.embedding_dim)
    )
    if spec.hidden_bias:
        phi_h["hyper/trunk/b"] = phi_stream.uniform(-trunk_bound, trunk_bound, size=spec.hidden_dim)
    for name, shape in spec.target:
        size = int(np.prod(shape))
        bound = 1.0 / (math.sqrt(spec.hidden_dim) * math.sqrt(_target_fan_in(shape)))
        phi_h[f"hyper/head/{name}/W"] = phi_stream.uniform(
            -bound, bound, size=(size, spec.hidden_dim)
        )
        phi_h[f"hyper/head/{name}/b"] = phi_stream.uniform(-bound, bound, size=size)

    v = v_stream.standard_normal(spec.embedding_dim)
    return phi_h, v
