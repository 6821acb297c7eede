"""Convolutional autoencoder, reduced-Hamiltonian MLP and flow MLP.

States enter the autoencoder flat, ``y = (q, p)`` of length 2N, which is the
channel-major layout of the (2, N) bichannel tensor.  Every function accepts
an optional leading batch axis.  Parameters live in plain ``dict``s mapping
layer names to arrays (or to tape-watched tensors during training).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "ArchitectureError",
    "AEArchitecture",
    "MLPArchitecture",
    "hnn_architecture",
    "flow_architecture",
    "NetParams",
    "layer_specs",
    "init_params",
    "param_count",
    "encoder_shapes",
    "decoder_shapes",
    "encode",
    "decode",
    "mlp_forward",
    "mlp_apply",
    "mlp_input_grad",
    "hnn_input_gradient_chain",
    "hnn_value",
    "hnn_input_gradient",
    "flow_field",
    "HNNDynamics",
    "FlowDynamics",
]


class ArchitectureError(ValueError):
    """Inconsistent network architecture."""


@dataclass(frozen=True)
class AEArchitecture:
    input_length: int
    latent_dim: int
    n_blocks: int = 4
    dense_sizes: tuple[int, ...] = (256, 128, 64, 32)
    activation: str = "elu"
    variant: str = "bichannel"

    def __post_init__(self):
        object.__setattr__(self, "dense_sizes", tuple(int(d) for d in self.dense_sizes))
        if self.variant not in ("bichannel", "split"):
            raise ArchitectureError(f"unknown AE variant {self.variant!r}")
        if self.activation not in ad.ACTIVATIONS:
            raise ArchitectureError(f"unknown activation {self.activation!r}")
        if self.input_length % (2**self.n_blocks):
            raise ArchitectureError(
                f"N={self.input_length} is not divisible by 2^{self.n_blocks}"
            )
        if self.latent_dim < 2 or self.latent_dim % 2:
            raise ArchitectureError("latent dimension must be a positive even number 2K")

    @property
    def channels_base(self) -> int:
        return 2 if self.variant == "bichannel" else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dense_sizes"] = list(self.dense_sizes)
        d["type"] = "ae"
        return d


@dataclass(frozen=True)
class MLPArchitecture:
    """Plain MLP on ``concat(latent, mu)``; ``output_dim == 1`` for an HNN."""

    latent_dim: int
    param_dim: int
    hidden_sizes: tuple[int, ...] = (24, 12, 12, 12, 6)
    activation: str = "tanh"
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.activation not in ad.ACTIVATIONS:
            raise ArchitectureError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.latent_dim + self.param_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["type"] = "mlp"
        return d


def hnn_architecture(latent_dim, param_dim, hidden_sizes=(24, 12, 12, 12, 6), activation="tanh"):
    return MLPArchitecture(latent_dim, param_dim, tuple(hidden_sizes), activation, 1)


def flow_architecture(latent_dim, param_dim, hidden_sizes=(32, 24, 16, 16), activation="tanh"):
    return MLPArchitecture(latent_dim, param_dim, tuple(hidden_sizes), activation, latent_dim)


def architecture_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind == "ae":
        return AEArchitecture(**d)
    if kind == "mlp":
        return MLPArchitecture(**d)
    raise ArchitectureError(f"unknown architecture type {kind!r}")


@dataclass
class NetParams:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def merged(self, other: "NetParams") -> "NetParams":
        return NetParams({**self.arrays, **other.arrays}, self.seed)

    def copy(self) -> "NetParams":
        return NetParams({k: v.copy() for k, v in self.arrays.items()}, self.seed)

    @property
    def size(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))


# ---------------------------------------------------------------- layer tables


def _ae_single(prefix, c0, arch: AEArchitecture, latent):
    """(name, shape, fan_in, fan_out) for one encoder/decoder pair on c0 input channels."""
    specs = []
    c, length = c0, arch.input_length
    for b in range(arch.n_blocks):
        specs.append((f"{prefix}enc.conv{b}.w", (c, c, 3), 3 * c, 3 * c))
        specs.append((f"{prefix}enc.conv{b}.b", (c, 1), 0, 0))
        specs.append((f"{prefix}enc.down{b}.w", (2 * c, c, 2), 2 * c, 4 * c))
        specs.append((f"{prefix}enc.down{b}.b", (2 * c, 1), 0, 0))
        c, length = 2 * c, length // 2
    specs.append((f"{prefix}enc.conv_out.w", (c, c, 3), 3 * c, 3 * c))
    specs.append((f"{prefix}enc.conv_out.b", (c, 1), 0, 0))
    flat = c * length
    sizes = [flat, *arch.dense_sizes, latent]
    for i in range(len(sizes) - 1):
        specs.append((f"{prefix}enc.dense{i}.w", (sizes[i], sizes[i + 1]), sizes[i], sizes[i + 1]))
        specs.append((f"{prefix}enc.dense{i}.b", (sizes[i + 1],), 0, 0))
    rsizes = sizes[::-1]
    for i in range(len(rsizes) - 1):
        specs.append((f"{prefix}dec.dense{i}.w", (rsizes[i], rsizes[i + 1]), rsizes[i], rsizes[i + 1]))
        specs.append((f"{prefix}dec.dense{i}.b", (rsizes[i + 1],), 0, 0))
    for b in range(arch.n_blocks):
        specs.append((f"{prefix}dec.up{b}.w", (c // 2, c, 2), 2 * c, c))
        specs.append((f"{prefix}dec.up{b}.b", (c // 2, 1), 0, 0))
        c //= 2
        specs.append((f"{prefix}dec.conv{b}.w", (c, c, 3), 3 * c, 3 * c))
        specs.append((f"{prefix}dec.conv{b}.b", (c, 1), 0, 0))
    return specs


def _mlp_specs(prefix, arch: MLPArchitecture):
    sizes = [arch.input_dim, *arch.hidden_sizes, arch.output_dim]
    specs = []
    for i in range(len(sizes) - 1):
        specs.append((f"{prefix}dense{i}.w", (sizes[i], sizes[i + 1]), sizes[i], sizes[i + 1]))
        specs.append((f"{prefix}dense{i}.b", (sizes[i + 1],), 0, 0))
    return specs


def layer_specs(arch, prefix: str = ""):
    if isinstance(arch, AEArchitecture):
        if arch.variant == "bichannel":
            return _ae_single(prefix, 2, arch, arch.latent_dim)
        half = arch.latent_dim // 2
        return _ae_single(prefix + "q.", 1, arch, half) + _ae_single(prefix + "p.", 1, arch, half)
    return _mlp_specs(prefix, arch)


def init_params(arch, seed: int, prefix: str = "") -> NetParams:
    """Glorot-uniform weights and zero biases, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape, fan_in, fan_out in layer_specs(arch, prefix):
        if fan_in == 0:
            arrays[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    return NetParams(arrays, seed)


def param_count(arch) -> int:
    return int(sum(np.prod(s) for _, s, _, _ in layer_specs(arch)))


def encoder_shapes(arch: AEArchitecture) -> list[tuple[int, int]]:
    """(rows, channels) after the input and each encoder block, then the flat size."""
    c, length = arch.channels_base, arch.input_length
    shapes = [(length, c)]
    for _ in range(arch.n_blocks):
        c, length = 2 * c, length // 2
        shapes.append((length, c))
    return shapes + [(c * length,), *[(d,) for d in arch.dense_sizes], (arch.latent_dim,)]


def decoder_shapes(arch: AEArchitecture):
    return encoder_shapes(arch)[::-1]


# ---------------------------------------------------------------- autoencoder


def _dense(h, params, name, act):
    return ad.activation(ad.add(ad.matmul(h, params[name + ".w"]), params[name + ".b"]), act)


def _encode_single(x, params, prefix, arch: AEArchitecture, c0):
    batch = x.shape[0]
    h = ad.reshape(x, (batch, c0, arch.input_length))
    act = arch.activation
    for b in range(arch.n_blocks):
        h = ad.activation(
            ad.add(ad.conv1d_periodic(h, params[f"{prefix}enc.conv{b}.w"]), params[f"{prefix}enc.conv{b}.b"]),
            act,
        )
        h = ad.add(
            ad.conv1d_periodic(h, params[f"{prefix}enc.down{b}.w"], stride=2),
            params[f"{prefix}enc.down{b}.b"],
        )
    h = ad.activation(
        ad.add(ad.conv1d_periodic(h, params[f"{prefix}enc.conv_out.w"]), params[f"{prefix}enc.conv_out.b"]),
        act,
    )
    h = ad.reshape(h, (batch, -1))
    n_dense = len(arch.dense_sizes)
    for i in range(n_dense):
        h = _dense(h, params, f"{prefix}enc.dense{i}", act)
    return _dense(h, params, f"{prefix}enc.dense{n_dense}", "none")


def _decode_single(z, params, prefix, arch: AEArchitecture, c0):
    batch = z.shape[0]
    act = arch.activation
    n_dense = len(arch.dense_sizes)
    h = z
    for i in range(n_dense + 1):
        h = _dense(h, params, f"{prefix}dec.dense{i}", act)
    c = c0 * 2**arch.n_blocks
    h = ad.reshape(h, (batch, c, arch.input_length // 2**arch.n_blocks))
    for b in range(arch.n_blocks):
        h = ad.add(ad.upsample2_smooth(h, params[f"{prefix}dec.up{b}.w"]), params[f"{prefix}dec.up{b}.b"])
        h = ad.add(ad.conv1d_periodic(h, params[f"{prefix}dec.conv{b}.w"]), params[f"{prefix}dec.conv{b}.b"])
        if b < arch.n_blocks - 1:
            h = ad.activation(h, act)
    return ad.reshape(h, (batch, c0 * arch.input_length))


def _batched(x):
    squeeze = ad._data(x).ndim == 1
    if squeeze:
        x = ad.reshape(x, (1, -1))
    return x, squeeze


def _unbatch(y, squeeze):
    return ad.reshape(y, (y.shape[-1],)) if squeeze else y


def encode(y, params, arch: AEArchitecture) -> Tensor:
    """Flat states ``(..., 2N)`` -> latent ``(..., 2K)``."""
    y, squeeze = _batched(y)
    if y.shape[-1] != 2 * arch.input_length:
        raise ArchitectureError(f"expected states of length {2 * arch.input_length}, got {y.shape[-1]}")
    if arch.variant == "bichannel":
        z = _encode_single(y, params, "", arch, 2)
    else:
        n = arch.input_length
        zq = _encode_single(y[:, :n], params, "q.", arch, 1)
        zp = _encode_single(y[:, n:], params, "p.", arch, 1)
        z = ad.concat([zq, zp], axis=-1)
    return _unbatch(z, squeeze)


def decode(z, params, arch: AEArchitecture) -> Tensor:
    """Latent ``(..., 2K)`` -> flat states ``(..., 2N)``."""
    z, squeeze = _batched(z)
    if z.shape[-1] != arch.latent_dim:
        raise ArchitectureError(f"expected latent of length {arch.latent_dim}, got {z.shape[-1]}")
    if arch.variant == "bichannel":
        y = _decode_single(z, params, "", arch, 2)
    else:
        k = arch.latent_dim // 2
        yq = _decode_single(z[:, :k], params, "q.", arch, 1)
        yp = _decode_single(z[:, k:], params, "p.", arch, 1)
        y = ad.concat([yq, yp], axis=-1)
    return _unbatch(y, squeeze)


# ---------------------------------------------------------------- MLPs


def _mlp_input(z, mu):
    zd, md = ad._data(z), np.asarray(ad._data(mu))
    if md.ndim < zd.ndim:
        md = np.broadcast_to(md, zd.shape[:-1] + md.shape[-1:])
        mu = md
    return ad.concat([z, mu], axis=-1)


def _layers(params, arch: MLPArchitecture, prefix: str):
    n = len(arch.hidden_sizes) + 1
    return [params[f"{prefix}dense{i}.w"] for i in range(n)], [params[f"{prefix}dense{i}.b"] for i in range(n)]


def _forward_cache(x, ws, bs, act):
    hs, pre = [x], []
    for w, b in zip(ws[:-1], bs[:-1]):
        a = hs[-1] @ w + b
        pre.append(a)
        hs.append(ad._act(a, act))
    return hs, pre


def _pack(gx, gws, gbs):
    return (gx, *gws, *gbs)


def mlp_apply(x, ws, bs, act: str) -> Tensor:
    """Fused MLP forward on a 2-D batch ``x``; one tape node for the whole network."""
    xv = ad._data(x)
    wv = [ad._data(w) for w in ws]
    bv = [ad._data(b) for b in bs]
    hs, pre = _forward_cache(xv, wv, bv, act)
    out = hs[-1] @ wv[-1] + bv[-1]

    def vjp(g):
        n = len(wv)
        gws, gbs = [None] * n, [None] * n
        gh = g
        for i in range(n - 1, -1, -1):
            gws[i] = hs[i].T @ gh
            gbs[i] = gh.sum(axis=0)
            gh = gh @ wv[i].T
            if i > 0:
                gh = gh * ad._act_d1(pre[i - 1], act)
        return _pack(gh, gws, gbs)

    return ad._emit(out, (x, *ws, *bs), vjp)


def mlp_input_grad(x, ws, bs, act: str) -> Tensor:
    """Fused gradient of a scalar-output MLP with respect to its input ``x``.

    Forward: ``delta_{L-1} = W_L^T``, ``delta_i = (delta_{i+1} * act'(a_i)) W_i^T``.
    The recorded VJP differentiates that chain once more, by hand, so the
    parameter gradient needs a single reverse sweep.
    """
    xv = ad._data(x)
    wv = [ad._data(w) for w in ws]
    bv = [ad._data(b) for b in bs]
    if wv[-1].shape[1] != 1:
        raise ArchitectureError("input gradient needs a scalar-output network")
    hs, pre = _forward_cache(xv, wv, bv, act)
    s1 = [ad._act_d1(a, act) for a in pre]
    n_hidden = len(pre)
    delta = [None] * (n_hidden + 1)
    es = [None] * n_hidden
    delta[n_hidden] = np.broadcast_to(wv[-1][:, 0], (xv.shape[0], wv[-1].shape[0]))
    for i in range(n_hidden - 1, -1, -1):
        es[i] = delta[i + 1] * s1[i]
        delta[i] = es[i] @ wv[i].T

    def vjp(g):
        gws = [np.zeros_like(w) for w in wv]
        gbs = [np.zeros_like(b) for b in bv]
        ga = [None] * n_hidden
        gd = g
        for i in range(n_hidden):
            ge = gd @ wv[i]
            gws[i] += gd.T @ es[i]
            gd = ge * s1[i]
            ga[i] = ge * delta[i + 1] * ad._act_d2(pre[i], act)
        gws[-1] += gd.sum(axis=0)[:, None]
        gh = None
        for i in range(n_hidden - 1, -1, -1):
            gp = ga[i] if gh is None else ga[i] + gh * s1[i]
            gws[i] += hs[i].T @ gp
            gbs[i] += gp.sum(axis=0)
            gh = gp @ wv[i].T
        return _pack(gh, gws, gbs)

    return ad._emit(delta[0], (x, *ws, *bs), vjp)


def mlp_forward(x, params, arch: MLPArchitecture, prefix: str = "", keep=False):
    """Layer-by-layer forward; with ``keep`` also returns the hidden pre-activations."""
    pre = []
    h = x
    n_hidden = len(arch.hidden_sizes)
    for i in range(n_hidden):
        a = ad.add(ad.matmul(h, params[f"{prefix}dense{i}.w"]), params[f"{prefix}dense{i}.b"])
        pre.append(a)
        h = ad.activation(a, arch.activation)
    out = ad.add(ad.matmul(h, params[f"{prefix}dense{n_hidden}.w"]), params[f"{prefix}dense{n_hidden}.b"])
    return (out, pre) if keep else out


def _as_2d(x):
    xd = ad._data(x)
    if xd.ndim == 1:
        return ad.reshape(x, (1, -1)), True
    return x, False


def hnn_value(z, mu, params, arch: MLPArchitecture, prefix: str = "hnn.") -> Tensor:
    """Reduced Hamiltonian; shape ``(B,)``, or a scalar for a single latent."""
    z, squeeze = _as_2d(z)
    ws, bs = _layers(params, arch, prefix)
    out = mlp_apply(_mlp_input(z, mu), ws, bs, arch.activation)
    out = ad.reshape(out, (out.shape[0],))
    return ad.reshape(out, ()) if squeeze else out


def hnn_input_gradient(z, mu, params, arch: MLPArchitecture, prefix: str = "hnn.") -> Tensor:
    """Gradient of :func:`hnn_value` with respect to the latent coordinates."""
    z, squeeze = _as_2d(z)
    ws, bs = _layers(params, arch, prefix)
    g = mlp_input_grad(_mlp_input(z, mu), ws, bs, arch.activation)[:, : arch.latent_dim]
    return ad.reshape(g, (arch.latent_dim,)) if squeeze else g


def hnn_input_gradient_chain(z, mu, params, arch: MLPArchitecture, prefix: str = "hnn.") -> Tensor:
    """Same as :func:`hnn_input_gradient`, built from elementary tape operations.

    Slower; kept as an independent reference for the fused version.
    """
    z, squeeze = _as_2d(z)
    _, pre = mlp_forward(_mlp_input(z, mu), params, arch, prefix, keep=True)
    n_hidden = len(arch.hidden_sizes)
    w_last = params[f"{prefix}dense{n_hidden}.w"]
    g = ad.matmul(np.ones((z.shape[0], 1)), ad.transpose(w_last))
    for i in range(n_hidden - 1, -1, -1):
        g = ad.mul(g, ad.activation_grad(pre[i], arch.activation))
        g = ad.matmul(g, ad.transpose(params[f"{prefix}dense{i}.w"]))
    g = g[:, : arch.latent_dim]
    return ad.reshape(g, (arch.latent_dim,)) if squeeze else g


def flow_field(z, mu, params, arch: MLPArchitecture, prefix: str = "flow.") -> Tensor:
    z, squeeze = _as_2d(z)
    ws, bs = _layers(params, arch, prefix)
    out = mlp_apply(_mlp_input(z, mu), ws, bs, arch.activation)
    return ad.reshape(out, (arch.output_dim,)) if squeeze else out


class HNNDynamics:
    """Latent Hamiltonian model for the implicit Störmer-Verlet scheme.

    Works on tensors (recorded on an active tape) and on plain arrays.
    """

    separable = False

    def __init__(self, params, arch: MLPArchitecture, mu, prefix: str = "hnn."):
        self.params, self.arch, self.mu, self.prefix = params, arch, mu, prefix
        self.k = arch.latent_dim // 2

    def grad(self, q, p):
        if isinstance(q, Tensor) or isinstance(p, Tensor):
            g = hnn_input_gradient(ad.concat([q, p], axis=-1), self.mu, self.params, self.arch, self.prefix)
            return g[..., : self.k], g[..., self.k :]
        z = np.concatenate([q, p], axis=-1)
        g = hnn_input_gradient(z, self.mu, self.params, self.arch, self.prefix).data
        return g[..., : self.k], g[..., self.k :]

    def hamiltonian(self, z):
        return ad._data(hnn_value(z, self.mu, self.params, self.arch, self.prefix))


class FlowDynamics:
    """Latent vector field for the RK2 scheme."""

    def __init__(self, params, arch: MLPArchitecture, mu, prefix: str = "flow."):
        self.params, self.arch, self.mu, self.prefix = params, arch, mu, prefix

    def __call__(self, z):
        out = flow_field(z, self.mu, self.params, self.arch, self.prefix)
        return out if isinstance(z, Tensor) else out.data
