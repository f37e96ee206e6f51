"""Coordinate MLPs with hand-written reverse mode, the SDF/appearance wrappers and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Encoding:
    """Blockwise sinusoidal encoding; a block with 0 bands passes through unchanged.

    A block x with L bands maps to [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)].
    """

    block_dims: tuple[int, ...]
    bands: tuple[int, ...]

    @property
    def in_dim(self) -> int:
        return sum(self.block_dims)

    @property
    def out_dim(self) -> int:
        return sum(d * (1 + 2 * b) for d, b in zip(self.block_dims, self.bands))

    def _blocks(self, x):
        start = 0
        for d, b in zip(self.block_dims, self.bands):
            yield x[:, start:start + d], b
            start += d

    def encode(self, x: np.ndarray, dtype=np.float64) -> np.ndarray:
        """Encoded rows; angles are always evaluated in float64 before casting to `dtype`."""
        n = len(x)
        out = np.empty((n, self.out_dim), dtype=dtype)
        pos = 0
        for xb, b in self._blocks(x):
            d = xb.shape[1]
            out[:, pos:pos + d] = xb
            pos += d
            if b:
                ang = xb[:, None, :] * (np.pi * 2.0 ** np.arange(b))[None, :, None]
                view = out[:, pos:pos + 2 * b * d].reshape(n, b, 2, d)
                np.sin(ang, out=view[:, :, 0, :])
                np.cos(ang, out=view[:, :, 1, :])
                pos += 2 * b * d
        return out

    def backward(self, x: np.ndarray, g_enc: np.ndarray) -> np.ndarray:
        n = len(x)
        g_enc = np.asarray(g_enc, np.float64)
        g_parts = []
        pos = 0
        for xb, b in self._blocks(x):
            d = xb.shape[1]
            g = g_enc[:, pos:pos + d].copy()
            pos += d
            if b:
                f = (np.pi * 2.0 ** np.arange(b))[None, :, None]
                ang = xb[:, None, :] * f
                view = g_enc[:, pos:pos + 2 * b * d].reshape(n, b, 2, d)
                g += np.sum(f * (view[:, :, 0, :] * np.cos(ang) - view[:, :, 1, :] * np.sin(ang)), axis=1)
                pos += 2 * b * d
            g_parts.append(g)
        return np.concatenate(g_parts, axis=1)


@dataclass
class ForwardCache:
    x: np.ndarray
    inputs: list  # input to each affine layer
    acts: list  # post-ReLU output of each hidden layer


@dataclass
class FieldNetwork:
    """ReLU MLP over an encoded input; identity output; optional input skip at one layer.

    `dims` lists the affine layer outputs, e.g. [256]*7 + [257] for an 8-layer net.
    At the skip layer the encoded input is concatenated to the hidden state and
    the result scaled by 1/sqrt(2). Parameters are always float64; `dtype`
    selects the arithmetic used by forward/backward.
    """

    encoding: Encoding
    dims: tuple[int, ...]
    skip_layer: int | None = None
    params: np.ndarray = field(default=None, repr=False)
    dtype: type = np.float64

    def __post_init__(self):
        self.dims = tuple(self.dims)
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {self.params.shape}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        shapes = []
        prev = self.encoding.out_dim
        for l, out in enumerate(self.dims):
            fan_in = prev + (self.encoding.out_dim if l == self.skip_layer else 0)
            shapes.append((fan_in, out))
            prev = out
        return shapes

    @property
    def n_params(self) -> int:
        return sum((i + 1) * o for i, o in self.layer_shapes)

    def layers(self, params: np.ndarray | None = None):
        """(W, b) views into the flat parameter vector; W has shape (fan_in, fan_out)."""
        p = self.params if params is None else params
        out = []
        pos = 0
        for i, o in self.layer_shapes:
            W = p[pos:pos + i * o].reshape(i, o)
            pos += i * o
            b = p[pos:pos + o]
            pos += o
            out.append((W, b))
        return out

    def copy(self) -> FieldNetwork:
        return FieldNetwork(self.encoding, self.dims, self.skip_layer, self.params.copy(), self.dtype)

    def forward(self, x: np.ndarray, keep_cache: bool = True):
        x = np.asarray(x, dtype=np.float64)
        enc = self.encoding.encode(x, self.dtype)
        layers = self.layers(self.params.astype(self.dtype, copy=False))
        last = len(layers) - 1
        h = enc
        inputs, acts = [], []
        for l, (W, b) in enumerate(layers):
            if l == self.skip_layer:
                h = np.concatenate([h, enc], axis=1)
                h *= 1.0 / SQRT2
            if keep_cache:
                inputs.append(h)
            z = h @ W
            z += b
            if l != last:
                np.maximum(z, 0.0, out=z)
                if keep_cache:
                    acts.append(z)
            h = z
        return (h, ForwardCache(x, inputs, acts)) if keep_cache else h

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, keep_cache=False)

    def backward(self, cache: ForwardCache, g_out: np.ndarray, need_input_grad: bool = False):
        """Parameter gradient (flat) and, optionally, the gradient w.r.t. the raw input."""
        layers = self.layers(self.params.astype(self.dtype, copy=False))
        grads = np.zeros_like(self.params)
        glayers = self.layers(grads)
        last = len(layers) - 1
        g = np.array(g_out, dtype=self.dtype)
        g_enc = None
        for l in range(last, -1, -1):
            W, _ = layers[l]
            gW, gb = glayers[l]
            if l != last:
                g *= cache.acts[l] > 0
            gW += cache.inputs[l].T @ g
            gb += g.sum(axis=0)
            if l == 0 and not need_input_grad:
                break
            g_in = g @ W.T
            if l == self.skip_layer:
                g_in *= 1.0 / SQRT2
                width = W.shape[0] - self.encoding.out_dim
                g_enc = g_in[:, width:] if g_enc is None else g_enc + g_in[:, width:]
                g_in = g_in[:, :width]
            if l == 0:
                g_enc = g_in if g_enc is None else g_enc + g_in
            g = g_in
        if not need_input_grad:
            return grads, None
        return grads, self.encoding.backward(cache.x, g_enc.astype(np.float64))


def make_sdf_network(width: int = 256, layers: int = 8, feature_dim: int | None = None, bands: int = 6,
                     skip_layer: int | None = 4) -> FieldNetwork:
    feature_dim = width if feature_dim is None else feature_dim
    dims = [width] * (layers - 1) + [1 + feature_dim]
    return FieldNetwork(Encoding((3,), (bands,)), dims, skip_layer)


def make_appearance_network(width: int = 256, layers: int = 4, feature_dim: int = 256, pos_bands: int = 6,
                            dir_bands: int = 4) -> FieldNetwork:
    enc = Encoding((3, 3, 3, feature_dim), (pos_bands, dir_bands, 0, 0))
    return FieldNetwork(enc, [width] * (layers - 1) + [3])


def sphere_init(net: FieldNetwork, radius: float = 0.5, seed: int = 0, refit_steps: int = 600,
                refit_batch: int = 1024, refit_lr: float = 1e-3) -> None:
    """Initialize the distance head to approximate |x| - radius.

    Starts from the analytic geometric scheme: only the raw xyz part of the
    encoding gets non-zero first-layer (and skip) weights, hidden weights are
    N(0, 2/fan_out), the distance head has mean sqrt(pi/fan_in) and bias
    -radius. Narrow networks only reach that shape loosely, so a short
    deterministic Adam fit of the values on [-1.1, 1.1]^3 follows
    (`refit_steps=0` disables it).
    """
    rng = np.random.default_rng(seed)
    layers = net.layers()
    last = len(layers) - 1
    enc_dim = net.encoding.out_dim
    for l, (W, b) in enumerate(layers):
        fan_in, fan_out = W.shape
        b[:] = 0.0
        if l == last:
            W[:, 0] = rng.normal(np.sqrt(np.pi) / np.sqrt(fan_in), 1e-4, fan_in)
            W[:, 1:] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out - 1))
            b[0] = -radius
            continue
        W[:] = rng.normal(0.0, np.sqrt(2.0) / np.sqrt(fan_out), (fan_in, fan_out))
        if l == 0:
            W[3:, :] = 0.0
        elif l == net.skip_layer:
            W[fan_in - enc_dim + 3:, :] = 0.0

    state = AdamState.zeros_like(net.params)
    for it in range(refit_steps):
        x = rng.uniform(-1.1, 1.1, (refit_batch, 3))
        out, cache = net.forward(x)
        g = np.zeros_like(out)
        g[:, 0] = 2.0 * (out[:, 0] - (np.linalg.norm(x, axis=1) - radius)) / refit_batch
        grads, _ = net.backward(cache, g)
        lr = refit_lr * 0.5 * (1.0 + np.cos(np.pi * it / refit_steps))
        net.params, state = adam_step(net.params, grads, state, lr)


def init_uniform(net: FieldNetwork, seed: int = 0, scale: float = 1.0) -> None:
    """He-style random init with zero biases (used for the appearance network)."""
    rng = np.random.default_rng(seed)
    for W, b in net.layers():
        W[:] = rng.normal(0.0, scale * np.sqrt(2.0 / W.shape[0]), W.shape)
        b[:] = 0.0


# ---------------------------------------------------------------- SDF evaluation

_OFFSETS = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)


@dataclass
class SdfSample:
    value: np.ndarray  # (N,)
    gradient: np.ndarray  # (N, 3), central differences, unnormalized
    feature: np.ndarray  # (N, F)


class SdfEvaluation:
    """SDF values, features and finite-difference gradients for a batch, with their backward pass.

    The gradient is the central-difference surrogate (f(x + h e_i) - f(x - h e_i)) / 2h,
    and `backward` differentiates exactly that surrogate.
    """

    def __init__(self, net: FieldNetwork, points: np.ndarray, h: float = 1e-4, with_gradient: bool = True):
        self.net = net
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.h = h
        self.with_gradient = with_gradient
        n = len(self.points)
        offs = _OFFSETS if with_gradient else _OFFSETS[:1]
        stacked = (self.points[None, :, :] + h * offs[:, None, :]).reshape(-1, 3)
        out, self.cache = net.forward(stacked)
        out = out.reshape(len(offs), n, -1)
        self.value = out[0, :, 0].copy()
        self.feature = out[0, :, 1:].copy()
        if with_gradient:
            self.gradient = np.stack([(out[1 + 2 * i, :, 0] - out[2 + 2 * i, :, 0]) / (2 * h) for i in range(3)], 1)
        else:
            self.gradient = np.full((n, 3), np.nan)
        self._n_blocks = len(offs)
        self._out_dim = out.shape[2]

    @property
    def sample(self) -> SdfSample:
        return SdfSample(self.value, self.gradient, self.feature)

    def backward(self, g_value=None, g_gradient=None, g_feature=None, need_point_grad: bool = False):
        n = len(self.points)
        g_out = np.zeros((self._n_blocks, n, self._out_dim))
        if g_value is not None:
            g_out[0, :, 0] = g_value
        if g_feature is not None:
            g_out[0, :, 1:] = g_feature
        if g_gradient is not None:
            if not self.with_gradient:
                raise ValueError("evaluation was made without gradients")
            for i in range(3):
                g_out[1 + 2 * i, :, 0] = g_gradient[:, i] / (2 * self.h)
                g_out[2 + 2 * i, :, 0] = -g_gradient[:, i] / (2 * self.h)
        grads, g_x = self.net.backward(self.cache, g_out.reshape(-1, self._out_dim), need_point_grad)
        if need_point_grad:
            g_x = g_x.reshape(self._n_blocks, n, 3).sum(axis=0)
        return grads, g_x


def sdf_eval(net: FieldNetwork, points: np.ndarray, h: float = 1e-4) -> SdfSample:
    return SdfEvaluation(net, points, h).sample


def sdf_values(net: FieldNetwork, points: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """Distance head only, chunked, no cache retained."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        out[s:s + chunk] = net(points[s:s + chunk])[:, 0]
    return out


# ---------------------------------------------------------------- appearance

class AppearanceEvaluation:
    def __init__(self, net: FieldNetwork, points, view_dirs, normals, features):
        self.net = net
        self.inputs = np.concatenate([np.asarray(points, float).reshape(-1, 3), np.asarray(view_dirs, float).reshape(-1, 3),
                                      np.asarray(normals, float).reshape(-1, 3),
                                      np.asarray(features, float).reshape(len(np.atleast_2d(points)), -1)], axis=1)
        self.color, self.cache = net.forward(self.inputs)

    def backward(self, g_color: np.ndarray):
        """Parameter gradient and input gradients split as (point, view_dir, normal, feature)."""
        grads, g_in = self.net.backward(self.cache, g_color, need_input_grad=True)
        return grads, g_in[:, 0:3], g_in[:, 3:6], g_in[:, 6:9], g_in[:, 9:]


def appearance_eval(net: FieldNetwork, point, view_dir, normal, feature) -> np.ndarray:
    """Color for each row of inputs; no output activation."""
    return AppearanceEvaluation(net, point, view_dir, normal, feature).color


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, x: np.ndarray) -> AdamState:
        return cls(np.zeros_like(x, dtype=np.float64), np.zeros_like(x, dtype=np.float64), 0)

    def select(self, index) -> AdamState:
        return AdamState(self.m[index], self.v[index], self.t)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads * grads
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)
