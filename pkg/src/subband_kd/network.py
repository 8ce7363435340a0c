"""Sub-band enhancement network: 2 x bidirectional LSTM -> per-frame affine -> ReLU.

Everything is plain numpy with hand-written backpropagation through time.
Both directions of a layer run in the same time loop with stacked weights
(leading axis 0 = forward direction, 1 = backward direction).

Gate order inside every 4h block is (input, forget, cell candidate, output).
Each gate has two biases (input-side and recurrent-side), which matters only
for the parameter count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DIRECTIONS = ("fw", "bw")
LSTM_PARTS = ("w_ih", "w_hh", "b_ih", "b_hh")


class ShapeError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    pass


def param_names() -> list[str]:
    names = [f"l{layer}.{d}.{p}" for layer in (1, 2) for d in DIRECTIONS for p in LSTM_PARTS]
    return names + ["out.weight", "out.bias"]


def param_shapes(w: int, h: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for layer, d_in in ((1, w), (2, 2 * h)):
        for d in DIRECTIONS:
            shapes[f"l{layer}.{d}.w_ih"] = (4 * h, d_in)
            shapes[f"l{layer}.{d}.w_hh"] = (4 * h, h)
            shapes[f"l{layer}.{d}.b_ih"] = (4 * h,)
            shapes[f"l{layer}.{d}.b_hh"] = (4 * h,)
    shapes["out.weight"] = (w, 2 * h)
    shapes["out.bias"] = (w,)
    return shapes


def param_count(w: int, h: int) -> int:
    """Number of trainable scalars for input width ``w`` and hidden size ``h``."""
    if w < 1 or h < 1:
        raise ValueError("w and h must be positive")
    layer1 = 2 * 4 * (h * (w + h) + 2 * h)
    layer2 = 2 * 4 * (h * (2 * h + h) + 2 * h)
    return layer1 + layer2 + (2 * h * w + w)


@dataclass
class ModelParams:
    w: int
    h: int
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = param_shapes(self.w, self.h)
        if list(self.arrays) != list(shapes):
            self.arrays = {k: self.arrays[k] for k in shapes}
        for name, shape in shapes.items():
            a = np.asarray(self.arrays[name], dtype=np.float64)
            if a.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ShapeError(f"{name} contains non-finite values")
            self.arrays[name] = a

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.w, self.h, {k: v.copy() for k, v in self.arrays.items()})

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def stacked(self, layer: int, part: str) -> np.ndarray:
        return np.stack([self.arrays[f"l{layer}.{d}.{part}"] for d in DIRECTIONS])

    def swap_directions(self) -> "ModelParams":
        arrays = {}
        for name, a in self.arrays.items():
            if ".fw." in name:
                name = name.replace(".fw.", ".bw.")
            elif ".bw." in name:
                name = name.replace(".bw.", ".fw.")
            arrays[name] = a.copy()
        return ModelParams(self.w, self.h, arrays)


def init_params(w: int, h: int, seed: int | np.random.Generator = 0) -> ModelParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(h)
    arrays = {name: rng.uniform(-bound, bound, size=shape)
              for name, shape in param_shapes(w, h).items()}
    return ModelParams(w, h, arrays)


def zeros_like(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays.items()}


def _sigmoid(z):
    # tanh form cannot overflow
    return 0.5 + 0.5 * np.tanh(0.5 * z)


def _bilstm_forward(x, w_ih, w_hh, bias):
    """x: (B, T, d); stacked weights with leading direction axis.

    Returns output (B, T, 2h) and a cache for the backward pass.
    """
    B, T, _ = x.shape
    h = w_hh.shape[2]
    xs = np.stack([x, x[:, ::-1]])                        # (2, B, T, d)
    pre = np.matmul(xs, w_ih.transpose(0, 2, 1)[:, None]) + bias[:, None, None, :]
    gates = np.empty((2, B, T, 4 * h))
    cells = np.empty((2, B, T, h))
    tanh_c = np.empty((2, B, T, h))
    hs = np.empty((2, B, T, h))
    h_prev = np.zeros((2, B, h))
    c_prev = np.zeros((2, B, h))
    w_hh_t = w_hh.transpose(0, 2, 1)
    for t in range(T):
        z = pre[:, :, t] + np.matmul(h_prev, w_hh_t)
        g = np.empty_like(z)
        g[..., :2 * h] = _sigmoid(z[..., :2 * h])
        g[..., 2 * h:3 * h] = np.tanh(z[..., 2 * h:3 * h])
        g[..., 3 * h:] = _sigmoid(z[..., 3 * h:])
        c = g[..., h:2 * h] * c_prev + g[..., :h] * g[..., 2 * h:3 * h]
        tc = np.tanh(c)
        h_prev = g[..., 3 * h:] * tc
        c_prev = c
        gates[:, :, t] = g
        cells[:, :, t] = c
        tanh_c[:, :, t] = tc
        hs[:, :, t] = h_prev
    out = np.concatenate([hs[0], hs[1][:, ::-1]], axis=-1)
    return out, (xs, gates, cells, tanh_c, hs)


def _bilstm_backward(dout, w_ih, w_hh, cache):
    xs, gates, cells, tanh_c, hs = cache
    _, B, T, h = hs.shape
    dhs = np.stack([dout[..., :h], dout[..., h:][:, ::-1]])
    dz_all = np.empty_like(gates)
    dh_next = np.zeros((2, B, h))
    dc_next = np.zeros((2, B, h))
    for t in range(T - 1, -1, -1):
        g = gates[:, :, t]
        i_g, f_g = g[..., :h], g[..., h:2 * h]
        c_g, o_g = g[..., 2 * h:3 * h], g[..., 3 * h:]
        tc = tanh_c[:, :, t]
        c_prev = cells[:, :, t - 1] if t > 0 else np.zeros((2, B, h))
        dh = dhs[:, :, t] + dh_next
        dc = dh * o_g * (1.0 - tc * tc) + dc_next
        dz = dz_all[:, :, t]
        dz[..., :h] = dc * c_g * i_g * (1.0 - i_g)
        dz[..., h:2 * h] = dc * c_prev * f_g * (1.0 - f_g)
        dz[..., 2 * h:3 * h] = dc * i_g * (1.0 - c_g * c_g)
        dz[..., 3 * h:] = dh * tc * o_g * (1.0 - o_g)
        dc_next = dc * f_g
        dh_next = np.matmul(dz, w_hh)
    h_prev = np.zeros_like(hs)
    h_prev[:, :, 1:] = hs[:, :, :-1]
    dz_flat = dz_all.reshape(2, B * T, 4 * h).transpose(0, 2, 1)
    d_w_hh = np.matmul(dz_flat, h_prev.reshape(2, B * T, h))
    d_w_ih = np.matmul(dz_flat, xs.reshape(2, B * T, -1))
    d_bias = dz_flat.sum(axis=2)
    dxs = np.matmul(dz_all, w_ih[:, None])
    dx = dxs[0] + dxs[1][:, ::-1]
    return dx, d_w_ih, d_w_hh, d_bias


def _as_batch(params: ModelParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"input must be T x w or B x T x w, got shape {x.shape}")
    if x.shape[2] != params.w:
        raise ShapeError(f"input width {x.shape[2]} does not match model width {params.w}")
    if x.shape[1] == 0:
        raise ShapeError("input has no frames")
    return x, squeeze


def forward(params: ModelParams, x, return_cache: bool = False):
    """Run the network on ``T x w`` (or ``B x T x w``) magnitudes."""
    xb, squeeze = _as_batch(params, x)
    caches = []
    y = xb
    for layer in (1, 2):
        bias = params.stacked(layer, "b_ih") + params.stacked(layer, "b_hh")
        y, cache = _bilstm_forward(y, params.stacked(layer, "w_ih"),
                                   params.stacked(layer, "w_hh"), bias)
        caches.append((y, cache))
    z = y @ params["out.weight"].T + params["out.bias"]
    out = np.maximum(z, 0.0)
    if squeeze:
        out = out[0]
    if return_cache:
        return out, (xb, caches, z, squeeze)
    return out


def backward(params: ModelParams, x, upstream_grad, cache=None) -> dict[str, np.ndarray]:
    """Gradients of ``sum(upstream_grad * forward(params, x))`` w.r.t. every parameter."""
    if cache is None:
        _, cache = forward(params, x, return_cache=True)
    xb, caches, z, squeeze = cache
    dout = np.asarray(upstream_grad, dtype=np.float64)
    if squeeze:
        dout = dout[None]
    if dout.shape != z.shape:
        raise ShapeError(f"upstream gradient shape {dout.shape} != output shape {z.shape}")
    dz = dout * (z > 0.0)
    y2 = caches[1][0]
    grads = {
        "out.weight": dz.reshape(-1, dz.shape[2]).T @ y2.reshape(-1, y2.shape[2]),
        "out.bias": dz.sum(axis=(0, 1)),
    }
    dy = dz @ params["out.weight"]
    for layer in (2, 1):
        _, lcache = caches[layer - 1]
        dy, d_w_ih, d_w_hh, d_bias = _bilstm_backward(
            dy, params.stacked(layer, "w_ih"), params.stacked(layer, "w_hh"), lcache)
        for k, d in enumerate(DIRECTIONS):
            grads[f"l{layer}.{d}.w_ih"] = d_w_ih[k]
            grads[f"l{layer}.{d}.w_hh"] = d_w_hh[k]
            grads[f"l{layer}.{d}.b_ih"] = d_bias[k]
            grads[f"l{layer}.{d}.b_hh"] = d_bias[k].copy()
    return {name: grads[name] for name in param_names()}


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(zeros_like(params), zeros_like(params), 0)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update.  Updates ``params`` and ``state`` in place and returns them."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"diverged: non-finite gradient in {name}")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.arrays.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    state.t = t
    return params, state
