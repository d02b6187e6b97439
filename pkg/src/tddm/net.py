"""Recurrent Q-network: three ReLU convolutions, one LSTM layer, linear Q head.

Everything is float64 NumPy with hand-written reverse mode. Images are handled
channels-last, ``(N, H, W, C)``. All parameters live in one flat vector;
named arrays are views into it, so optimizers and checkpoints work on the
flat vector directly.

LSTM gate order in the stacked matrices is input, forget, output, candidate.
"""
from __future__ import annotations

import functools
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse

from .errors import ConfigError, ContractError, DivergenceError

DEFAULT_CONV = ((8, 5, 2), (16, 3, 2), (16, 3, 1))
SMALL_BATCH = 4


@dataclass(frozen=True)
class NetworkSpec:
    input_height: int = 32
    input_width: int = 32
    conv_layers: tuple = DEFAULT_CONV
    lstm_units: int = 64
    n_actions: int = 3
    unroll: int = 8

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(int(v) for v in c) for c in self.conv_layers))
        if len(self.conv_layers) != 3:
            raise ContractError("exactly three convolutional layers are required")
        if self.unroll < 1 or self.lstm_units < 1 or self.n_actions < 1:
            raise ContractError("unroll, lstm_units and n_actions must be >= 1")
        h, w = self.conv_geometry()[-1][-2:]
        if h < 1 or w < 1:
            raise ContractError("input too small for the convolution stack")

    def conv_geometry(self):
        """Per layer: (in_channels, in_h, in_w, out_channels, kernel, stride, out_h, out_w)."""
        geo = []
        c, h, w = 1, self.input_height, self.input_width
        for co, k, s in self.conv_layers:
            # ceil mode: trailing zero padding so the last row and column are covered
            oh, ow = (h - k + s - 1) // s + 1, (w - k + s - 1) // s + 1
            geo.append((c, h, w, co, k, s, oh, ow))
            c, h, w = co, oh, ow
        return geo

    @property
    def n_features(self) -> int:
        _, _, _, co, _, _, oh, ow = self.conv_geometry()[-1]
        return co * oh * ow

    def param_shapes(self):
        shapes = {}
        for i, (c, _, _, co, k, _, _, _) in enumerate(self.conv_geometry()):
            shapes[f"conv{i}.w"] = (co, c, k, k)
            shapes[f"conv{i}.b"] = (co,)
        u, f = self.lstm_units, self.n_features
        shapes["lstm.wx"] = (f, 4 * u)
        shapes["lstm.wh"] = (u, 4 * u)
        shapes["lstm.b"] = (4 * u,)
        shapes["head.w"] = (u, self.n_actions)
        shapes["head.b"] = (self.n_actions,)
        return shapes

    @property
    def n_params(self) -> int:
        """Closed form: conv (co*c*k*k + co) + LSTM 4u(f + u + 1) + head (u + 1) * actions."""
        total = sum(co * c * k * k + co for c, _, _, co, k, _, _, _ in self.conv_geometry())
        u = self.lstm_units
        return total + 4 * u * (self.n_features + u + 1) + (u + 1) * self.n_actions


class NetworkParams:
    """Flat parameter vector with named views."""

    def __init__(self, spec: NetworkSpec, flat=None):
        self.spec = spec
        n = spec.n_params
        self.flat = np.zeros(n) if flat is None else np.ascontiguousarray(flat, dtype=np.float64)
        if self.flat.shape != (n,):
            raise ContractError(f"expected {n} parameters, got {self.flat.shape}")
        self.views = {}
        off = 0
        for name, shape in spec.param_shapes().items():
            size = int(np.prod(shape))
            self.views[name] = self.flat[off:off + size].reshape(shape)
            off += size

    def __getitem__(self, name):
        return self.views[name]

    @property
    def size(self):
        return self.flat.size

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, self.flat.copy())

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(self.spec)


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> NetworkParams:
    """Uniform fan-in initialization.

    ReLU convolution weights use U(-sqrt(6/fan_in), sqrt(6/fan_in)) so sparse
    sprite frames still move the features; every other weight and all biases
    use U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    """
    p = NetworkParams(spec)
    for i, (c, _, _, _, k, _, _, _) in enumerate(spec.conv_geometry()):
        fan_in = c * k * k
        p[f"conv{i}.w"][...] = rng.uniform(-1.0, 1.0, p[f"conv{i}.w"].shape) * np.sqrt(6.0 / fan_in)
        p[f"conv{i}.b"][...] = rng.uniform(-1.0, 1.0, p[f"conv{i}.b"].shape) / np.sqrt(fan_in)
    bound = 1.0 / np.sqrt(spec.n_features + spec.lstm_units)
    for name in ("lstm.wx", "lstm.wh", "lstm.b"):
        p[name][...] = rng.uniform(-bound, bound, p[name].shape)
    bound = 1.0 / np.sqrt(spec.lstm_units)
    for name in ("head.w", "head.b"):
        p[name][...] = rng.uniform(-bound, bound, p[name].shape)
    return p


@dataclass
class HiddenState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, units: int, batch: int | None = None):
        shape = (units,) if batch is None else (batch, units)
        return cls(np.zeros(shape), np.zeros(shape))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# convolution -----------------------------------------------------------------

def _trailing_pad(n, k, stride):
    return (stride - (n - k) % stride) % stride


def _conv_forward(x, w, b, stride):
    """x (N, H, W, C), w (Co, C, k, k) -> out (N, Ho, Wo, Co), cols for backward.

    The bottom and right edges are zero-padded just enough for the windows to
    reach the last input row and column.
    """
    co, c, k, _ = w.shape
    n, h, wd = x.shape[:3]
    if n <= SMALL_BATCH:
        # an index gather beats the padded window view on a handful of frames
        idx, oh, ow = _im2col_index(h, wd, c, k, stride)
        flat = np.zeros((n, h * wd * c + 1))
        flat[:, :-1] = x.reshape(n, -1)
        cols = flat.take(idx, axis=1).reshape(n * oh * ow, k * k * c)
    else:
        ph, pw = _trailing_pad(h, k, stride), _trailing_pad(wd, k, stride)
        if ph or pw:
            x = np.pad(x, ((0, 0), (0, ph), (0, pw), (0, 0)))
        win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
        oh, ow = win.shape[1:3]
        # kernel-offset-major columns (k, k, c): contiguous copies in c
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * oh * ow, k * k * c)
    out = cols @ _offset_major(w).T + b
    return out.reshape(n, oh, ow, co), cols


@functools.lru_cache(maxsize=32)
def _im2col_index(h, w, c, k, stride):
    """Flat gather indices of the (oh, ow, k, k, c) columns; padding taps index one extra zero."""
    oh, ow = -(-(h - k) // stride) + 1, -(-(w - k) // stride) + 1
    oy, ox, i, j, ch = np.meshgrid(np.arange(oh), np.arange(ow), np.arange(k), np.arange(k),
                                   np.arange(c), indexing="ij")
    y, x = stride * oy + i, stride * ox + j
    idx = (y * w + x) * c + ch
    idx[(y >= h) | (x >= w)] = h * w * c
    idx = idx.ravel()
    idx.setflags(write=False)
    return idx, oh, ow


def _offset_major(w):
    co = w.shape[0]
    return w.transpose(0, 2, 3, 1).reshape(co, -1)


def _conv_backward(dout, cols, x_shape, w, stride, need_dx=True):
    co, c, k, _ = w.shape
    n, oh, ow, _ = dout.shape
    d2 = dout.reshape(-1, co)
    dw = (d2.T @ cols).reshape(co, k, k, c).transpose(0, 3, 1, 2)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    h, wd = x_shape[1:3]
    # column gradients laid out (oh * ow * k * k * c, n) so the sparse product reads them in order
    dp = np.ascontiguousarray(dout.reshape(n, oh * ow, co).transpose(1, 2, 0))
    dcols = np.matmul(_offset_major(w).T, dp).reshape(-1, n)
    dx = _col2im_matrix(oh, ow, k, c, h, wd, stride) @ dcols
    return np.ascontiguousarray(dx.T).reshape(n, h, wd, c), dw, db


@functools.lru_cache(maxsize=32)
def _col2im_matrix(oh, ow, k, c, h, w, stride):
    """Sparse 0/1 map from (oh, ow, k, k, c) column gradients to (h, w, c) input gradients.

    Window taps that fall in the trailing zero padding are dropped.
    """
    oy, ox, i, j, ch = np.meshgrid(np.arange(oh), np.arange(ow), np.arange(k), np.arange(k),
                                   np.arange(c), indexing="ij")
    y, x = stride * oy + i, stride * ox + j
    keep = ((y < h) & (x < w)).ravel()
    src = np.arange(oh * ow * k * k * c)[keep]
    dst = ((y * w + x) * c + ch).ravel()[keep]
    return sparse.csr_matrix((np.ones(src.size), (dst, src)), shape=(h * w * c, keep.size))


def conv_features(params: NetworkParams, frames):
    """Frames (N, H, W) -> LSTM input features (N, F) and the backward cache."""
    x = np.asarray(frames, dtype=np.float64)[..., None]
    cache = []
    for i, (_, _, _, _, _, s, _, _) in enumerate(params.spec.conv_geometry()):
        pre, cols = _conv_forward(x, params[f"conv{i}.w"], params[f"conv{i}.b"], s)
        cache.append((x.shape, cols, pre > 0))
        x = np.maximum(pre, 0.0)
    # flatten channels-first so feature order matches (C, H, W)
    feats = np.moveaxis(x, -1, 1).reshape(x.shape[0], -1)
    return feats, cache


def _conv_features_backward(params, dfeats, cache, grads):
    spec = params.spec
    geo = spec.conv_geometry()
    _, _, _, co, _, _, oh, ow = geo[-1]
    d = np.moveaxis(dfeats.reshape(-1, co, oh, ow), 1, -1)
    for i in reversed(range(len(geo))):
        x_shape, cols, active = cache[i]
        d = d * active
        d, dw, db = _conv_backward(d, cols, x_shape, params[f"conv{i}.w"], geo[i][5], need_dx=i > 0)
        grads[f"conv{i}.w"][...] += dw
        grads[f"conv{i}.b"][...] += db


# recurrent core --------------------------------------------------------------

def lstm_step(params: NetworkParams, x, state: HiddenState):
    u = params.spec.lstm_units
    z = x @ params["lstm.wx"] + state.h @ params["lstm.wh"] + params["lstm.b"]
    i = _sigmoid(z[..., :u])
    f = _sigmoid(z[..., u:2 * u])
    o = _sigmoid(z[..., 2 * u:3 * u])
    g = np.tanh(z[..., 3 * u:])
    c = f * state.c + i * g
    tc = np.tanh(c)
    h = o * tc
    return HiddenState(h, c), (i, f, o, g, tc)


def _check_frames(spec, frames):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 3:
        frames = frames[None]
    if frames.ndim != 4 or frames.shape[2:] != (spec.input_height, spec.input_width):
        raise ContractError(
            f"frames must have shape (B, T, {spec.input_height}, {spec.input_width}), got {frames.shape}")
    if frames.shape[1] > spec.unroll:
        raise ContractError(f"sequence length {frames.shape[1]} exceeds unroll {spec.unroll}")
    return frames


@dataclass
class ForwardResult:
    q: np.ndarray          # (B, T, A)
    h: np.ndarray          # (B, T, U)
    c: np.ndarray          # (B, T, U)
    features: np.ndarray   # (B, T, F)
    cache: dict = field(default_factory=dict, repr=False)

    def states(self, b: int = 0):
        return [HiddenState(self.h[b, t], self.c[b, t]) for t in range(self.h.shape[1])]


def forward_batch(params: NetworkParams, frames, h0: HiddenState | None = None, keep_cache=False):
    """Run sequences (B, T, H, W) through the network."""
    frames = _check_frames(params.spec, frames)
    bsz, steps = frames.shape[:2]
    feats, conv_cache = conv_features(params, frames.reshape((-1,) + frames.shape[2:]))
    res = forward_features(params, feats.reshape(bsz, steps, -1), h0, keep_cache)
    if keep_cache:
        res.cache["conv"] = conv_cache
    return res


def forward_features(params: NetworkParams, feats, h0: HiddenState | None = None, keep_cache=False):
    """Run precomputed conv features (B, T, F) through the LSTM and Q head."""
    spec = params.spec
    bsz, steps = feats.shape[:2]
    state = h0 if h0 is not None else HiddenState.zeros(spec.lstm_units, bsz)
    if state.h.ndim == 1:
        state = HiddenState(np.broadcast_to(state.h, (bsz, spec.lstm_units)).copy(),
                            np.broadcast_to(state.c, (bsz, spec.lstm_units)).copy())
    h_init = state.h
    hs = np.empty((bsz, steps, spec.lstm_units))
    cs = np.empty_like(hs)
    gates = []
    c_prev = [state.c]
    for t in range(steps):
        state, gate = lstm_step(params, feats[:, t], state)
        hs[:, t] = state.h
        cs[:, t] = state.c
        gates.append(gate)
        c_prev.append(state.c)
    q = hs @ params["head.w"] + params["head.b"]
    cache = {}
    if keep_cache:
        cache = dict(gates=gates, c_prev=c_prev, h0=h_init)
    return ForwardResult(q, hs, cs, feats, cache)


def forward(params: NetworkParams, frames, h0: HiddenState | None = None):
    """Single sequence (T, H, W) -> (q (T, A), list of T HiddenStates)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ContractError(f"expected one sequence of shape (T, H, W), got {frames.shape}")
    res = forward_batch(params, frames[None], h0)
    return res.q[0], res.states(0)


def act_step(params: NetworkParams, frame, state: HiddenState):
    """One acting step: returns (q (A,), new state, LSTM input features (F,))."""
    feats, _ = conv_features(params, np.asarray(frame, dtype=np.float64)[None])
    new, _ = lstm_step(params, feats[0], state)
    q = new.h @ params["head.w"] + params["head.b"]
    return q, new, feats[0]


def loss_and_gradient(params: NetworkParams, frames, actions, targets):
    """Mean squared TD error at the final unroll step, and its exact gradient.

    Args:
        frames: (B, T, H, W) sequences, hidden state zeroed at step 0.
        actions: (B,) action taken at the final step of each sequence.
        targets: (B,) TD targets.

    Returns:
        ``(loss, grads)`` with ``grads`` a NetworkParams of the same layout.
    """
    spec = params.spec
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    res = forward_batch(params, frames, keep_cache=True)
    bsz, steps = res.q.shape[:2]
    q_last = res.q[np.arange(bsz), -1, actions]
    err = targets - q_last
    bad = ~np.isfinite(err)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise DivergenceError(f"non-finite TD error at batch index {idx}", batch_index=idx)
    loss = float(np.mean(err**2))

    grads = params.zeros_like()
    u = spec.lstm_units
    dq = np.zeros((bsz, spec.n_actions))
    dq[np.arange(bsz), actions] = -2.0 * err / bsz
    h_last = res.h[:, -1]
    grads["head.w"][...] = h_last.T @ dq
    grads["head.b"][...] = dq.sum(axis=0)

    cache = res.cache
    dh = dq @ params["head.w"].T
    dc = np.zeros((bsz, u))
    dfeats = np.empty_like(res.features)
    wx, wh = params["lstm.wx"], params["lstm.wh"]
    gwx, gwh, gb = grads["lstm.wx"], grads["lstm.wh"], grads["lstm.b"]
    dz = np.empty((bsz, 4 * u))
    for t in reversed(range(steps)):
        i, f, o, g, tc = cache["gates"][t]
        c_prev = cache["c_prev"][t]
        h_prev = res.h[:, t - 1] if t > 0 else cache["h0"]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz[:, :u] = dc * g * i * (1.0 - i)
        dz[:, u:2 * u] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * u:3 * u] = dh * tc * o * (1.0 - o)
        dz[:, 3 * u:] = dc * i * (1.0 - g * g)
        gwx += res.features[:, t].T @ dz
        gwh += h_prev.T @ dz
        gb += dz.sum(axis=0)
        dfeats[:, t] = dz @ wx.T
        dh = dz @ wh.T
        dc = dc * f
    _conv_features_backward(params, dfeats.reshape(bsz * steps, -1), cache["conv"], grads)
    return loss, grads


# optimizer -------------------------------------------------------------------

@dataclass(frozen=True)
class RMSPropHyper:
    """RMSProp with momentum, per-element clipping and stepwise learning-rate decay.

    ``rho`` is the squared-gradient moving-average factor; the learning rate is
    multiplied by ``lr_decay`` every ``decay_interval`` optimizer steps.
    """

    lr: float = 0.00025
    lr_decay: float = 0.97
    decay_interval: int = 10_000
    rho: float = 0.95
    momentum: float = 0.95
    eps: float = 1e-6
    clip: float = 1.0

    def __post_init__(self):
        errors = []
        for name in ("lr", "eps", "clip"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be > 0")
        if not 0 < self.lr_decay <= 1:
            errors.append("lr_decay must lie in (0, 1]")
        for name in ("rho", "momentum"):
            if not 0 <= getattr(self, name) < 1:
                errors.append(f"{name} must lie in [0, 1)")
        if self.decay_interval < 1:
            errors.append("decay_interval must be >= 1")
        if errors:
            raise ConfigError(errors)


@dataclass
class OptimizerState:
    sq: np.ndarray
    mom: np.ndarray
    step: int
    lr: float

    @classmethod
    def create(cls, n_params: int, hyper: RMSPropHyper):
        return cls(np.zeros(n_params), np.zeros(n_params), 0, hyper.lr)


def rmsprop_step(params: NetworkParams, grads: NetworkParams, opt: OptimizerState, hyper: RMSPropHyper):
    """Return ``(new_params, new_state)``; inputs are left untouched."""
    if grads.size != params.size or opt.sq.shape != params.flat.shape:
        raise ContractError("parameter, gradient and optimizer shapes differ")
    g = np.clip(grads.flat, -hyper.clip, hyper.clip)
    sq = hyper.rho * opt.sq + (1.0 - hyper.rho) * g * g
    mom = hyper.momentum * opt.mom + opt.lr * g / np.sqrt(sq + hyper.eps)
    step = opt.step + 1
    lr = hyper.lr * hyper.lr_decay ** (step // hyper.decay_interval)
    return NetworkParams(params.spec, params.flat - mom), OptimizerState(sq, mom, step, lr)


# checkpoints -----------------------------------------------------------------

MAGIC = b"TDDMNET\0"
VERSION = 1


def dumps_checkpoint(params: NetworkParams) -> bytes:
    """Header (magic, version, byte order, spec JSON) followed by little-endian float64 parameters."""
    spec = asdict(params.spec)
    header = json.dumps(spec, sort_keys=True).encode()
    return (MAGIC + struct.pack("<I", VERSION) + b"L" + struct.pack("<I", len(header))
            + header + params.flat.astype("<f8").tobytes())


def loads_checkpoint(blob: bytes) -> NetworkParams:
    if blob[:8] != MAGIC:
        raise ContractError("not a network checkpoint")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    order = blob[12:13]
    if order not in (b"L", b"B"):
        raise ContractError("bad byte-order tag")
    fmt = "<" if order == b"L" else ">"
    (n,) = struct.unpack(fmt + "I", blob[13:17])
    spec = NetworkSpec(**json.loads(blob[17:17 + n]))
    flat = np.frombuffer(blob[17 + n:], dtype=fmt + "f8").astype(np.float64)
    return NetworkParams(spec, flat)
