"""Dense-tensor neural network core: conv/linear/ReLU layers with hand-written
forward and backward passes, Huber loss, and an Adam optimizer.

All arrays are plain numpy ndarrays. Production code runs in float32; every op
preserves the dtype of its inputs, so the gradient-check tests can run the
same code paths in float64.

Parameter naming convention (used by checkpoints and freeze masks):
conv1.w, conv1.b, conv2.w, conv2.b, conv3.w, conv3.b, head1.w, head1.b,
head2.w, head2.b. Conv weights have shape (out_c, in_c, k, k), linear weights
(out_features, in_features).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

INPUT_HW = 84

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

HUBER_DELTA = 1.0


def assert_finite(arr, what: str):
    """Raise NumericalError if arr contains NaN or Inf."""
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values in {what}")


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel, self.stride) < 1:
            raise ConfigError(f"conv spec fields must be positive: {self}")
        if self.padding < 0:
            raise ConfigError(f"conv padding must be >= 0: {self}")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(
                f"conv kernel {self.kernel}/stride {self.stride} does not fit "
                f"{h}x{w} input"
            )
        return ho, wo


# The fixed three-layer encoder: 4x84x84 -> 32x20x20 -> 64x9x9 -> 64x7x7.
ENCODER_LAYERS = (
    ConvLayerSpec(4, 32, kernel=8, stride=4),
    ConvLayerSpec(32, 64, kernel=4, stride=2),
    ConvLayerSpec(64, 64, kernel=3, stride=1),
)
ENCODER_FEATURES = 3136
HIDDEN_FEATURES = 512


@dataclass(frozen=True)
class QNetworkSpec:
    """Network shape: a (possibly empty) conv encoder plus a two-layer head.

    With an empty encoder the network consumes flat feature vectors directly;
    that variant exists so the learning rule can be exercised on tiny
    feature-input problems without the vision stack.
    """

    conv: tuple[ConvLayerSpec, ...]
    feature_dim: int
    hidden_dim: int
    actions: int

    def __post_init__(self):
        if self.actions < 2:
            raise ConfigError(f"need at least 2 actions, got {self.actions}")
        if self.feature_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("feature_dim and hidden_dim must be positive")
        if self.conv:
            h = w = INPUT_HW
            for layer in self.conv:
                h, w = layer.out_hw(h, w)
            flat = self.conv[-1].out_channels * h * w
            if flat != self.feature_dim:
                raise ConfigError(
                    f"conv stack yields {flat} features but head expects "
                    f"{self.feature_dim}"
                )

    @classmethod
    def standard(cls, actions: int) -> "QNetworkSpec":
        return cls(ENCODER_LAYERS, ENCODER_FEATURES, HIDDEN_FEATURES, actions)

    @classmethod
    def head_only(cls, feature_dim: int, hidden_dim: int, actions: int) -> "QNetworkSpec":
        return cls((), feature_dim, hidden_dim, actions)

    @property
    def in_channels(self) -> int:
        return self.conv[0].in_channels if self.conv else 0

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for i, layer in enumerate(self.conv, start=1):
            k = layer.kernel
            shapes[f"conv{i}.w"] = (layer.out_channels, layer.in_channels, k, k)
            shapes[f"conv{i}.b"] = (layer.out_channels,)
        shapes["head1.w"] = (self.hidden_dim, self.feature_dim)
        shapes["head1.b"] = (self.hidden_dim,)
        shapes["head2.w"] = (self.actions, self.hidden_dim)
        shapes["head2.b"] = (self.actions,)
        return shapes


def _strided_windows(x, kernel: int, stride: int):
    # (B,C,H,W) -> read-only view (B,C,Ho,Wo,k,k)
    v = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return v[:, :, ::stride, ::stride, :, :]


def _pad_input(x, padding: int):
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_forward(x, spec: ConvLayerSpec, w, b):
    """Cross-correlate x with w and add b.

    x is (C,H,W) or (B,C,H,W); returns the matching (C',H',W') or
    (B,C',H',W').
    """
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.ndim != 4 or xb.shape[1] != spec.in_channels:
        raise ConfigError(
            f"conv input shape {x.shape} incompatible with spec {spec}"
        )
    expected_w = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
    if w.shape != expected_w:
        raise ConfigError(f"conv weight shape {w.shape}, expected {expected_w}")
    spec.out_hw(xb.shape[2], xb.shape[3])
    xp = _pad_input(xb, spec.padding)
    win = _strided_windows(xp, spec.kernel, spec.stride)
    # (B,Ho,Wo,O) <- sum over (C,ki,kj)
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    y += b[None, :, None, None]
    return y[0] if single else y


def conv2d_backward(grad_out, x, spec: ConvLayerSpec, w, need_input_grad: bool = True):
    """Gradients of conv2d_forward: returns (grad_input, grad_w, grad_b).

    grad_input is None when need_input_grad is False (saves the scatter pass
    for the lowest trainable layer).
    """
    single = grad_out.ndim == 3
    gb_out = grad_out[None] if single else grad_out
    xb = x[None] if single else x
    ho, wo = spec.out_hw(xb.shape[2], xb.shape[3])
    if gb_out.shape[1:] != (spec.out_channels, ho, wo):
        raise ConfigError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"({spec.out_channels},{ho},{wo})"
        )
    xp = _pad_input(xb, spec.padding)
    win = _strided_windows(xp, spec.kernel, spec.stride)
    gw = np.tensordot(gb_out, win, axes=([0, 2, 3], [0, 2, 3]))
    gb = gb_out.sum(axis=(0, 2, 3))

    gx = None
    if need_input_grad:
        gxp = np.zeros_like(xp)
        s, k = spec.stride, spec.kernel
        for i in range(k):
            for j in range(k):
                # (B,Ho,Wo,C) contribution of kernel offset (i,j)
                contrib = np.tensordot(gb_out, w[:, :, i, j], axes=([1], [0]))
                gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += (
                    contrib.transpose(0, 3, 1, 2)
                )
        p = spec.padding
        gx = gxp[:, :, p : xp.shape[2] - p, p : xp.shape[3] - p] if p else gxp
        if single:
            gx = gx[0]
    return gx, gw, gb


def linear_forward(x, w, b):
    """y = x @ w.T + b for x of shape (F,) or (B,F), w of shape (O,F)."""
    if x.shape[-1] != w.shape[1]:
        raise ConfigError(
            f"linear input has {x.shape[-1]} features, weight expects {w.shape[1]}"
        )
    return x @ w.T + b


def linear_backward(grad_out, x, w):
    """Gradients of linear_forward: (grad_input, grad_w, grad_b)."""
    if grad_out.shape[-1] != w.shape[0]:
        raise ConfigError(
            f"linear grad_out has {grad_out.shape[-1]} features, "
            f"weight produces {w.shape[0]}"
        )
    gx = grad_out @ w
    if x.ndim == 1:
        gw = np.outer(grad_out, x)
        gb = grad_out.copy()
    else:
        gw = grad_out.T @ x
        gb = grad_out.sum(axis=0)
    return gx, gw, gb


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    # subgradient at 0 pinned to 0
    return grad_out * (x > 0)


def huber_loss(pred, target):
    """Mean smooth-L1 loss (delta=1) and its gradient wrt pred.

    Per-element gradient is clip(pred-target, -1, 1) / batch, so the update
    magnitude is bounded by construction.
    """
    if pred.size == 0:
        raise ConfigError("huber_loss on empty batch")
    if pred.shape != target.shape:
        raise ConfigError(f"pred {pred.shape} vs target {target.shape}")
    d = pred - target
    absd = np.abs(d)
    per_el = np.where(absd <= HUBER_DELTA, 0.5 * d * d, absd - 0.5)
    loss = float(per_el.mean())
    grad = np.clip(d, -HUBER_DELTA, HUBER_DELTA) / pred.size
    return loss, grad


@dataclass
class AdamState:
    """First/second moment accumulators for the trainable parameter set."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], frozen=frozenset()) -> "AdamState":
        m = {n: np.zeros_like(p) for n, p in params.items() if n not in frozen}
        v = {n: np.zeros_like(p) for n, p in params.items() if n not in frozen}
        return cls(m=m, v=v)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update, in place on params and state.

    grads must only contain trainable parameter names (the state owns
    accumulators for exactly that set); frozen parameters are untouched
    because they never appear in grads.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    unknown = set(grads) - set(state.m)
    if unknown:
        raise ConfigError(f"gradients for non-trainable parameters: {sorted(unknown)}")
    state.step += 1
    c1 = 1.0 - ADAM_BETA1 ** state.step
    c2 = 1.0 - ADAM_BETA2 ** state.step
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


class QNetwork:
    """Q-value network: conv encoder + two-layer linear head.

    Parameters live in a flat name->array dict. `frozen` names are excluded
    from backward/optimizer updates. Forward passes never mutate state, so a
    network may be read concurrently; updates require exclusive access.
    """

    def __init__(self, spec: QNetworkSpec, params: dict[str, np.ndarray],
                 frozen=frozenset()):
        expected = spec.param_shapes()
        if set(params) != set(expected):
            raise ConfigError(
                f"parameter names {sorted(params)} != expected {sorted(expected)}"
            )
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ConfigError(
                    f"parameter {name} has shape {params[name].shape}, expected {shape}"
                )
        self.spec = spec
        self.params = params
        self.frozen = frozenset(frozen)

    @property
    def actions(self) -> int:
        return self.spec.actions

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def trainable_names(self) -> list[str]:
        return [n for n in sorted(self.params) if n not in self.frozen]

    def copy(self) -> "QNetwork":
        return QNetwork(self.spec, {n: p.copy() for n, p in self.params.items()},
                        self.frozen)

    def astype(self, dtype) -> "QNetwork":
        return QNetwork(self.spec, {n: p.astype(dtype) for n, p in self.params.items()},
                        self.frozen)

    def _check_input(self, x, single: bool):
        if self.spec.conv:
            want = (self.spec.in_channels, INPUT_HW, INPUT_HW)
        else:
            want = (self.spec.feature_dim,)
        got = x.shape if single else x.shape[1:]
        if tuple(got) != want:
            raise ConfigError(f"network input shape {x.shape}, expected {want}")

    def forward(self, x):
        """Q-values for a single state or a batch of states."""
        q, _ = self._forward(x, keep_cache=False)
        return q

    def forward_cached(self, x):
        """Forward pass retaining intermediates for backward()."""
        return self._forward(x, keep_cache=True)

    def _forward(self, x, keep_cache: bool):
        single = x.ndim == (3 if self.spec.conv else 1)
        self._check_input(x, single)
        xb = x[None] if single else x
        p = self.params
        conv_in: list = []
        conv_pre: list = []
        h = xb
        for i, layer in enumerate(self.spec.conv, start=1):
            pre = conv2d_forward(h, layer, p[f"conv{i}.w"], p[f"conv{i}.b"])
            if keep_cache:
                conv_in.append(h)
                conv_pre.append(pre)
            h = relu_forward(pre)
        flat = h.reshape(h.shape[0], -1)
        h1_pre = linear_forward(flat, p["head1.w"], p["head1.b"])
        h1 = relu_forward(h1_pre)
        q = linear_forward(h1, p["head2.w"], p["head2.b"])
        assert_finite(q, "q-values")
        cache = None
        if keep_cache:
            cache = {
                "single": single,
                "conv_in": conv_in,
                "conv_pre": conv_pre,
                "flat": flat,
                "h1_pre": h1_pre,
                "h1": h1,
            }
        return (q[0] if single else q), cache

    def backward(self, cache, grad_q) -> dict[str, np.ndarray]:
        """Gradients of the cached forward pass wrt trainable parameters.

        grad_q is dLoss/dQ with the same leading shape the forward received.
        """
        g = grad_q[None] if cache["single"] else grad_q
        p = self.params
        grads: dict[str, np.ndarray] = {}

        gx, gw, gb = linear_backward(g, cache["h1"], p["head2.w"])
        if "head2.w" not in self.frozen:
            grads["head2.w"], grads["head2.b"] = gw, gb
        g = relu_backward(gx, cache["h1_pre"])
        gx, gw, gb = linear_backward(g, cache["flat"], p["head1.w"])
        if "head1.w" not in self.frozen:
            grads["head1.w"], grads["head1.b"] = gw, gb

        trainable_conv = [
            i for i in range(1, len(self.spec.conv) + 1)
            if f"conv{i}.w" not in self.frozen
        ]
        if trainable_conv:
            lowest = min(trainable_conv)
            g = gx.reshape(cache["conv_pre"][-1].shape)
            for i in range(len(self.spec.conv), 0, -1):
                layer = self.spec.conv[i - 1]
                g = relu_backward(g, cache["conv_pre"][i - 1])
                need_below = i > lowest
                gx, gw, gb = conv2d_backward(
                    g, cache["conv_in"][i - 1], layer, p[f"conv{i}.w"],
                    need_input_grad=need_below,
                )
                if i in trainable_conv:
                    grads[f"conv{i}.w"], grads[f"conv{i}.b"] = gw, gb
                if not need_below:
                    break
                g = gx
        for name, arr in grads.items():
            assert_finite(arr, f"gradient of {name}")
        return grads


def init_network(spec: QNetworkSpec, seed: int, frozen=frozenset()) -> QNetwork:
    """Seed-deterministic init: weights uniform in +-1/sqrt(fan_in), biases 0."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return QNetwork(spec, params, frozen)


def qnet_forward(net: QNetwork, state):
    """Q-value vector for one state (no softmax: raw per-action values)."""
    return net.forward(state)
