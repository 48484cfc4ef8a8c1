"""Small trainable convolutional networks with named layer taps.

Networks are ordered layer lists over channel-last activations: ``(h, w, c)``
for frame networks and ``(t, h, w, c)`` for temporal-window networks.  Every
layer has a unique tap name and ``forward`` returns the activation at every
tap, so downstream fusion can pull intermediate feature maps (conv taps) as
well as fc and softmax outputs.

Convolutions use "same" spatial padding; 3-D convolutions are additionally
"valid" along time, so a temporal kernel of length k maps t frames to
t - k + 1.  Pooling is "valid".  Parameters are stored float32; all forward
and backward arithmetic runs in float64 so finite-difference gradient
verification is meaningful.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, FormatError, ShapeError

LAYER_KINDS = (
    "conv2d",
    "conv3d",
    "relu",
    "maxpool2d",
    "maxpool3d",
    "fully_connected",
    "softmax",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    kernel: tuple = None
    stride: tuple = None
    out_channels: int = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kernel is not None:
            object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.stride is not None:
            object.__setattr__(self, "stride", tuple(int(s) for s in self.stride))


class Network:
    """Ordered layers plus per-layer parameter tensors and an input shape.

    ``input_shape`` is (h, w, d) for frame networks or (L, h, w, d) for
    temporal-window networks, where L is the sliding-window length.
    """

    def __init__(self, input_shape, layers, params):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = list(layers)
        self.params = params

    @property
    def is_window_net(self):
        return len(self.input_shape) == 4

    @property
    def num_classes(self):
        return _infer_shapes(self.input_shape, self.layers)[-1][0]

    def tap_shape(self, name):
        shapes = _infer_shapes(self.input_shape, self.layers)
        for spec, shape in zip(self.layers, shapes):
            if spec.name == name:
                return shape
        raise KeyError(name)


# ---------------------------------------------------------------------------
# shape inference / validation


def _same_pad(size, kernel, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, (total // 2, total - total // 2)


def _infer_shapes(input_shape, specs):
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("layer names must be unique within a network")
    rank = len(input_shape)
    if rank not in (3, 4):
        raise ShapeError(f"input shape must be (h, w, d) or (L, h, w, d), got {input_shape}")
    shape = tuple(input_shape)
    out = []
    for spec in specs:
        kind = spec.kind
        if kind in ("conv3d", "maxpool3d") and rank != 4:
            raise ConfigError(f"{spec.name}: {kind} is only valid in temporal-window networks")
        if kind in ("conv2d", "conv3d", "maxpool2d", "maxpool3d") and spec.kernel is None:
            raise ConfigError(f"{spec.name}: {kind} requires a kernel shape")
        if kind in ("conv2d", "conv3d", "fully_connected") and not spec.out_channels:
            raise ConfigError(f"{spec.name}: {kind} requires out_channels")
        if kind == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"{spec.name}: conv2d needs a (h, w, c) input, got {shape}")
            kh, kw = spec.kernel
            sh, sw = spec.stride or (1, 1)
            oh, _ = _same_pad(shape[0], kh, sh)
            ow, _ = _same_pad(shape[1], kw, sw)
            shape = (oh, ow, spec.out_channels)
        elif kind == "conv3d":
            if len(shape) != 4:
                raise ShapeError(f"{spec.name}: conv3d needs a (t, h, w, c) input, got {shape}")
            kt, kh, kw = spec.kernel
            if shape[0] < kt:
                raise ShapeError(f"{spec.name}: temporal extent {shape[0]} < kernel {kt}")
            shape = (shape[0] - kt + 1, shape[1], shape[2], spec.out_channels)
        elif kind == "maxpool2d":
            if len(shape) != 3:
                raise ShapeError(f"{spec.name}: maxpool2d needs a (h, w, c) input, got {shape}")
            kh, kw = spec.kernel
            sh, sw = spec.stride or (kh, kw)
            if shape[0] < kh or shape[1] < kw:
                raise ShapeError(f"{spec.name}: pool window exceeds input {shape}")
            shape = ((shape[0] - kh) // sh + 1, (shape[1] - kw) // sw + 1, shape[2])
        elif kind == "maxpool3d":
            kt, kh, kw = spec.kernel
            st, sh, sw = spec.stride or (kt, kh, kw)
            if shape[0] < kt or shape[1] < kh or shape[2] < kw:
                raise ShapeError(f"{spec.name}: pool window exceeds input {shape}")
            shape = (
                (shape[0] - kt) // st + 1,
                (shape[1] - kh) // sh + 1,
                (shape[2] - kw) // sw + 1,
                shape[3],
            )
        elif kind == "fully_connected":
            shape = (spec.out_channels,)
        elif kind == "relu":
            pass
        elif kind == "softmax":
            if len(shape) != 1:
                raise ShapeError(f"{spec.name}: softmax needs a flat input, got {shape}")
        out.append(shape)
    return out


def _flat_size(shape):
    n = 1
    for s in shape:
        n *= s
    return n


# ---------------------------------------------------------------------------
# construction


def build_network(input_shape, specs, seed=0):
    """Validate the layer stack and initialise parameters.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero,
    drawn from a seeded generator so builds are reproducible.
    """
    shapes = _infer_shapes(tuple(input_shape), specs)
    rng = np.random.default_rng(seed)
    params = []
    prev = tuple(input_shape)
    for spec, out_shape in zip(specs, shapes):
        if spec.kind == "conv2d":
            kh, kw = spec.kernel
            cin, cout = prev[2], spec.out_channels
            fan_in, fan_out = kh * kw * cin, kh * kw * cout
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(kh, kw, cin, cout))
            params.append({"w": w.astype(np.float32), "b": np.zeros(cout, np.float32)})
        elif spec.kind == "conv3d":
            kt, kh, kw = spec.kernel
            cin, cout = prev[3], spec.out_channels
            fan_in, fan_out = kt * kh * kw * cin, kt * kh * kw * cout
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(kt, kh, kw, cin, cout))
            params.append({"w": w.astype(np.float32), "b": np.zeros(cout, np.float32)})
        elif spec.kind == "fully_connected":
            fan_in, fan_out = _flat_size(prev), spec.out_channels
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            params.append({"w": w.astype(np.float32), "b": np.zeros(fan_out, np.float32)})
        else:
            params.append({})
        prev = out_shape
    return Network(input_shape, specs, params)


def default_frame_layers(num_classes, conv_channels=(8, 16), fc_sizes=(64, 32)):
    """Desk-scale frame network: two conv blocks then fc6/fc7/softmax.

    The last conv tap is named "c5" and the first fully-connected tap
    "fc6", matching the tap names the fusion stage pulls by default.
    """
    c1, c5 = conv_channels
    fc6, fc7 = fc_sizes
    return [
        LayerSpec("conv2d", "c1", kernel=(3, 3), out_channels=c1),
        LayerSpec("relu", "r1"),
        LayerSpec("maxpool2d", "p1", kernel=(2, 2)),
        LayerSpec("conv2d", "c5", kernel=(3, 3), out_channels=c5),
        LayerSpec("relu", "r5"),
        LayerSpec("maxpool2d", "p5", kernel=(2, 2)),
        LayerSpec("fully_connected", "fc6", out_channels=fc6),
        LayerSpec("relu", "r6"),
        LayerSpec("fully_connected", "fc7", out_channels=fc7),
        LayerSpec("relu", "r7"),
        LayerSpec("fully_connected", "fc8", out_channels=num_classes),
        LayerSpec("softmax", "o"),
    ]


def default_window_layers(num_classes, conv_channels=(8, 16), fc_sizes=(64, 32)):
    """Desk-scale temporal-window network with 3-D convolutions."""
    c1, c5 = conv_channels
    fc6, fc7 = fc_sizes
    return [
        LayerSpec("conv3d", "c1", kernel=(3, 3, 3), out_channels=c1),
        LayerSpec("relu", "r1"),
        LayerSpec("maxpool3d", "p1", kernel=(2, 2, 2)),
        LayerSpec("conv3d", "c5", kernel=(3, 3, 3), out_channels=c5),
        LayerSpec("relu", "r5"),
        LayerSpec("maxpool3d", "p5", kernel=(2, 2, 2)),
        LayerSpec("fully_connected", "fc6", out_channels=fc6),
        LayerSpec("relu", "r6"),
        LayerSpec("fully_connected", "fc7", out_channels=fc7),
        LayerSpec("relu", "r7"),
        LayerSpec("fully_connected", "fc8", out_channels=num_classes),
        LayerSpec("softmax", "o"),
    ]


# ---------------------------------------------------------------------------
# layer forward/backward (float64 arithmetic)


def _conv2d_fwd(x, w, b, stride):
    h, wd, _ = x.shape
    kh, kw, _, cout = w.shape
    sh, sw = stride
    oh, (pt, pb) = _same_pad(h, kh, sh)
    ow, (pl, pr) = _same_pad(wd, kw, sw)
    xpad = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
    out = np.zeros((oh, ow, cout))
    for dy in range(kh):
        for dx in range(kw):
            xs = xpad[dy : dy + (oh - 1) * sh + 1 : sh, dx : dx + (ow - 1) * sw + 1 : sw]
            out += xs @ w[dy, dx]
    out += b
    return out, (xpad, (pt, pl), (oh, ow))


def _conv2d_bwd(dout, cache, w, stride, in_shape):
    xpad, (pt, pl), (oh, ow) = cache
    kh, kw, _, _ = w.shape
    sh, sw = stride
    dw = np.zeros_like(w)
    dxpad = np.zeros_like(xpad)
    for dy in range(kh):
        for dx in range(kw):
            sl = (
                slice(dy, dy + (oh - 1) * sh + 1, sh),
                slice(dx, dx + (ow - 1) * sw + 1, sw),
            )
            dw[dy, dx] = np.einsum("hwi,hwo->io", xpad[sl], dout)
            dxpad[sl] += dout @ w[dy, dx].T
    db = dout.sum(axis=(0, 1))
    h, wd, _ = in_shape
    return dxpad[pt : pt + h, pl : pl + wd], dw, db


def _conv3d_fwd(x, w, b):
    t, h, wd, _ = x.shape
    kt, kh, kw, _, cout = w.shape
    if t < kt:
        raise ShapeError(f"temporal extent {t} < kernel length {kt}")
    ot = t - kt + 1
    pt, pb = (kh - 1) // 2, kh - 1 - (kh - 1) // 2
    pl, pr = (kw - 1) // 2, kw - 1 - (kw - 1) // 2
    xpad = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    out = np.zeros((ot, h, wd, cout))
    for dt in range(kt):
        for dy in range(kh):
            for dx in range(kw):
                xs = xpad[dt : dt + ot, dy : dy + h, dx : dx + wd]
                out += xs @ w[dt, dy, dx]
    out += b
    return out, (xpad, (pt, pl), ot)


def _conv3d_bwd(dout, cache, w, in_shape):
    xpad, (pt, pl), ot = cache
    kt, kh, kw, _, _ = w.shape
    t, h, wd, _ = in_shape
    dw = np.zeros_like(w)
    dxpad = np.zeros_like(xpad)
    for dt in range(kt):
        for dy in range(kh):
            for dx in range(kw):
                sl = (slice(dt, dt + ot), slice(dy, dy + h), slice(dx, dx + wd))
                dw[dt, dy, dx] = np.einsum("thwi,thwo->io", xpad[sl], dout)
                dxpad[sl] += dout @ w[dt, dy, dx].T
    db = dout.sum(axis=(0, 1, 2))
    return dxpad[:, pt : pt + h, pl : pl + wd], dw, db


def _pool_fwd(x, kernel, stride):
    """Valid max pooling over the leading len(kernel) axes (channels last)."""
    nk = len(kernel)
    out_dims = tuple((x.shape[i] - kernel[i]) // stride[i] + 1 for i in range(nk))
    slices = []
    for offs in np.ndindex(*kernel):
        sl = tuple(
            slice(offs[i], offs[i] + (out_dims[i] - 1) * stride[i] + 1, stride[i])
            for i in range(nk)
        )
        slices.append(x[sl])
    stack = np.stack(slices)
    idx = np.argmax(stack, axis=0)
    out = np.take_along_axis(stack, idx[None], axis=0)[0]
    return out, (idx, out_dims)


def _pool_bwd(dout, cache, kernel, stride, in_shape):
    idx, out_dims = cache
    nk = len(kernel)
    dx = np.zeros(in_shape)
    offsets = np.unravel_index(idx, kernel)
    grids = np.meshgrid(*[np.arange(n) for n in dout.shape], indexing="ij")
    coords = []
    for i in range(nk):
        coords.append(grids[i] * stride[i] + offsets[i])
    coords.extend(grids[nk:])  # channel (and any trailing) axes map through
    np.add.at(dx, tuple(c.ravel() for c in coords), dout.ravel())
    return dx


def _softmax(logits):
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# forward / backward passes


def _run_forward(net, x, keep_cache=False):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match declared {net.input_shape}")
    taps = {}
    caches = []
    for spec, p in zip(net.layers, net.params):
        cache = None
        if spec.kind == "conv2d":
            in_shape = x.shape
            x, cache = _conv2d_fwd(
                x, p["w"].astype(np.float64), p["b"].astype(np.float64), spec.stride or (1, 1)
            )
            cache = (in_shape, cache)
        elif spec.kind == "conv3d":
            in_shape = x.shape
            x, cache = _conv3d_fwd(x, p["w"].astype(np.float64), p["b"].astype(np.float64))
            cache = (in_shape, cache)
        elif spec.kind == "relu":
            cache = x
            x = np.maximum(x, 0.0)
        elif spec.kind in ("maxpool2d", "maxpool3d"):
            in_shape = x.shape
            x, cache = _pool_fwd(x, spec.kernel, spec.stride or spec.kernel)
            cache = (in_shape, cache)
        elif spec.kind == "fully_connected":
            flat = x.reshape(-1)
            cache = (x.shape, flat)
            x = p["w"].astype(np.float64) @ flat + p["b"].astype(np.float64)
        elif spec.kind == "softmax":
            x = _softmax(x)
            cache = x
        taps[spec.name] = x
        caches.append(cache)
    return (taps, caches) if keep_cache else taps


def forward(net, x):
    """Single forward pass; returns {tap name: float32 activation}."""
    taps = _run_forward(net, x)
    return {name: a.astype(np.float32) for name, a in taps.items()}


def forward3d(net, window):
    """Forward pass of a temporal-window network over an (L, h, w, d) stack."""
    if not net.is_window_net:
        raise ShapeError("forward3d requires a temporal-window network")
    window = np.asarray(window)
    if window.ndim != 4 or window.shape[0] != net.input_shape[0]:
        raise ShapeError(
            f"window must hold exactly {net.input_shape[0]} frames, got shape {window.shape}"
        )
    return forward(net, window)


def _check_softmax_head(net):
    if not net.layers or net.layers[-1].kind != "softmax":
        raise ConfigError("training requires a softmax output layer")


def cross_entropy_loss(net, x, target):
    """Cross-entropy of the softmax tap against an integer class index."""
    _check_softmax_head(net)
    taps, _ = _run_forward(net, x, keep_cache=True)
    logits = taps[net.layers[-2].name]
    target = int(target)
    if not 0 <= target < logits.size:
        raise ShapeError(f"target {target} out of range for {logits.size} classes")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[target])


def backward(net, x, target):
    """Gradients of the cross-entropy loss w.r.t. every parameter.

    Returns a list aligned with ``net.layers``; parameter-free layers get an
    empty dict.  Raises DivergenceError naming the first layer whose
    activations go non-finite.
    """
    _check_softmax_head(net)
    taps, caches = _run_forward(net, x, keep_cache=True)
    for spec in net.layers:
        if not np.all(np.isfinite(taps[spec.name])):
            raise DivergenceError(spec.name)
    probs = taps[net.layers[-1].name]
    target = int(target)
    if not 0 <= target < probs.size:
        raise ShapeError(f"target {target} out of range for {probs.size} classes")
    loss = -np.log(max(probs[target], 1e-300))
    if not np.isfinite(loss):
        raise DivergenceError(net.layers[-1].name, "non-finite training loss")

    grads = [dict() for _ in net.layers]
    # combined softmax + cross-entropy gradient at the logits
    d = probs.copy()
    d[target] -= 1.0
    for i in range(len(net.layers) - 2, -1, -1):
        spec, p, cache = net.layers[i], net.params[i], caches[i]
        if spec.kind == "conv2d":
            in_shape, conv_cache = cache
            d, dw, db = _conv2d_bwd(
                d, conv_cache, p["w"].astype(np.float64), spec.stride or (1, 1), in_shape
            )
            grads[i] = {"w": dw, "b": db}
        elif spec.kind == "conv3d":
            in_shape, conv_cache = cache
            d, dw, db = _conv3d_bwd(d, conv_cache, p["w"].astype(np.float64), in_shape)
            grads[i] = {"w": dw, "b": db}
        elif spec.kind == "relu":
            d = d * (cache > 0)
        elif spec.kind in ("maxpool2d", "maxpool3d"):
            in_shape, pool_cache = cache
            d = _pool_bwd(d, pool_cache, spec.kernel, spec.stride or spec.kernel, in_shape)
        elif spec.kind == "fully_connected":
            in_shape, flat = cache
            grads[i] = {"w": np.outer(d, flat), "b": d.copy()}
            d = (p["w"].astype(np.float64).T @ d).reshape(in_shape)
    return grads


def sgd_step(net, grads, lr, momentum=0.0, weight_decay=0.0, state=None):
    """Momentum SGD update, in place; returns the velocity state.

    v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v.
    With lr = 0 parameters are untouched bit for bit.
    """
    if lr < 0:
        raise ConfigError("learning rate must be >= 0")
    if state is None:
        state = [{k: np.zeros_like(p) for k, p in layer.items()} for layer in net.params]
    for layer, g, vel in zip(net.params, grads, state):
        for key, p in layer.items():
            gk = g[key].astype(np.float32)
            if weight_decay:
                gk = gk + np.float32(weight_decay) * p
            vel[key] = np.float32(momentum) * vel[key] + gk
            if lr:
                p -= np.float32(lr) * vel[key]
    return state


_KIND_CODES = {kind: i for i, kind in enumerate(LAYER_KINDS, start=1)}
_CODE_KINDS = {i: kind for kind, i in _KIND_CODES.items()}


def save_weights(net, path):
    """Persist a network (specs + parameters) to the STWN container."""
    from . import stwn

    w = stwn.new_container(stwn.KIND_NETWORK)
    w.u8(len(net.input_shape))
    for d in net.input_shape:
        w.u32(d)
    w.u32(len(net.layers))
    for spec, p in zip(net.layers, net.params):
        w.u8(_KIND_CODES[spec.kind])
        w.name(spec.name)
        kernel = spec.kernel or ()
        w.u8(len(kernel))
        for k in kernel:
            w.u32(k)
        stride = spec.stride or ()
        w.u8(len(stride))
        for s in stride:
            w.u32(s)
        w.u32(spec.out_channels or 0)
        tensors = [p[k] for k in ("w", "b") if k in p]
        w.u8(len(tensors))
        for t in tensors:
            w.tensor(t)
    with open(path, "wb") as f:
        f.write(w.getvalue())


def load_weights(path, expected_layers=None):
    """Load a network from file, rebuilding specs and parameters.

    If ``expected_layers`` is given, the stored stack must match it layer
    for layer (kind, name, kernel, stride, out_channels) or FormatError
    is raised.
    """
    from . import stwn

    r = stwn.open_container(path, stwn.KIND_NETWORK)
    rank = r.u8()
    input_shape = tuple(r.u32() for _ in range(rank))
    n_layers = r.u32()
    specs, params = [], []
    for _ in range(n_layers):
        code = r.u8()
        if code not in _CODE_KINDS:
            r.fail(f"unknown layer code {code}")
        name = r.name()
        kernel = tuple(r.u32() for _ in range(r.u8())) or None
        stride = tuple(r.u32() for _ in range(r.u8())) or None
        out_channels = r.u32() or None
        spec = LayerSpec(_CODE_KINDS[code], name, kernel=kernel, stride=stride, out_channels=out_channels)
        n_tensors = r.u8()
        p = {}
        if n_tensors >= 1:
            p["w"] = r.tensor()
        if n_tensors >= 2:
            p["b"] = r.tensor()
        specs.append(spec)
        params.append(p)
    r.done()
    if expected_layers is not None:
        if len(expected_layers) != len(specs):
            raise FormatError(
                f"{path}: file holds {len(specs)} layers, expected {len(expected_layers)}"
            )
        for got, want in zip(specs, expected_layers):
            if got != want:
                raise FormatError(f"{path}: layer {got.name!r} does not match expected spec")
    try:
        _infer_shapes(input_shape, specs)
    except (ShapeError, ConfigError) as exc:
        raise FormatError(f"{path}: stored network is inconsistent ({exc})") from exc
    return Network(input_shape, specs, params)


def check_gradients(net, x, target, eps=1e-3):
    """Max relative error between backprop and central finite differences.

    Evaluation is float64 throughout; each parameter element is perturbed by
    +-eps in turn.  Relative error per element is |a - n| / max(|a|, |n|, 1)
    so near-zero gradients compare on an absolute scale.
    """
    analytic = backward(net, x, target)
    worst = 0.0
    for layer, g in zip(net.params, analytic):
        for key, p in layer.items():
            flat = p.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                plus = np.float32(orig + eps)
                minus = np.float32(orig - eps)
                flat[i] = plus
                up = cross_entropy_loss(net, x, target)
                flat[i] = minus
                down = cross_entropy_loss(net, x, target)
                flat[i] = orig
                numeric = (up - down) / (float(plus) - float(minus))
                a = float(g[key].reshape(-1)[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
                worst = max(worst, rel)
    return worst
