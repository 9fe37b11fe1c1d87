"""
Dense float64 tensors with tape-based reverse-mode differentiation

A Graph records every operation whose inputs require gradients while it
is the active graph (``with Graph() as graph:``). ``graph.backward(loss)``
walks the tape in exact reverse order. Outside an active graph the same
functions just compute, which is how inference and finite-difference
evaluation run.
"""
import struct
import contextvars

import numpy as np

from .errors import ShapeError, NumericError, DomainError, GraphError, CheckpointError, DataIOError

_active_graph = contextvars.ContextVar('snake_active_graph', default=None)


class Tensor:
    """n-dimensional float64 array that can take part in a Graph"""

    __slots__ = ('data', 'requires_grad', 'grad', 'name')

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


class _Node:
    __slots__ = ('out', 'inputs', 'backward')

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Graph:
    """Tape of recorded operations for one forward pass"""

    def __init__(self):
        self.nodes = []
        self.consumed = False
        self._token = None

    def __enter__(self):
        self._token = _active_graph.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_graph.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, backward):
        if self.consumed:
            raise GraphError("cannot record into a graph that has already run backward")
        self.nodes.append(_Node(out, inputs, backward))

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into every leaf's .grad"""
        if self.consumed:
            raise GraphError("backward called twice on the same graph; re-run the forward pass")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise GraphError("loss does not depend on any tensor requiring gradients")
        self.consumed = True

        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for tensor, tg in zip(node.inputs, grads):
                if tg is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.array(tg, dtype=np.float64, copy=True).reshape(tensor.shape)
                else:
                    tensor.grad += tg
            # free intermediate buffers as soon as they are spent
            if node.out is not loss:
                node.out.grad = None
        self.nodes = []


def no_graph():
    """True when no graph is recording"""
    return _active_graph.get() is None


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data, inputs, backward):
    out = Tensor(data)
    graph = _active_graph.get()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.record(out, inputs, backward)
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to shape"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def detach(t):
    return Tensor(as_tensor(t).data)


# --- elementwise arithmetic ---

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def square(a):
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a):
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def smooth_l1(a, beta=1.0):
    """0.5 x^2 / beta inside |x| < beta, |x| - 0.5 beta outside"""
    x = a.data
    ax = np.abs(x)
    inside = ax < beta
    out = np.where(inside, 0.5 * x * x / beta, ax - 0.5 * beta)
    return _result(out, (a,), lambda g: (g * np.where(inside, x / beta, np.sign(x)),))


def clamp(a, lo, hi):
    """Clip to [lo, hi]; clipped entries pass no gradient"""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    out = np.clip(a.data, lo, hi)
    passed = (a.data >= lo) & (a.data <= hi)
    return _result(out, (a,), lambda g: (g * passed,))


# --- reductions and reshaping ---

def sum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    count = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _result(a.data.T, (a,), lambda g: (g.T,))


def getitem(a, key):
    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _result(a.data[key], (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat shapes disagree: {[t.shape for t in tensors]}", str(e))
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return _result(out, tuple(tensors), backward)


# --- linear algebra ---

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def softmax_rows(x):
    """Row-wise softmax, stabilised by subtracting the row maximum"""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {x.shape}")
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _result(s, (x,), backward)


# --- convolutions ---

def conv2d(x, w, b=None, stride=1, padding=1):
    """Cross-correlation of C x H x W input with O x C x k x k kernels, zero padded"""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects C x H x W input and O x C x k x k kernels, got {x.shape}, {w.shape}")
    C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv2d channel mismatch: input has {C}, kernels expect {Cw}")
    s, p = stride, padding
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p)))
    cols = np.empty((C, kh * kw, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i * kw + j] = xp[:, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s]
    cols2 = cols.reshape(C * kh * kw, Ho * Wo)
    w2 = w.data.reshape(O, C * kh * kw)
    out = (w2 @ cols2).reshape(O, Ho, Wo)
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None, None]
        inputs = (x, w, b)

    def backward(g):
        g2 = g.reshape(O, Ho * Wo)
        dw = (g2 @ cols2.T).reshape(w.shape)
        dx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(C, kh * kw, Ho, Wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += dcols[:, i * kw + j]
            dx = dxp[:, p:p + H, p:p + W]
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=1)

    return _result(out, inputs, backward)


def conv_transpose2d(x, w, b=None, stride=2, padding=1, output_padding=1):
    """Transposed convolution; kernels are C_in x C_out x k x k"""
    x, w = as_tensor(x), as_tensor(w)
    C, H, W = x.shape
    Cw, O, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv_transpose2d channel mismatch: input has {C}, kernels expect {Cw}")
    s, p, op = stride, padding, output_padding
    Ho = (H - 1) * s - 2 * p + kh + op
    Wo = (W - 1) * s - 2 * p + kw + op
    Hf = (H - 1) * s + kh + op
    Wf = (W - 1) * s + kw + op

    full = np.zeros((O, Hf, Wf))
    for i in range(kh):
        for j in range(kw):
            full[:, i:i + s * (H - 1) + 1:s, j:j + s * (W - 1) + 1:s] += \
                np.tensordot(w.data[:, :, i, j], x.data, axes=([0], [0]))
    out = full[:, p:p + Ho, p:p + Wo].copy()
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        out += b.data[:, None, None]
        inputs = (x, w, b)

    def backward(g):
        gf = np.zeros((O, Hf, Wf))
        gf[:, p:p + Ho, p:p + Wo] = g
        dx = np.zeros_like(x.data)
        dw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                gs = gf[:, i:i + s * (H - 1) + 1:s, j:j + s * (W - 1) + 1:s]
                dx += np.tensordot(w.data[:, :, i, j], gs, axes=([1], [0]))
                dw[:, :, i, j] = np.tensordot(x.data, gs, axes=([1, 2], [1, 2]))
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(1, 2))

    return _result(out, inputs, backward)


def circular_conv1d(seq, w, b=None):
    """Cross-correlation along the rows of an N x C sequence with wrap-around

    Kernels are O x C x K with K odd; output is N x O.
    """
    seq, w = as_tensor(seq), as_tensor(w)
    N, C = seq.shape
    O, Cw, K = w.shape
    if C != Cw:
        raise ShapeError(f"circular_conv1d channel mismatch: sequence has {C}, kernels expect {Cw}")
    if K % 2 == 0:
        raise ShapeError(f"circular_conv1d kernel size must be odd, got {K}")
    if N < K:
        raise ShapeError(f"circular_conv1d needs at least {K} vertices, got {N}")
    half = K // 2
    shifted = [np.roll(seq.data, -(k - half), axis=0) for k in range(K)]
    out = np.zeros((N, O))
    for k in range(K):
        out += shifted[k] @ w.data[:, :, k].T
    inputs = (seq, w)
    if b is not None:
        b = as_tensor(b)
        out += b.data
        inputs = (seq, w, b)

    def backward(g):
        dseq = np.zeros_like(seq.data)
        dw = np.empty_like(w.data)
        for k in range(K):
            dseq += np.roll(g @ w.data[:, :, k], k - half, axis=0)
            dw[:, :, k] = g.T @ shifted[k]
        if b is None:
            return dseq, dw
        return dseq, dw, g.sum(axis=0)

    return _result(out, inputs, backward)


# --- sampling ---

def bilinear_sample(maps, points):
    """Sample F x H x W maps at N x 2 (x, y) pixel positions -> N x F

    Pixel (c, r) has its centre at (c + 0.5, r + 0.5). Positions beyond the
    outermost centres are clamped and pass no gradient to the position.
    """
    maps, points = as_tensor(maps), as_tensor(points)
    F, H, W = maps.shape
    if H < 2 or W < 2:
        raise ShapeError(f"bilinear_sample needs maps of at least 2 x 2, got {maps.shape}")
    if points.data.ndim != 2 or points.shape[1] != 2:
        raise ShapeError(f"bilinear_sample expects N x 2 points, got {points.shape}")

    u = points.data[:, 0] - 0.5
    v = points.data[:, 1] - 0.5
    uc = np.clip(u, 0.0, W - 1.0)
    vc = np.clip(v, 0.0, H - 1.0)
    pass_u = (u >= 0.0) & (u <= W - 1.0)
    pass_v = (v >= 0.0) & (v <= H - 1.0)
    x0 = np.minimum(np.floor(uc).astype(np.int64), W - 2)
    y0 = np.minimum(np.floor(vc).astype(np.int64), H - 2)
    ax = uc - x0
    ay = vc - y0
    x1 = x0 + 1
    y1 = y0 + 1

    m00 = maps.data[:, y0, x0]
    m01 = maps.data[:, y0, x1]
    m10 = maps.data[:, y1, x0]
    m11 = maps.data[:, y1, x1]
    w00 = (1 - ax) * (1 - ay)
    w01 = ax * (1 - ay)
    w10 = (1 - ax) * ay
    w11 = ax * ay
    out = (w00 * m00 + w01 * m01 + w10 * m10 + w11 * m11).T

    def backward(g):
        gt = g.T
        dmaps = None
        if maps.requires_grad:
            flat = np.zeros((F, H * W))
            for idx, wgt in (((y0 * W + x0), w00), ((y0 * W + x1), w01),
                             ((y1 * W + x0), w10), ((y1 * W + x1), w11)):
                np.add.at(flat, (slice(None), idx), gt * wgt)
            dmaps = flat.reshape(F, H, W)
        du = (gt * ((1 - ay) * (m01 - m00) + ay * (m11 - m10))).sum(axis=0) * pass_u
        dv = (gt * ((1 - ax) * (m10 - m00) + ax * (m11 - m01))).sum(axis=0) * pass_v
        return dmaps, np.stack([du, dv], axis=1)

    return _result(out, (maps, points), backward)


# --- parameters and modules ---

def glorot_uniform(rng, shape, fan_in, fan_out, name=None):
    """uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out))"""
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name=None):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


class Module:
    """Container whose Tensor / Module attributes form a named parameter tree"""

    def named_parameters(self, prefix=''):
        params = {}
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                params[prefix + key] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(f"{prefix}{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{prefix}{key}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        params[f"{prefix}{key}.{i}"] = item
        return params

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def state_dict(self, prefix=''):
        return {name: p.data.copy() for name, p in self.named_parameters(prefix).items()}

    def load_state_dict(self, state, prefix='', strict=True):
        params = self.named_parameters(prefix)
        for name, p in params.items():
            if name not in state:
                if strict:
                    raise CheckpointError(f"checkpoint is missing tensor '{name}'")
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"tensor '{name}' has shape {value.shape}, model expects {p.shape}")
            p.data = np.ascontiguousarray(value)
        return self

    def zero_(self):
        """Set every parameter to zero"""
        for p in self.named_parameters().values():
            p.data = np.zeros_like(p.data)
        return self


# --- optimisers ---

class StepDecay:
    """lr * gamma ** (epoch // every), epochs counted from 0"""

    def __init__(self, lr, gamma=0.5, every=20):
        self.lr = lr
        self.gamma = gamma
        self.every = every

    def lr_at(self, epoch):
        return self.lr * self.gamma ** (epoch // self.every)


class MomentumSGD:
    """Gradient descent with classical momentum: v = mu v + g; p -= lr v"""

    def __init__(self, params, lr=1e-3, momentum=0.9):
        self.params = dict(sorted(params.items()))
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, scale=1.0):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad * scale
            p.data = p.data - self.lr * v

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


class Adam:
    """Adam with bias correction"""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(sorted(params.items()))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, scale=1.0):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * scale
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def make_optimizer(kind, params, lr, momentum=0.9):
    if kind == 'adam':
        return Adam(params, lr=lr)
    return MomentumSGD(params, lr=lr, momentum=momentum)


# --- gradient verification ---

def grad_check(f, params, h=1e-5):
    """Max relative error between analytic and central-difference gradients

    f takes no arguments and returns a scalar Tensor built from params.
    """
    if not 1e-7 < h < 1e-3:
        raise DomainError(f"finite-difference step must be in (1e-7, 1e-3), got {h}")
    for p in params:
        p.requires_grad = True
        p.grad = None

    with Graph() as graph:
        out = f()
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check objective is not finite")
    graph.backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    def evaluate():
        value = float(f().data.reshape(-1)[0])
        if not np.isfinite(value):
            raise NumericError("grad_check objective became non-finite under perturbation")
        return value

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = evaluate()
            flat[i] = orig - h
            fm = evaluate()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = abs(a[i] - numeric) / max(abs(a[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst


# --- checkpoint container ---

MAGIC = b'GSNK'
VERSION = 1


def save_checkpoint(path, tensors):
    """Write name -> array pairs in the GSNK container, names sorted"""
    chunks = [MAGIC, struct.pack('<II', VERSION, len(tensors))]
    for name in sorted(tensors):
        value = tensors[name]
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype='<f8')
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<B', arr.ndim))
        chunks.append(struct.pack(f'<{arr.ndim}I', *arr.shape))
        chunks.append(arr.tobytes())
    try:
        with open(path, 'wb') as fh:
            fh.write(b''.join(chunks))
    except OSError as e:
        raise DataIOError(f"cannot write checkpoint: {e.strerror}", path=path)


def load_checkpoint(path):
    """Read a GSNK container into a dict of float64 arrays"""
    try:
        with open(path, 'rb') as fh:
            blob = fh.read()
    except OSError as e:
        raise DataIOError(f"cannot read checkpoint: {e.strerror}", path=path)
    if blob[:4] != MAGIC:
        raise CheckpointError(f"unknown checkpoint magic {blob[:4]!r}")
    try:
        version, count = struct.unpack_from('<II', blob, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        offset = 12
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from('<H', blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode('utf-8')
            offset += name_len
            (rank,) = struct.unpack_from('<B', blob, offset)
            offset += 1
            dims = struct.unpack_from(f'<{rank}I', blob, offset)
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype='<f8', count=n, offset=offset).reshape(dims)
            offset += 8 * n
            tensors[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as e:
        raise CheckpointError("truncated or corrupt checkpoint", str(e))
    return tensors
