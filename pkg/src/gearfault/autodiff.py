"""
Minimal reverse-mode automatic differentiation over numpy arrays.

Operations are plain functions taking and returning :class:`Tensor`. While a
:class:`Graph` is active (``with Graph() as g:``) every op whose inputs need
gradients appends a node holding its inputs, its output and a backward
closure over the values it saved. ``g.backward(loss)`` then walks the nodes
in reverse creation order, which is a reverse topological order because a
node is only created after all of its inputs exist.

Outside a graph nothing is recorded, which is how inference runs.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, logsumexp

from .errors import ArgumentError, DimensionError

ArrayLike = Union[np.ndarray, float, Sequence[float]]
Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An array that can take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}{self.shape}"


@dataclass
class Node:
    op: str
    inputs: List[Tensor]
    output: Tensor
    backward: Backward


class Graph:
    """Tape of recorded operations; use as a context manager."""

    _local = threading.local()

    def __init__(self):
        self.nodes: List[Node] = []

    @classmethod
    def current(cls) -> Optional["Graph"]:
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def __enter__(self) -> "Graph":
        if not hasattr(self._local, "stack"):
            self._local.stack = []
        self._local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        self._local.stack.pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, output: Tensor, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(output)/d(leaf) into the ``grad`` of every leaf tensor."""
        seed = np.ones_like(output.data) if grad is None else np.asarray(grad, dtype=output.dtype)
        if seed.shape != output.shape:
            raise DimensionError(f"seed gradient shape {seed.shape} != output shape {output.shape}")
        grads: Dict[int, np.ndarray] = {id(output): seed}
        produced = {id(node.output) for node in self.nodes}
        leaves: Dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for tensor, tg in zip(node.inputs, node.backward(g)):
                if tg is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + tg if key in grads else tg
                if key not in produced:
                    leaves[key] = tensor
        if id(output) not in produced and output.requires_grad:
            leaves[id(output)] = output
        for key, tensor in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            g = g.astype(tensor.dtype, copy=False)
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g


def _emit(op: str, inputs: Sequence[Tensor], data: np.ndarray, backward: Backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    graph = Graph.current()
    out = Tensor(data, requires_grad=needs and graph is not None)
    if out.requires_grad:
        graph.record(Node(op, list(inputs), out, backward))
    return out


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from e
    return _emit("add", [a, b], data, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit("scale", [a], a.data * factor, lambda g: (g * factor,))


def weighted_sum(a: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(a * weights)``."""
    weights = np.asarray(weights, dtype=a.dtype)
    if weights.shape != a.shape:
        raise DimensionError(f"weights shape {weights.shape} != tensor shape {a.shape}")
    return _emit("weighted_sum", [a], np.asarray(np.sum(a.data * weights)), lambda g: (g * weights,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", [a], np.where(mask, a.data, 0).astype(a.dtype), lambda g: (g * mask,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ArgumentError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray):
        return np.split(g, bounds, axis=axis)

    return _emit("concat", tensors, data, backward)


def dimension_shuffle(a: Tensor) -> Tensor:
    """Read a channel-major ``(N, C, L)`` series as an LSTM input sequence.

    The time-major view of the series has ``L`` steps of ``C`` features; the
    shuffle exchanges the two, so the result is ``(N, T=C, D=L)``: ``C``
    steps, each an ``L``-dimensional vector. In channel-major storage this
    is the same array, and the gradient passes through unchanged.
    """
    if a.data.ndim != 3:
        raise DimensionError(f"dimension_shuffle expects (N, C, L), got {a.shape}")
    return _emit("dimension_shuffle", [a], a.data.copy(), lambda g: (g,))


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` (N, D) and ``weight`` (K, D)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    data = x.data @ weight.data.T
    if bias is not None:
        data = data + bias.data

    def backward(g: np.ndarray):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = [x, weight] + ([bias] if bias is not None else [])
    return _emit("dense", inputs, data, backward)


# ---------------------------------------------------------------------------
# Convolution and pooling
# ---------------------------------------------------------------------------

def _same_padding(kernel_size: int) -> Tuple[int, int]:
    left = (kernel_size - 1) // 2
    return left, kernel_size - 1 - left


def _resolve_padding(padding: Union[str, int], kernel_size: int) -> Tuple[int, int]:
    if padding == "same":
        return _same_padding(kernel_size)
    if padding == "valid":
        return 0, 0
    if isinstance(padding, int) and padding >= 0:
        return padding, padding
    raise ArgumentError(f"padding must be 'same', 'valid' or a non-negative int, got {padding!r}")


def _scatter_windows(
    windows_grad: np.ndarray, padded_length: int, kernel_size: int, stride: int, dilation: int = 1
) -> np.ndarray:
    """Fold ``(N, C, L_out, K)`` window gradients back onto the padded input."""
    n, c, l_out, _ = windows_grad.shape
    out = np.zeros((n, c, padded_length), dtype=windows_grad.dtype)
    span = stride * (l_out - 1) + 1
    for k in range(kernel_size):
        start = k * dilation
        out[:, :, start : start + span : stride] += windows_grad[:, :, :, k]
    return out


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Union[str, int] = "same",
) -> Tensor:
    """Cross-correlation of ``x`` (N, C_in, L) with ``weight`` (C_out, C_in, K).

    ``same`` padding puts ``(K-1)//2`` zeros on the left and the rest on the
    right; output length is ``floor((L + pad - K) / stride) + 1``.
    """
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise DimensionError(f"conv1d expects (N, C, L) input and (C_out, C_in, K) weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv1d: input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    k = weight.shape[2]
    left, right = _resolve_padding(padding, k)
    padded = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    if k > padded.shape[2]:
        raise ArgumentError(f"kernel size {k} exceeds padded length {padded.shape[2]}")
    windows = sliding_window_view(padded, k, axis=2)[:, :, ::stride, :]
    data = np.tensordot(windows, weight.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if bias is not None:
        data = data + bias.data[None, :, None]
    data = np.ascontiguousarray(data)

    def backward(g: np.ndarray):
        grad_w = np.tensordot(g, windows, axes=([0, 2], [0, 2]))
        grad_windows = np.tensordot(g, weight.data, axes=([1], [0])).transpose(0, 2, 1, 3)
        grad_padded = _scatter_windows(grad_windows, padded.shape[2], k, stride)
        grads = [grad_padded[:, :, left : padded.shape[2] - right], grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    inputs = [x, weight] + ([bias] if bias is not None else [])
    return _emit("conv1d", inputs, data, backward)


def maxpool1d(x: Tensor, kernel_size: int, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    """Max over windows; padded positions hold ``-inf`` and never win."""
    if x.data.ndim != 3:
        raise DimensionError(f"maxpool1d expects (N, C, L), got {x.shape}")
    stride = stride or kernel_size
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)), constant_values=-np.inf)
    if kernel_size > padded.shape[2]:
        raise ArgumentError(f"pool size {kernel_size} exceeds padded length {padded.shape[2]}")
    windows = sliding_window_view(padded, kernel_size, axis=2)[:, :, ::stride, :]
    winner = windows.argmax(axis=3)
    data = np.take_along_axis(windows, winner[..., None], axis=3)[..., 0]

    def backward(g: np.ndarray):
        hot = (winner[..., None] == np.arange(kernel_size)) * g[..., None]
        grad_padded = _scatter_windows(hot.astype(g.dtype), padded.shape[2], kernel_size, stride)
        return (grad_padded[:, :, padding : padded.shape[2] - padding],)

    return _emit("maxpool1d", [x], np.ascontiguousarray(data), backward)


def global_avg_pool1d(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise DimensionError(f"global_avg_pool1d expects (N, C, L), got {x.shape}")
    length = x.shape[2]
    return _emit(
        "global_avg_pool1d",
        [x],
        x.data.mean(axis=2),
        lambda g: (np.repeat(g[:, :, None] / length, length, axis=2),),
    )


# ---------------------------------------------------------------------------
# Normalisation and regularisation
# ---------------------------------------------------------------------------

def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalisation of (N, C) or (N, C, L) input.

    Training mode normalises with the biased batch variance over every axis
    but the channel axis and folds the batch statistics into the running
    buffers in place (the running variance is the unbiased estimate).
    """
    if x.data.ndim not in (2, 3) or x.shape[1] != gamma.shape[0]:
        raise DimensionError(f"batchnorm1d: input {x.shape} does not match {gamma.shape[0]} channels")
    axes = (0,) if x.data.ndim == 2 else (0, 2)
    bshape = (1, -1) if x.data.ndim == 2 else (1, -1, 1)
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)

    if not training:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv_std.reshape(bshape)
        data = (xhat * g_ + b_).astype(x.dtype)

        def backward_eval(g: np.ndarray):
            return g * g_ * inv_std.reshape(bshape), (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return _emit("batchnorm1d", [x, gamma, beta], data, backward_eval)

    if x.shape[0] < 2:
        raise ArgumentError("batchnorm1d in training mode needs a batch of at least 2")
    count = x.data.size // x.shape[1]
    mean = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    data = xhat * g_ + b_
    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    running_var *= 1.0 - momentum
    running_var += momentum * var * count / (count - 1)

    def backward(g: np.ndarray):
        gxhat = g * g_
        sum_g = gxhat.sum(axis=axes).reshape(bshape)
        sum_gx = (gxhat * xhat).sum(axis=axes).reshape(bshape)
        grad_x = inv_std.reshape(bshape) / count * (count * gxhat - sum_g - xhat * sum_gx)
        return grad_x, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _emit("batchnorm1d", [x, gamma, beta], data, backward)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ArgumentError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    rng = rng or np.random.default_rng()
    mask = ((rng.random(x.shape) >= p) / (1.0 - p)).astype(x.dtype)
    return _emit("dropout", [x], x.data * mask, lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# Softmax and losses
# ---------------------------------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return _emit("softmax", [x], y, lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy expects (N, K) logits, got {logits.shape}")
    y = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if y.shape != (n,):
        raise DimensionError(f"{y.shape[0]} labels for {n} logit rows")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ArgumentError(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    lse = logsumexp(logits.data, axis=1)
    loss = np.mean(lse - logits.data[rows, y])

    def backward(g: np.ndarray):
        grad = np.exp(logits.data - lse[:, None])
        grad[rows, y] -= 1.0
        return (grad * (g / n),)

    return _emit("cross_entropy", [logits], np.asarray(loss, dtype=logits.dtype), backward)


def has_valid_triplet(labels: Sequence[int]) -> bool:
    """True when some sample has both a same-class partner and another class."""
    y = np.asarray(labels)
    _, counts = np.unique(y, return_counts=True)
    return counts.size >= 2 and bool(np.any(counts >= 2))


def triplet_margin_loss(embeddings: Tensor, labels: Sequence[int], margin: float = 1.0) -> Tensor:
    """Batch-hard triplet loss with Euclidean distances.

    For every anchor with a same-class partner, take its farthest positive
    and nearest negative; the loss is the mean of
    ``max(0, d_pos - d_neg + margin)`` over those anchors. Distances of zero
    contribute a zero subgradient.
    """
    if embeddings.data.ndim != 2:
        raise DimensionError(f"triplet_margin_loss expects (N, E) embeddings, got {embeddings.shape}")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (embeddings.shape[0],):
        raise DimensionError(f"{y.shape[0]} labels for {embeddings.shape[0]} embeddings")
    if not has_valid_triplet(y):
        raise ArgumentError("triplet loss needs two classes and two samples of some class in the batch")
    e = embeddings.data
    diff = e[:, None, :] - e[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=2))
    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)
    other = y[:, None] != y[None, :]
    anchors = np.flatnonzero(same.any(axis=1) & other.any(axis=1))
    pos = np.argmax(np.where(same, dist, -np.inf), axis=1)[anchors]
    neg = np.argmin(np.where(other, dist, np.inf), axis=1)[anchors]
    d_pos = dist[anchors, pos]
    d_neg = dist[anchors, neg]
    hinge = d_pos - d_neg + margin
    active = hinge > 0
    loss = np.sum(np.where(active, hinge, 0.0)) / anchors.size

    def backward(g: np.ndarray):
        grad = np.zeros_like(e)
        scale_ = g / anchors.size
        for a, p, q, dp, dn, on in zip(anchors, pos, neg, d_pos, d_neg, active):
            if not on:
                continue
            if dp > 0:
                u = (e[a] - e[p]) / dp * scale_
                grad[a] += u
                grad[p] -= u
            if dn > 0:
                v = (e[a] - e[q]) / dn * scale_
                grad[a] -= v
                grad[q] += v
        return (grad,)

    return _emit("triplet_margin_loss", [embeddings], np.asarray(loss, dtype=e.dtype), backward)


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor:
    """Single-layer LSTM over ``x`` (N, T, D); returns the final hidden state (N, H).

    Gate rows of the ``4H`` weights are ordered input, forget, candidate,
    output. The initial hidden and cell states are zero.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"lstm expects (N, T, D) input, got {x.shape}")
    n, steps, d = x.shape
    if steps < 1:
        raise ArgumentError("lstm needs at least one time step")
    hidden = w_hh.shape[1]
    if w_ih.shape != (4 * hidden, d) or w_hh.shape != (4 * hidden, hidden) or bias.shape != (4 * hidden,):
        raise DimensionError(
            f"lstm weights {w_ih.shape}, {w_hh.shape}, {bias.shape} do not fit input dim {d}, hidden {hidden}"
        )
    dtype = x.dtype
    h = np.zeros((n, hidden), dtype=dtype)
    c = np.zeros((n, hidden), dtype=dtype)
    saved = []
    for t in range(steps):
        a = x.data[:, t, :] @ w_ih.data.T + h @ w_hh.data.T + bias.data
        i = expit(a[:, :hidden])
        f = expit(a[:, hidden : 2 * hidden])
        g = np.tanh(a[:, 2 * hidden : 3 * hidden])
        o = expit(a[:, 3 * hidden :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        saved.append((h_prev, c_prev, i, f, g, o, tanh_c))

    def backward(grad_h: np.ndarray):
        grad_x = np.zeros_like(x.data)
        grad_w_ih = np.zeros_like(w_ih.data)
        grad_w_hh = np.zeros_like(w_hh.data)
        grad_b = np.zeros_like(bias.data)
        dh = grad_h
        dc = np.zeros_like(grad_h)
        for t in reversed(range(steps)):
            h_prev, c_prev, i, f, g, o, tanh_c = saved[t]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c**2)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            da = np.concatenate(
                [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g**2), do * o * (1.0 - o)], axis=1
            )
            grad_w_ih += da.T @ x.data[:, t, :]
            grad_w_hh += da.T @ h_prev
            grad_b += da.sum(axis=0)
            grad_x[:, t, :] = da @ w_ih.data
            dh = da @ w_hh.data
            dc = dc * f
        return grad_x, grad_w_ih, grad_w_hh, grad_b

    return _emit("lstm", [x, w_ih, w_hh, bias], h, backward)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """Largest elementwise relative error between analytic and numeric gradients.

    Non-scalar outputs are reduced with fixed random weights. Numeric
    gradients use central differences; denominators are clamped at 1e-8.
    """
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
    probe = fn(*inputs)
    weights = np.random.default_rng(seed).standard_normal(probe.shape) if probe.data.ndim else None

    def scalar(out: Tensor) -> Tensor:
        return out if weights is None else weighted_sum(out, weights)

    for t in inputs:
        t.grad = None
    with Graph() as graph:
        loss = scalar(fn(*inputs))
        graph.backward(loss)

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + eps
            up = scalar(fn(*inputs)).item()
            flat[idx] = original - eps
            down = scalar(fn(*inputs)).item()
            flat[idx] = original
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[idx]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
