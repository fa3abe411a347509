"""Dense 2-D float64 tensors with tape-based reverse-mode differentiation.

Shapes are (rows, cols); row vectors are written 1 x d. Every operation is a
method on a ``Tape``, which records the backward rule in creation order.
``Tape.backward(loss)`` walks the records in strict reverse order and fills
``.grad`` on every participating tensor that has ``requires_grad`` set.

A tape and the tensors it produced belong to a single thread of execution.
Build a fresh tape per forward pass; ``backward`` may run once per tape
unless ``reset`` is called.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not line up."""


class TapeError(RuntimeError):
    """Tape misuse: repeated backward, non-scalar loss, foreign loss tensor."""


class Tensor:
    """A (rows, cols) float64 array plus the gradient buffer filled by backward."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise DimensionError(f"tensors are rank 1 or 2, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def param(data) -> Tensor:
    """Shorthand for a trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g)  # own the buffer; g may be a view
    else:
        t.grad += g


class Tape:
    """Recorder for one forward pass.

    ``check_finite=True`` validates every op output, raising
    ``FloatingPointError`` on NaN/Inf (used by the gradient-check suite).
    """

    def __init__(self, check_finite: bool = False):
        self.check_finite = check_finite
        self._records: list[tuple[Callable[[np.ndarray], None],
                                  tuple[Tensor, ...], Tensor]] = []
        self._spent = False

    def reset(self) -> None:
        """Clear all records so the tape can serve a new forward pass."""
        self._records.clear()
        self._spent = False

    def _emit(self, out_data: np.ndarray, inputs: Sequence[Tensor],
              backward_fn: Callable[[np.ndarray], None]) -> Tensor:
        out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
        if self.check_finite and not np.all(np.isfinite(out.data)):
            raise FloatingPointError("non-finite values produced in forward pass")
        if out.requires_grad:
            self._records.append((backward_fn, tuple(inputs), out))
        return out

    # -- binary / elementwise ------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul inner dims differ: {a.shape} x {b.shape}")

        def back(g: np.ndarray) -> None:
            _acc(a, g @ b.data.T)
            _acc(b, a.data.T @ g)

        return self._emit(a.data @ b.data, (a, b), back)

    def matmul_t(self, a: Tensor, b: Tensor) -> Tensor:
        """a @ b.T without materializing the transpose on the tape."""
        if a.shape[1] != b.shape[1]:
            raise DimensionError(
                f"matmul_t column dims differ: {a.shape} x {b.shape}")

        def back(g: np.ndarray) -> None:
            _acc(a, g @ b.data)
            _acc(b, g.T @ a.data)

        return self._emit(a.data @ b.data.T, (a, b), back)

    def transpose(self, a: Tensor) -> Tensor:
        def back(g: np.ndarray) -> None:
            _acc(a, g.T)

        return self._emit(a.data.T.copy(), (a,), back)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")

        def back(g: np.ndarray) -> None:
            _acc(a, g)
            _acc(b, g)

        return self._emit(a.data + b.data, (a, b), back)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise DimensionError(f"sub shapes differ: {a.shape} vs {b.shape}")

        def back(g: np.ndarray) -> None:
            _acc(a, g)
            _acc(b, -g)

        return self._emit(a.data - b.data, (a, b), back)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise DimensionError(f"mul shapes differ: {a.shape} vs {b.shape}")

        def back(g: np.ndarray) -> None:
            _acc(a, g * b.data)
            _acc(b, g * a.data)

        return self._emit(a.data * b.data, (a, b), back)

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)

        def back(g: np.ndarray) -> None:
            _acc(a, g * c)

        return self._emit(a.data * c, (a,), back)

    def affine(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        """Row vector x (1 x q) through W (r x q) plus bias b (1 x r)."""
        if x.shape[0] != 1 or b.shape[0] != 1:
            raise DimensionError("affine expects row vectors for x and b")
        if w.shape[1] != x.shape[1] or w.shape[0] != b.shape[1]:
            raise DimensionError(
                f"affine shapes inconsistent: x {x.shape}, W {w.shape}, b {b.shape}")

        def back(g: np.ndarray) -> None:
            _acc(x, g @ w.data)
            _acc(w, g.T @ x.data)
            _acc(b, g)

        return self._emit(x.data @ w.data.T + b.data, (x, w, b), back)

    # -- nonlinearities --------------------------------------------------------

    def tanh(self, a: Tensor) -> Tensor:
        out_data = np.tanh(a.data)

        def back(g: np.ndarray) -> None:
            _acc(a, g * (1.0 - out_data * out_data))

        return self._emit(out_data, (a,), back)

    def sigmoid(self, a: Tensor) -> Tensor:
        out_data = np.exp(-np.logaddexp(0.0, -a.data))

        def back(g: np.ndarray) -> None:
            _acc(a, g * out_data * (1.0 - out_data))

        return self._emit(out_data, (a,), back)

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0.0

        def back(g: np.ndarray) -> None:
            _acc(a, g * mask)

        return self._emit(a.data * mask, (a,), back)

    def softmax_rows(self, a: Tensor) -> Tensor:
        """Row-wise softmax with per-row max subtraction for stability."""
        shifted = a.data - a.data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=1, keepdims=True)

        def back(g: np.ndarray) -> None:
            dot = np.sum(g * out_data, axis=1, keepdims=True)
            _acc(a, out_data * (g - dot))

        return self._emit(out_data, (a,), back)

    def layer_norm(self, a: Tensor, gain: Tensor, bias: Tensor,
                   eps: float = 1e-5) -> Tensor:
        """Per-row standardization followed by an elementwise affine."""
        p, q = a.shape
        if q < 2:
            raise DimensionError(f"layer_norm needs >=2 columns, got {q}")
        if gain.shape != (1, q) or bias.shape != (1, q):
            raise DimensionError("layer_norm gain/bias must be 1 x cols")
        mu = a.data.mean(axis=1, keepdims=True)
        var = a.data.var(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (a.data - mu) * inv_std
        out_data = xhat * gain.data + bias.data

        def back(g: np.ndarray) -> None:
            _acc(gain, (g * xhat).sum(axis=0, keepdims=True))
            _acc(bias, g.sum(axis=0, keepdims=True))
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            _acc(a, inv_std * (dxhat - m1 - xhat * m2))

        return self._emit(out_data, (a, gain, bias), back)

    # -- layout ops --------------------------------------------------------------

    def stack_rows(self, vectors: Sequence[Tensor]) -> Tensor:
        if not vectors:
            raise DimensionError("stack_rows needs at least one vector")
        width = vectors[0].shape[1]
        for v in vectors:
            if v.shape != (1, width):
                raise DimensionError(
                    f"stack_rows expects 1 x {width} rows, got {v.shape}")
        vecs = list(vectors)

        def back(g: np.ndarray) -> None:
            for i, v in enumerate(vecs):
                _acc(v, g[i:i + 1, :])

        return self._emit(np.concatenate([v.data for v in vecs], axis=0),
                          vecs, back)

    def vec_rows(self, a: Tensor) -> Tensor:
        """Flatten row-major: the rows of a (p x q) matrix laid end to end."""
        p, q = a.shape

        def back(g: np.ndarray) -> None:
            _acc(a, g.reshape(p, q))

        return self._emit(a.data.reshape(1, p * q), (a,), back)

    def concat_cols(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise DimensionError("concat_cols needs at least one tensor")
        rows = parts[0].shape[0]
        for t in parts:
            if t.shape[0] != rows:
                raise DimensionError("concat_cols operands must share row count")
        items = list(parts)
        widths = [t.shape[1] for t in items]

        def back(g: np.ndarray) -> None:
            at = 0
            for t, w in zip(items, widths):
                _acc(t, g[:, at:at + w])
                at += w

        return self._emit(np.concatenate([t.data for t in items], axis=1),
                          items, back)

    # -- reductions / lookup ------------------------------------------------------

    def sum_all(self, a: Tensor) -> Tensor:
        shape = a.shape

        def back(g: np.ndarray) -> None:
            _acc(a, np.full(shape, g[0, 0]))

        return self._emit(np.array([[a.data.sum()]]), (a,), back)

    def mean_rows(self, a: Tensor) -> Tensor:
        p, q = a.shape

        def back(g: np.ndarray) -> None:
            _acc(a, np.broadcast_to(g / p, (p, q)))

        return self._emit(a.data.mean(axis=0, keepdims=True), (a,), back)

    def gather_rows(self, table: Tensor, indices: Sequence[int]) -> Tensor:
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 1 or idx.size == 0:
            raise DimensionError("gather_rows needs a non-empty 1-D index list")
        if idx.min() < 0 or idx.max() >= table.shape[0]:
            raise DimensionError("gather_rows index out of range")

        def back(g: np.ndarray) -> None:
            if table.requires_grad:
                if table.grad is None:
                    table.grad = np.zeros_like(table.data)
                np.add.at(table.grad, idx, g)

        return self._emit(table.data[idx], (table,), back)

    # -- reverse pass ----------------------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Fill grads of everything reachable from ``loss``.

        Tensors on the tape that do not influence the loss end with zero
        grads. Contributions accumulate into existing ``.grad`` buffers, so
        training code zeroes parameter grads between steps.
        """
        if self._spent:
            raise TapeError("backward already ran on this tape (reset first)")
        if loss.shape != (1, 1):
            raise TapeError(f"loss must be a 1x1 tensor, got {loss.shape}")
        if not any(out is loss for _, _, out in self._records):
            raise TapeError("loss tensor was not produced on this tape")
        self._spent = True
        loss.grad = np.ones((1, 1))
        for back, _, out in reversed(self._records):
            g = out.grad
            if g is not None:
                back(g)
        # tensors recorded but untouched by the walk report zero gradients
        for _, inputs, out in self._records:
            if out.grad is None:
                out.grad = np.zeros_like(out.data)
            for t in inputs:
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)
