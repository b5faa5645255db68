"""Minimal reverse-mode gradient tape.

The trainer needs a small, fixed set of array operations: affine maps,
a few elementwise nonlinearities, row-wise softmax, index gathers,
weighted blends, reductions, and a straight-through substitution node.
This module records those operations on a tape and replays the chain
rule backwards. It is not a general autodiff system: there is no
broadcasting zoo, no higher-order gradients, and every primitive has a
hand-written vector-Jacobian product that is checked against central
finite differences in the test suite.

Tapes are single-owner: build the graph, call :meth:`Tape.backward`
once (or more; passes are independent and deterministic), then throw
the tape away.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Tape", "Node", "GradReport", "backward", "grad_check", "finite_diff"]


class Node:
    """One recorded value. Created through :class:`Tape` methods only."""

    __slots__ = ("tape", "index", "value", "parents", "vjp", "name")

    def __init__(self, tape, index, value, parents, vjp, name=None):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Node {self.index}{tag} shape={self.value.shape}>"


class Tape:
    """Append-only record of primitive operations.

    Nodes are topologically ordered by construction: every parent was
    appended before its consumers, so one reverse sweep propagates
    gradients to every parameter reachable from the loss.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    # ------------------------------------------------------------- leaves

    def _append(self, value, parents, vjp, name=None):
        value = np.asarray(value)
        for p in parents:
            if p.tape is not self:
                raise ValueError("node belongs to a different tape")
            if p.index >= len(self.nodes):
                raise ValueError("cyclic tape: parent recorded after child")
        node = Node(self, len(self.nodes), value, tuple(parents), vjp, name)
        self.nodes.append(node)
        return node

    def constant(self, value, name=None):
        return self._append(value, (), None, name)

    def param(self, name, value):
        """Declare a trainable leaf; gradients are reported under *name*."""
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        node = self._append(np.asarray(value), (), None, name)
        self.params[name] = node
        return node

    # --------------------------------------------------------- arithmetic

    def add(self, a, b):
        _same_shape(a, b)
        return self._append(a.value + b.value, (a, b), lambda g: (g, g))

    def sub(self, a, b):
        _same_shape(a, b)
        return self._append(a.value - b.value, (a, b), lambda g: (g, -g))

    def mul(self, a, b):
        _same_shape(a, b)
        return self._append(
            a.value * b.value, (a, b), lambda g, av=a.value, bv=b.value: (g * bv, g * av)
        )

    def scale(self, x, factor):
        """Multiply by a plain python scalar."""
        factor = float(factor)
        return self._append(x.value * factor, (x,), lambda g: (g * factor,))

    def scale_rows(self, x, s):
        """Scale each row of ``x`` (n, k) by the matching entry of ``s`` (n,)."""
        if x.value.ndim != 2 or s.value.shape != (x.value.shape[0],):
            raise ValueError("scale_rows expects (n, k) and (n,)")

        def vjp(g, xv=x.value, sv=s.value):
            return g * sv[:, None], (g * xv).sum(axis=1)

        return self._append(x.value * s.value[:, None], (x, s), vjp)

    # ------------------------------------------------------------- linear

    def affine(self, x, w, b=None):
        """Affine map ``concat(x) @ w + b``.

        ``x`` may be a single node or a list of column blocks (nodes or
        plain arrays) that are treated as one concatenated input; ``w``
        rows are split accordingly so no explicit concat node is needed.
        """
        blocks = x if isinstance(x, (list, tuple)) else [x]
        values, node_slots = [], []
        for blk in blocks:
            if isinstance(blk, Node):
                values.append(blk.value)
                node_slots.append(blk)
            else:
                values.append(np.asarray(blk))
                node_slots.append(None)
        widths = [v.shape[1] for v in values]
        if sum(widths) != w.value.shape[0]:
            raise ValueError("affine: input width does not match weight rows")
        offs = np.cumsum([0] + widths)
        out = sum(v @ w.value[offs[i] : offs[i + 1]] for i, v in enumerate(values))
        if b is not None:
            if b.value.shape != (w.value.shape[1],):
                raise ValueError("affine: bias shape mismatch")
            out = out + b.value

        parents = [n for n in node_slots if n is not None] + [w] + ([b] if b is not None else [])

        def vjp(g, values=values, node_slots=node_slots, offs=offs, wv=w.value):
            grads = []
            for i, slot in enumerate(node_slots):
                if slot is not None:
                    grads.append(g @ wv[offs[i] : offs[i + 1]].T)
            dw = np.empty_like(wv)
            for i, v in enumerate(values):
                dw[offs[i] : offs[i + 1]] = v.T @ g
            grads.append(dw)
            if b is not None:
                grads.append(g.sum(axis=0))
            return tuple(grads)

        return self._append(out, parents, vjp)

    # -------------------------------------------------------- elementwise

    def relu(self, x):
        # Gradient at exactly 0 is 0 (strict inequality below).
        mask = x.value > 0
        return self._append(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))

    def sigmoid(self, x):
        out = _sigmoid(x.value)
        return self._append(out, (x,), lambda g: (g * out * (1.0 - out),))

    def exp(self, x):
        out = np.exp(x.value)
        return self._append(out, (x,), lambda g: (g * out,))

    def softmax_rows(self, x):
        """Softmax along the last axis."""
        shifted = x.value - x.value.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)

        def vjp(g):
            dot = (g * out).sum(axis=-1, keepdims=True)
            return (out * (g - dot),)

        return self._append(out, (x,), vjp)

    # ------------------------------------------------- gather / structure

    def gather_rows(self, x, indices):
        """Select rows ``x[indices]``; backward scatter-adds into ``x``."""
        indices = np.asarray(indices)
        if indices.min(initial=0) < 0 or (
            indices.size and indices.max() >= x.value.shape[0]
        ):
            raise IndexError("gather_rows: index out of range")

        def vjp(g, shape=x.value.shape, idx=indices):
            dx = np.zeros(shape, dtype=g.dtype)
            np.add.at(dx, idx, g)
            return (dx,)

        return self._append(x.value[indices], (x,), vjp)

    def slice_cols(self, x, start, stop):
        def vjp(g, shape=x.value.shape):
            dx = np.zeros(shape, dtype=g.dtype)
            dx[..., start:stop] = g
            return (dx,)

        return self._append(x.value[..., start:stop], (x,), vjp)

    def reshape(self, x, shape):
        return self._append(
            x.value.reshape(shape), (x,), lambda g, s=x.value.shape: (g.reshape(s),)
        )

    def weighted_sum(self, weights, x):
        """Blend ``sum_j weights[..., j] * x[..., j, :]`` along the shared axis.

        Used both for d-linear corner interpolation (constant weights,
        learned corners) and for compositing (learned weights).
        """
        wv, xv = weights.value, x.value
        if wv.shape != xv.shape[:-1]:
            raise ValueError("weighted_sum: weights must match x without its last axis")
        out = np.einsum("...j,...jk->...k", wv, xv)

        def vjp(g):
            dw = np.einsum("...k,...jk->...j", g, xv)
            dx = wv[..., None] * g[..., None, :]
            return dw, dx

        return self._append(out, (weights, x), vjp)

    # --------------------------------------------------------- reductions

    def sum_axis(self, x, axis):
        def vjp(g, shape=x.value.shape):
            return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

        return self._append(x.value.sum(axis=axis), (x,), vjp)

    def cumsum_exclusive(self, x, axis):
        """Exclusive running sum: out_i = sum_{j<i} x_j along *axis*."""
        out = _exclusive_cumsum(x.value, axis)

        def vjp(g):
            flipped = np.flip(g, axis=axis)
            return (np.flip(_exclusive_cumsum(flipped, axis), axis=axis),)

        return self._append(out, (x,), vjp)

    def sum_all(self, x):
        def vjp(g, shape=x.value.shape, dt=x.value.dtype):
            return (np.full(shape, g, dtype=dt),)

        return self._append(np.asarray(x.value.sum()), (x,), vjp)

    def mean_all(self, x):
        n = x.value.size

        def vjp(g, shape=x.value.shape, dt=x.value.dtype):
            return (np.full(shape, g / n, dtype=dt),)

        return self._append(np.asarray(x.value.mean()), (x,), vjp)

    # ---------------------------------------------------- straight-through

    def straight_through(self, hard_value, soft):
        """Emit ``hard_value`` forward; route gradients to the soft branch.

        The forward value is the hard array bit-for-bit; backward behaves
        as if the node were the soft branch, so the soft gradient flows
        through unchanged.
        """
        hard_value = np.asarray(hard_value)
        if hard_value.shape != soft.value.shape:
            raise ValueError("straight_through: branch shapes differ")
        return self._append(hard_value, (soft,), lambda g: (g,))

    # ----------------------------------------------------------- backward

    def backward(self, loss):
        """Accumulate gradients from a scalar *loss* node.

        Returns a dict mapping every declared parameter name to its
        gradient array (zeros when the parameter does not reach the
        loss). Repeat calls over the same tape give identical results.
        """
        return backward(self, loss)


def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    if loss.tape is not tape:
        raise ValueError("loss node belongs to a different tape")
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise ValueError("loss must be scalar")

    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.index] = np.ones_like(loss.value)
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads[node.index]
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if grads[parent.index] is None:
                grads[parent.index] = np.zeros_like(parent.value)
            grads[parent.index] = grads[parent.index] + pg

    out = {}
    for name, node in tape.params.items():
        g = grads[node.index]
        out[name] = np.zeros_like(node.value) if g is None else g
    return out


@dataclass
class GradReport:
    """Comparison of tape gradients against central finite differences."""

    eps: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values(), default=0.0)

    def __str__(self):
        rows = [f"  {k}: {v:.3e}" for k, v in sorted(self.per_param.items())]
        return "\n".join([f"grad check (eps={self.eps:g}):"] + rows)


def _rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.abs(a - b) / denom


def _evaluate(build, values):
    tape = Tape()
    params = {k: tape.param(k, v) for k, v in values.items()}
    loss = build(tape, params)
    out = float(loss.value)
    if not np.isfinite(out):
        raise FloatingPointError("function value is not finite at this point")
    return out, tape, loss


def finite_diff(build, point, eps=1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar tape function, per coordinate."""
    point = {k: np.asarray(v, dtype=np.float64) for k, v in point.items()}
    out = {}
    for name, base in point.items():
        fd = np.zeros_like(base)
        flat = base.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi, _, _ = _evaluate(build, point)
            flat[i] = orig - eps
            lo, _, _ = _evaluate(build, point)
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * eps)
        out[name] = fd
    return out


def grad_check(build, point, eps=1e-5) -> GradReport:
    """Check one scalar function's tape gradients against finite differences.

    ``build(tape, params)`` must construct the function on a fresh tape
    from the dict of parameter nodes and return the scalar loss node.
    ``point`` maps parameter names to float64 arrays. Each coordinate of
    each parameter is perturbed by +/- eps and compared to the gradient
    from one backward pass.
    """
    point = {k: np.asarray(v, dtype=np.float64) for k, v in point.items()}
    _, tape, loss = _evaluate(build, point)
    analytic = tape.backward(loss)
    fd = finite_diff(build, point, eps)

    report = GradReport(eps=eps)
    for name in point:
        report.per_param[name] = float(
            _rel_err(analytic[name], fd[name]).max(initial=0.0)
        )
    return report


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _exclusive_cumsum(x, axis):
    out = np.cumsum(x, axis=axis)
    out = np.roll(out, 1, axis=axis)
    sl = [slice(None)] * x.ndim
    sl[axis] = 0
    out[tuple(sl)] = 0.0
    return out


def _same_shape(a, b):
    if a.value.shape != b.value.shape:
        raise ValueError(f"shape mismatch: {a.value.shape} vs {b.value.shape}")
