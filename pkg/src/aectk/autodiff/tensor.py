"""Reverse-mode tape: Tensor nodes plus a one-pass backward traversal."""

import numpy as np


class Tensor:
    """N-dimensional float64 array participating in a differentiation graph.

    Leaf tensors created with ``requires_grad=True`` receive ``dLoss/dLeaf``
    in ``.grad`` after ``backward``; repeated backward calls accumulate until
    ``zero_grad`` clears them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents, backward_fn) -> Tensor:
    """Build an interior graph node; the backward closure is dropped when no
    parent needs gradients so dead subgraphs cost nothing on the way back."""
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires,
                  parents=parents if requires else (),
                  backward_fn=backward_fn if requires else None)


def _topo_order(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate gradients from a scalar loss to every requires_grad tensor.

    Each graph node is visited exactly once, in reverse topological order.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("loss is NaN/Inf; aborting backward")
    order = _topo_order(loss)
    pending = {id(loss): np.ones_like(loss.data)}

    def accumulate(node, g):
        if not node.requires_grad:
            return
        key = id(node)
        if key in pending:
            pending[key] = pending[key] + g
        else:
            pending[key] = np.array(g, dtype=np.float64, copy=True)

    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward_fn is not None:
            node._backward_fn(g, accumulate)
