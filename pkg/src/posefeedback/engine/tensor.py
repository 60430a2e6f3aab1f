"""Dense float64 tensors with define-by-run reverse-mode differentiation."""

import numpy as np

from ..exceptions import NonScalarRoot


class Tensor:
    """A node in the computation graph.

    ``parents`` are the input nodes; ``backward_fn`` maps the upstream gradient
    to one gradient per parent (``None`` for parents that need none). Leaves
    created with ``requires_grad=True`` are parameters and accumulate ``grad``.
    """

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, op="leaf", requires_grad=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(op={self.op}, shape={self.shape})"


def parameter(value, name=None):
    return Tensor(value, requires_grad=True, name=name)


def constant(value):
    return value if isinstance(value, Tensor) else Tensor(value, requires_grad=False)


def _topological_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root, params=None):
    """Accumulate d root / d leaf into every reachable parameter's ``grad``.

    Returns the list of gradients for ``params`` (zeros for parameters the
    root does not depend on) when ``params`` is given.
    """
    if root.value.size != 1:
        raise NonScalarRoot(f"backward needs a scalar root, got shape {root.shape}")
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(_topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
