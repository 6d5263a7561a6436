"""A small reverse-mode tape over numpy arrays.

Nodes are appended in execution order, so walking the list backwards is a
valid reverse topological order.  Complex values carry cotangents in the
``dL/dRe + i dL/dIm`` convention.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("value", "grad", "tape", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, tape, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape}, dtype={self.value.dtype})"


class Tape:
    """Records operations for one forward pass.

    With ``enabled=False`` nothing is stored and ops behave as plain numpy
    functions (inference mode).
    """

    def __init__(self, enabled=True):
        self.enabled = enabled
        self.nodes: list[Var] = []
        self.consumed = False

    def leaf(self, value, name=None, requires_grad=True):
        v = Var(np.asarray(value), self, requires_grad=requires_grad and self.enabled, name=name)
        return v

    def const(self, value):
        return Var(np.asarray(value), self)

    def record(self, value, parents, backward_fn):
        needs = self.enabled and any(p.requires_grad for p in parents)
        if not needs:
            return Var(value, self)
        v = Var(value, self, tuple(parents), backward_fn, requires_grad=True)
        self.nodes.append(v)
        return v

    def backward(self, out: Var, cotangent=None):
        """Propagate ``cotangent`` (default 1 for scalars) from ``out`` to every leaf."""
        if self.consumed:
            raise RuntimeError("tape already consumed by a previous backward pass")
        if not self.nodes or out.tape is not self or not out.requires_grad:
            raise RuntimeError("backward called before a differentiable forward pass was recorded")
        if cotangent is None:
            if out.value.size != 1:
                raise ValueError("non-scalar output needs an explicit cotangent")
            cotangent = np.ones_like(out.value)
        out.grad = np.asarray(cotangent, dtype=out.value.dtype)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            grads = node.backward_fn(g)
            for p, pg in zip(node.parents, grads):
                if pg is None or not p.requires_grad:
                    continue
                p.grad = pg if p.grad is None else p.grad + pg
            # intermediates are not needed once propagated
            node.grad = None
            node.backward_fn = None
            node.parents = ()
        # nodes point back at the tape; dropping the list breaks the cycle so
        # intermediates are freed by refcounting instead of waiting for gc
        self.nodes = []
        self.consumed = True


def as_var(x, tape):
    return x if isinstance(x, Var) else tape.const(x)
