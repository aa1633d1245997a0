"""Dense rank-N tensors with reverse-mode automatic differentiation.

Every differentiable op builds a new :class:`Tensor` that keeps references to
its parents and a closure mapping the output gradient to one gradient per
parent.  :func:`backward` walks the graph in reverse topological order (the
:class:`Tape`) and accumulates gradients into leaves created with
``requires_grad=True``.

Graph nodes are only recorded when at least one input requires a gradient,
so inference on constant inputs with frozen parameters allocates no graph.
There is no module-level switch: a forward pass's tape is the subgraph
reachable from its output, so concurrent passes never share state.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "flops")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Callable | None = None, op: str = "leaf", flops: int = 0):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.flops = flops

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    # operator sugar; implementations live in translk.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, 1.0 / other)
        return ops.div(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable,
              op: str, flops: int = 0) -> Tensor:
    """Wrap an op result; record the graph edge only if a parent needs gradients."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents),
                      backward_fn=backward_fn, op=op, flops=flops)
    return Tensor(data, op=op, flops=flops)


class Tape:
    """Topologically ordered nodes reachable from a root.

    ``nodes[i]``'s parents always appear before index ``i``; replaying the
    tape backwards therefore visits every node after all of its consumers.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.nodes)

    def flops(self, ops: Iterable[str] | None = None) -> int:
        """Total recorded FLOPs, optionally restricted to the named op kinds."""
        wanted = None if ops is None else set(ops)
        return sum(n.flops for n in self.nodes if wanted is None or n.op in wanted)


def backward(loss: Tensor, grad: np.ndarray | None = None) -> Tape:
    """Backpropagate from a scalar ``loss`` into every reachable leaf.

    Leaf gradients are accumulated into ``Tensor.grad`` (callers zero them
    between steps).  Returns the tape that was replayed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad=True")
    tape = Tape.from_root(loss)
    grads: dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype)
    }
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise RuntimeError(
                    f"{node.op}: gradient shape {pg.shape} does not match input shape {p.shape}")
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    return tape


class ParamStore:
    """Named trainable tensors with deterministic iteration order."""

    def __init__(self, named: Iterable[tuple[str, Tensor]] = (), seed: int | None = None):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self.seed = seed
        for name, t in named:
            self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self) -> list[str]:
        return list(self._params)

    def grad(self, name: str) -> np.ndarray:
        t = self._params[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_elements(self) -> int:
        return sum(t.size for t in self._params.values())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state_dict(self, state: dict) -> None:
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, t in self._params.items():
            arr = np.asarray(state[name])
            if arr.size != t.size:
                raise ValueError(f"{name}: expected {t.shape}, got {arr.shape}")
            t.data = arr.reshape(t.shape).astype(t.dtype)


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None,
               floor: float = 1e-8) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``f(*inputs)`` must return a scalar tensor.  The error at a coordinate is
    ``|analytic - fd| / max(|analytic|, |fd|, floor)``; the floor turns the
    test into an absolute one for gradients too small for finite differences
    to resolve (structurally zero ones included).  When ``max_coords`` is
    given, at most that many coordinates per input are sampled with ``rng``.
    """
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("function value is not finite")
    if out.requires_grad:
        backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        else:
            coords = range(flat.size)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(*inputs).data.reshape(-1)[0])
            flat[i] = orig - eps
            fm = float(f(*inputs).data.reshape(-1)[0])
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("function value is not finite under perturbation")
            fd = (fp - fm) / (2.0 * eps)
            an = float(a.reshape(-1)[i])
            err = abs(an - fd) / max(abs(an), abs(fd), floor)
            worst = max(worst, err)
    return worst
