"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A Graph is a re-runnable Wengert list: builder methods append nodes in
topological order, forward() evaluates every node under fresh leaf bindings,
and backward() accumulates adjoints from a scalar root back to the leaves.
Everything is float64; gradient checks at 1e-4 tolerance are unreliable in
32-bit.
"""

from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-12  # floor inside explicit log(); log(0) is undefined


class GraphError(ValueError):
    """Raised when a graph is built or evaluated with incompatible inputs."""


class Node:
    __slots__ = ("op", "inputs", "aux", "name", "is_param", "value", "adjoint", "saved")

    def __init__(self, op, inputs=(), aux=None, name=None, is_param=False):
        self.op = op
        self.inputs = tuple(inputs)
        self.aux = aux
        self.name = name
        self.is_param = is_param
        self.value = None
        self.adjoint = None
        self.saved = None  # per-forward data needed by the adjoint rule

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{tag})"


def _unbroadcast(adj, shape):
    """Sum an adjoint back down to `shape` after numpy broadcasting."""
    for _ in range(adj.ndim - len(shape)):
        adj = adj.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and adj.shape[axis] != 1:
            adj = adj.sum(axis=axis, keepdims=True)
    return adj


class Graph:
    """Re-runnable computation graph; single-writer per instance.

    forward/backward mutate cached node values and must not run concurrently
    on one graph. Distinct graphs are independent.
    """

    def __init__(self):
        self.nodes = []
        self._leaf_names = {}

    def _append(self, node):
        self.nodes.append(node)
        return node

    # ---- leaves and constants -------------------------------------------

    def leaf(self, name, param=True):
        """Declare a named input; `param=True` marks it a trainable parameter."""
        if name in self._leaf_names:
            raise GraphError(f"duplicate leaf name {name!r}")
        node = self._append(Node("leaf", name=name, is_param=param))
        self._leaf_names[name] = node
        return node

    def const(self, value):
        node = self._append(Node("const"))
        node.aux = np.asarray(value, dtype=np.float64)
        return node

    # ---- op builders -----------------------------------------------------

    def matmul(self, a, b):
        return self._append(Node("matmul", (a, b)))

    def add(self, a, b):
        """Elementwise add; broadcasts over leading batch axes (e.g. bias)."""
        return self._append(Node("add", (a, b)))

    def sub(self, a, b):
        return self._append(Node("sub", (a, b)))

    def mul(self, a, b):
        return self._append(Node("mul", (a, b)))

    def relu(self, a):
        return self._append(Node("relu", (a,)))

    def log_softmax(self, a):
        """Log-softmax over the last axis, stabilised by the row max."""
        return self._append(Node("log_softmax", (a,)))

    def exp(self, a):
        return self._append(Node("exp", (a,)))

    def log(self, a):
        return self._append(Node("log", (a,)))

    def pow_const(self, a, exponent):
        """a**exponent with a constant (scalar or per-element) exponent."""
        node = self._append(Node("pow_const", (a,)))
        node.aux = exponent if np.isscalar(exponent) else np.asarray(exponent, dtype=np.float64)
        return node

    def absolute(self, a):
        return self._append(Node("abs", (a,)))

    def gather_rows(self, a, indices):
        """Pick one entry per row of a 2-d array: out[i] = a[i, indices[i]]."""
        node = self._append(Node("gather_rows", (a,)))
        node.aux = np.asarray(indices, dtype=np.int64)
        return node

    def mean(self, a):
        """Mean over the leading (batch) axis."""
        return self._append(Node("mean", (a,)))

    def sum(self, a):
        """Sum of all entries, yielding a scalar."""
        return self._append(Node("sum", (a,)))

    def scale(self, a, factor):
        node = self._append(Node("scale", (a,)))
        node.aux = float(factor)
        return node

    def stop_gradient(self, a):
        """Identity forward; the adjoint is cut to zero."""
        return self._append(Node("stop_gradient", (a,)))

    def huber(self, a, alpha):
        """Huber function of a scalar: x^2/2 inside |x|<=alpha, linear outside."""
        if alpha <= 0:
            raise GraphError(f"huber alpha must be > 0, got {alpha}")
        node = self._append(Node("huber", (a,)))
        node.aux = float(alpha)
        return node

    def row_max(self, a):
        """Max over the last axis of a 2-d array; ties route to the lowest index."""
        return self._append(Node("row_max", (a,)))

    def correct_indicator(self, a, targets):
        """Per-row 0/1 indicator that argmax(a) equals the target label.

        The indicator is piecewise constant, so its adjoint rule is zero.
        """
        node = self._append(Node("correct_indicator", (a,)))
        node.aux = np.asarray(targets, dtype=np.int64)
        return node

    def focal_power(self, a, gamma_below=5.0, gamma_above=3.0, threshold=0.2):
        """a**gamma with gamma chosen per element from the current forward value.

        Input a = 1 - p for a probability p; gamma = gamma_below where
        p < threshold, else gamma_above. The exponent is recomputed on every
        forward pass and carries no gradient of its own.
        """
        node = self._append(Node("focal_power", (a,)))
        node.aux = (float(threshold), float(gamma_below), float(gamma_above))
        return node

    # ---- evaluation -------------------------------------------------------

    def forward(self, bindings, root=None):
        """Evaluate all nodes up to `root` (default: last built) and return its value."""
        unknown = set(bindings) - set(self._leaf_names)
        if unknown:
            raise GraphError(f"unknown leaf name(s) in bindings: {sorted(unknown)}")
        missing = set(self._leaf_names) - set(bindings)
        if missing:
            raise GraphError(f"missing binding(s) for leaf(s): {sorted(missing)}")
        root = root if root is not None else self.nodes[-1]
        stop = self.nodes.index(root)
        for node in self.nodes[: stop + 1]:
            node.value = self._eval(node, bindings)
        return root.value

    def backward(self, root=None):
        """Accumulate adjoints from a scalar root; returns parameter-leaf gradients."""
        root = root if root is not None else self.nodes[-1]
        if root.value is None:
            raise GraphError("backward() before forward()")
        if root.value.shape != ():
            raise GraphError(f"backward root must be scalar, got shape {root.value.shape}")
        stop = self.nodes.index(root)
        active = self.nodes[: stop + 1]
        for node in active:
            node.adjoint = np.zeros_like(node.value)
        root.adjoint = np.ones_like(root.value)
        for node in reversed(active):
            self._accumulate(node)
        return {n.name: n.adjoint.copy() for n in active if n.op == "leaf" and n.is_param}

    # ---- per-op rules ------------------------------------------------------

    def _eval(self, node, bindings):
        op = node.op
        if op == "leaf":
            return np.asarray(bindings[node.name], dtype=np.float64)
        if op == "const":
            return node.aux
        vals = [inp.value for inp in node.inputs]
        if op == "matmul":
            a, b = vals
            if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
                raise GraphError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
            return a @ b
        if op in ("add", "sub", "mul"):
            a, b = vals
            try:
                np.broadcast_shapes(a.shape, b.shape)
            except ValueError:
                raise GraphError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None
            return {"add": np.add, "sub": np.subtract, "mul": np.multiply}[op](a, b)
        if op == "relu":
            return np.maximum(vals[0], 0.0)
        if op == "log_softmax":
            x = vals[0]
            shifted = x - np.max(x, axis=-1, keepdims=True)
            return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
        if op == "exp":
            return np.exp(vals[0])
        if op == "log":
            return np.log(np.maximum(vals[0], LOG_FLOOR))
        if op == "pow_const":
            x = vals[0]
            e = node.aux
            if np.isscalar(e) and e == 0.0:
                return np.ones_like(x)
            return x ** e
        if op == "abs":
            return np.abs(vals[0])
        if op == "gather_rows":
            x = vals[0]
            idx = node.aux
            if x.ndim != 2:
                raise GraphError(f"gather_rows: expected 2-d input, got shape {x.shape}")
            if idx.shape != (x.shape[0],):
                raise GraphError(
                    f"gather_rows: index shape {idx.shape} does not match rows of {x.shape}")
            if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
                raise GraphError(f"gather_rows: index out of range for {x.shape[1]} columns")
            return x[np.arange(x.shape[0]), idx]
        if op == "mean":
            x = vals[0]
            if x.ndim == 0:
                raise GraphError("mean needs an input with a leading axis, got a scalar")
            if x.shape[0] == 0:
                raise GraphError("mean over an empty leading axis")
            return np.mean(x, axis=0)
        if op == "sum":
            return np.asarray(np.sum(vals[0]))
        if op == "scale":
            return node.aux * vals[0]
        if op == "stop_gradient":
            return vals[0]
        if op == "huber":
            x = vals[0]
            if x.shape != ():
                raise GraphError(f"huber expects a scalar, got shape {x.shape}")
            alpha = node.aux
            if abs(x) <= alpha:
                return np.asarray(0.5 * x * x)
            return np.asarray(alpha * (abs(x) - 0.5 * alpha))
        if op == "row_max":
            x = vals[0]
            if x.ndim != 2:
                raise GraphError(f"row_max: expected 2-d input, got shape {x.shape}")
            node.saved = np.argmax(x, axis=1)
            return x[np.arange(x.shape[0]), node.saved]
        if op == "correct_indicator":
            x = vals[0]
            targets = node.aux
            if x.ndim != 2 or targets.shape != (x.shape[0],):
                raise GraphError(
                    f"correct_indicator: logits shape {x.shape} vs targets {targets.shape}")
            return (np.argmax(x, axis=1) == targets).astype(np.float64)
        if op == "focal_power":
            x = vals[0]
            threshold, gamma_below, gamma_above = node.aux
            gamma = np.where(1.0 - x < threshold, gamma_below, gamma_above)
            node.saved = gamma
            return x ** gamma
        raise GraphError(f"unknown op kind {op!r}")

    def _accumulate(self, node):
        adj = node.adjoint
        op = node.op
        if op in ("leaf", "const", "correct_indicator"):
            return
        ins = node.inputs
        if op == "matmul":
            a, b = ins
            a.adjoint += adj @ b.value.T
            b.adjoint += a.value.T @ adj
        elif op == "add":
            ins[0].adjoint += _unbroadcast(adj, ins[0].value.shape)
            ins[1].adjoint += _unbroadcast(adj, ins[1].value.shape)
        elif op == "sub":
            ins[0].adjoint += _unbroadcast(adj, ins[0].value.shape)
            ins[1].adjoint -= _unbroadcast(adj, ins[1].value.shape)
        elif op == "mul":
            ins[0].adjoint += _unbroadcast(adj * ins[1].value, ins[0].value.shape)
            ins[1].adjoint += _unbroadcast(adj * ins[0].value, ins[1].value.shape)
        elif op == "relu":
            ins[0].adjoint += adj * (ins[0].value > 0)
        elif op == "log_softmax":
            soft = np.exp(node.value)
            ins[0].adjoint += adj - soft * np.sum(adj, axis=-1, keepdims=True)
        elif op == "exp":
            ins[0].adjoint += adj * node.value
        elif op == "log":
            x = ins[0].value
            ins[0].adjoint += np.where(x > LOG_FLOOR, adj / np.maximum(x, LOG_FLOOR), 0.0)
        elif op == "pow_const":
            x = ins[0].value
            e = node.aux
            if np.isscalar(e) and e == 0.0:
                return
            ins[0].adjoint += adj * e * x ** (e - 1.0)
        elif op == "abs":
            ins[0].adjoint += adj * np.sign(ins[0].value)
        elif op == "gather_rows":
            grad = np.zeros_like(ins[0].value)
            np.add.at(grad, (np.arange(grad.shape[0]), node.aux), adj)
            ins[0].adjoint += grad
        elif op == "mean":
            n = ins[0].value.shape[0]
            ins[0].adjoint += np.broadcast_to(adj / n, ins[0].value.shape)
        elif op == "sum":
            ins[0].adjoint += np.full_like(ins[0].value, adj)
        elif op == "scale":
            ins[0].adjoint += node.aux * adj
        elif op == "stop_gradient":
            pass
        elif op == "huber":
            x = float(ins[0].value)
            alpha = node.aux
            slope = x if abs(x) <= alpha else alpha * np.sign(x)
            ins[0].adjoint += adj * slope
        elif op == "row_max":
            grad = np.zeros_like(ins[0].value)
            np.add.at(grad, (np.arange(grad.shape[0]), node.saved), adj)
            ins[0].adjoint += grad
        elif op == "focal_power":
            x = ins[0].value
            gamma = node.saved
            ins[0].adjoint += adj * gamma * x ** (gamma - 1.0)
        else:
            raise GraphError(f"unknown op kind {op!r}")


@dataclass
class LeafCheck:
    leaf: str
    max_rel_error: float
    passed: bool


def grad_check(graph, bindings, step=1e-5, tol=1e-4, root=None):
    """Compare analytic gradients against central finite differences.

    Returns one LeafCheck per parameter leaf; never raises on failure. The
    relative error is |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    per coordinate; a leaf passes iff its max relative error is <= tol.
    """
    if step <= 0:
        raise GraphError(f"grad_check step must be > 0, got {step}")
    graph.forward(bindings, root=root)
    analytic = graph.backward(root=root)
    results = []
    for name in analytic:
        base = np.array(bindings[name], dtype=np.float64)
        grads = analytic[name]
        worst = 0.0
        for i in range(base.size):
            perturbed = dict(bindings)
            bumped = base.copy().reshape(-1)
            bumped[i] += step
            perturbed[name] = bumped.reshape(base.shape)
            f_plus = float(graph.forward(perturbed, root=root))
            bumped[i] -= 2 * step
            perturbed[name] = bumped.reshape(base.shape)
            f_minus = float(graph.forward(perturbed, root=root))
            numeric = (f_plus - f_minus) / (2 * step)
            a = grads.reshape(-1)[i]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
        results.append(LeafCheck(name, worst, worst <= tol))
    # leave the graph's cached values consistent with the unperturbed point
    graph.forward(bindings, root=root)
    return results
