"""A tour of the reverse-mode graph: build, run forward, pull gradients back.

The graph is a re-runnable recipe: leaves are named slots, ops append nodes,
and forward() evaluates the whole thing under whatever bindings you hand it.
"""

import numpy as np

from calprune.autodiff import Graph, grad_check

# f(w) = sum(relu(x @ w)) for a fixed batch x
g = Graph()
x = g.leaf("x", param=False)
w = g.leaf("w")
f = g.sum(g.relu(g.matmul(x, w)))

batch = np.array([[1.0, -2.0], [0.5, 3.0], [-1.0, 1.0]])
weights = np.array([[0.7], [-0.2]])

value = g.forward({"x": batch, "w": weights})
print("forward value:", float(value))

grads = g.backward()
print("dL/dw:\n", grads["w"])

# the finite-difference check is the same oracle the test suite leans on
for result in grad_check(g, {"x": batch, "w": weights}, step=1e-5, tol=1e-4):
    print(f"grad check {result.leaf}: max rel error {result.max_rel_error:.2e} "
          f"-> {'ok' if result.passed else 'BAD'}")

# stop_gradient freezes a branch: d/dx [sg(x) * x] = sg(x), not 2x
g2 = Graph()
x2 = g2.leaf("x")
g2.sum(g2.mul(g2.stop_gradient(x2), x2))
g2.forward({"x": np.array(2.0)})
print("gradient of stop_gradient(x) * x at x=2:", float(g2.backward()["x"]))
