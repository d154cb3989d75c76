"""Every loss on one toy batch, so the knobs are easy to see side by side.

The batch is two-class with hand-picked target probabilities; each loss is
built as a graph over a log-probability leaf and evaluated once.
"""

import numpy as np

from calprune.autodiff import Graph
from calprune.losses import (AuxSpec, LossSpec, aux_huber_loss, dca_aux_loss,
                             flsd_gamma, flsd_loss, focal_loss, mdca_aux_loss,
                             nll_loss, total_loss)

# rows are [p_target, 1 - p_target]; the first sample is badly underconfident
probs = np.array([[0.10, 0.90], [0.55, 0.45], [0.95, 0.05], [0.70, 0.30]])
log_probs = np.log(probs)
targets = np.array([0, 0, 0, 0])


def value(build, **kw):
    g = Graph()
    node = build(g, g.leaf("lp"), targets, **kw)
    return float(g.forward({"lp": log_probs}, root=node))


print("nll:                ", value(nll_loss))
for gamma in (0.0, 1.0, 3.0):
    print(f"focal gamma={gamma}:     ", value(focal_loss, gamma=gamma))

# the sample-dependent schedule bumps gamma to 5 when the target prob is low
print("flsd per-sample gammas:", [flsd_gamma(p) for p in probs[:, 0]])
print("flsd:               ", value(flsd_loss))

# auxiliary calibration terms penalise the batch confidence-accuracy gap
print("aux huber (a=0.005):", value(aux_huber_loss, alpha=0.005))
print("aux dca:            ", value(dca_aux_loss))
print("aux mdca:           ", value(mdca_aux_loss, n_classes=2))

spec = LossSpec(kind="flsd", aux=AuxSpec(kind="huber", alpha=0.005, weight=10.0))
print("total flsd + 10*huber:", value(total_loss, spec=spec, n_classes=2))
