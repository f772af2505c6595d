"""Central finite differences against the tape's analytic gradients."""

import numpy as np

from flowseq.nn import backward


def max_rel_error(loss_fn, params, eps=1e-5):
    """Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) over all entries.

    ``loss_fn()`` must rebuild the graph from the current parameter data
    and return a scalar Tensor.
    """
    for p in params:
        p.grad = None
    backward(loss_fn())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = float(loss_fn().data)
            flat[i] = keep - eps
            down = float(loss_fn().data)
            flat[i] = keep
            num = (up - down) / (2 * eps)
            ana = g.reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
            worst = max(worst, err)
    return worst
