"""Central-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.

    ``f`` maps a tensor to a scalar tensor.  Numeric derivatives are central
    differences with step ``eps``; run this in float64.
    """
    x0 = np.array(x.data, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    backward(f(leaf), inputs=[leaf])
    analytic = leaf.grad

    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    out = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(Tensor(x0.copy())).item()
            flat[i] = orig - eps
            fm = f(Tensor(x0.copy())).item()
            flat[i] = orig
            out[i] = (fp - fm) / (2 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def primitive_errors(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Gradient-check every primitive on random float64 operands.

    Each primitive output is contracted with a fixed random cotangent so the
    scalar probe exercises all output coordinates.  Multi-input primitives
    are checked with respect to each input; the reported error is the max.
    Inputs to ``relu`` stay at least 0.1 away from its kink.
    """
    from . import ops

    rng = np.random.default_rng(seed)

    def probe(op, *operands):
        """Max error of ``sum(op(*operands) * R)`` over each operand in turn."""
        out_shape = op(*[Tensor(o) for o in operands]).shape
        r = Tensor(rng.normal(size=out_shape))
        worst = 0.0
        for i in range(len(operands)):
            def f(t, i=i):
                args = [Tensor(o) for o in operands]
                args[i] = t
                return ops.sum(ops.mul(op(*args), r))
            worst = max(worst, grad_check(f, Tensor(operands[i]), eps))
        return worst

    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    errors = {
        "add": probe(ops.add, a, rng.normal(size=(4,))),
        "add_scalar": probe(lambda x: ops.add_scalar(x, 1.7), a),
        "neg": probe(ops.neg, a),
        "scale": probe(lambda x: ops.scale(x, -2.3), a),
        "mul": probe(ops.mul, a, b),
        "matmul": probe(ops.matmul, a, rng.normal(size=(4, 5))),
        "transpose": probe(ops.transpose, a),
        "relu": probe(ops.relu, _away_from_zero(rng, (3, 4))),
        "sigmoid": probe(ops.sigmoid, 3 * a),
        "sum": probe(lambda x: ops.sum(x, axis=1), a),
        "mean": probe(ops.mean, a),
        "log_sum_exp": probe(ops.log_sum_exp, 3 * a),
        "l2_normalize": probe(ops.l2_normalize, a),
        "concat": probe(lambda x, y: ops.concat([x, y], axis=-1), a, rng.normal(size=(3, 2))),
        "mean_pool_spatial": probe(ops.mean_pool_spatial, rng.normal(size=(2, 3, 4, 5))),
        "conv2d": probe(
            lambda x, w, bias: ops.conv2d(x, w, bias, stride=2, padding=1),
            rng.normal(size=(2, 2, 6, 5)),
            rng.normal(size=(3, 2, 3, 3)),
            rng.normal(size=(3,)),
        ),
    }
    return errors
