"""Central finite-difference verification of every backward pass.

Each case builds small random float64 instances, scalarizes the layer
output against a fixed random cotangent, and compares the analytic
gradient with (f(x+h) - f(x-h)) / 2h elementwise. The reported error is
||a - n||_inf / max(||a||_inf, ||n||_inf): a global relative error that
is insensitive to individual near-zero partials.

Stochastic layers are checked with their mask held fixed (same RNG key
on every evaluation); ReLU instances are sampled away from 0 and pool
instances with all-distinct window values so the subgradient choice and
argmax routing cannot flip under the probe step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .network import Model
from .rng import SplitRng

H = 1e-5
TOL = 1e-5


def numeric_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Error relative to the gradient's scale, floored at 1e-3 so that
    genuinely-zero gradients (where finite differences only measure
    cancellation noise) compare absolutely instead of dividing noise by
    noise."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-3)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _cot(rng: SplitRng, shape) -> np.ndarray:
    """Random cotangent so the whole Jacobian is exercised."""
    return rng.uniform(shape, -1.0, 1.0)


# ---------------------------------------------------------------------------
# per-layer cases: fn(rng) -> worst relative error for one random instance


def _check_conv(rng: SplitRng, kernel=3, stride=None, pad=None) -> float:
    stride = stride if stride is not None else int(rng.integers(1, 2)[0]) + 1
    pad = pad if pad is not None else int(rng.integers(1, 2)[0])
    x = rng.uniform((2, 3, 6, 6), -1, 1)
    w = rng.uniform((4, 3, kernel, kernel), -1, 1)
    b = rng.uniform(4, -1, 1)
    r = _cot(rng, L.conv2d_forward(x, w, b, stride, pad).shape)

    def loss():
        return float((L.conv2d_forward(x, w, b, stride, pad) * r).sum())

    gx, gw, gb = L.conv2d_backward(x, w, stride, pad, r)
    return max(
        rel_error(gx, numeric_grad(loss, x)),
        rel_error(gw, numeric_grad(loss, w)),
        rel_error(gb, numeric_grad(loss, b)),
    )


def _check_sconv(rng: SplitRng) -> float:
    return _check_conv(rng, kernel=2, stride=2, pad=0)


def _check_dense(rng: SplitRng) -> float:
    x = rng.uniform((4, 7), -1, 1)
    w = rng.uniform((7, 5), -1, 1)
    b = rng.uniform(5, -1, 1)
    r = _cot(rng, (4, 5))

    def loss():
        return float((L.dense_forward(x, w, b) * r).sum())

    gx, gw, gb = L.dense_backward(x, w, r)
    return max(
        rel_error(gx, numeric_grad(loss, x)),
        rel_error(gw, numeric_grad(loss, w)),
        rel_error(gb, numeric_grad(loss, b)),
    )


def _check_relu(rng: SplitRng) -> float:
    # keep every input at least 0.05 away from the kink
    mag = rng.uniform((2, 3, 5, 5), 0.05, 1.0)
    sign = np.where(rng.coin(mag.shape, 0.5), 1.0, -1.0)
    x = mag * sign
    r = _cot(rng, x.shape)

    def loss():
        return float((L.relu_forward(x) * r).sum())

    return rel_error(L.relu_backward(x, r), numeric_grad(loss, x))


def _distinct_image(rng: SplitRng, shape) -> np.ndarray:
    """All-distinct values with pairwise gaps far above the probe step."""
    size = int(np.prod(shape))
    return (rng.permutation(size).astype(np.float64) / size).reshape(shape) + rng.uniform(1, -0.1, 0.1)


def _check_maxpool(rng: SplitRng) -> float:
    x = _distinct_image(rng, (2, 3, 6, 6))
    pooled, argmax = L.maxpool_forward(x)
    r = _cot(rng, pooled.shape)

    def loss():
        return float((L.maxpool_forward(x)[0] * r).sum())

    return rel_error(L.maxpool_backward(argmax, r, x.shape), numeric_grad(loss, x))


def _check_safpool(rng: SplitRng) -> float:
    x = _distinct_image(rng, (2, 3, 6, 6))
    mask_key = int(rng.integers(1, 2**31)[0])
    cfg = L.SafPoolConfig(drop_p=0.5)
    y, mask, argmax = L.saf_pool_forward(x, cfg, L.TRAIN, SplitRng(mask_key))
    r = _cot(rng, y.shape)

    def loss():
        out, _, _ = L.saf_pool_forward(x, cfg, L.TRAIN, SplitRng(mask_key))
        return float((out * r).sum())

    gx = L.saf_pool_backward(mask, argmax, r, x.shape, cfg.drop_p)
    err = rel_error(gx, numeric_grad(loss, x))

    # drop_p = 0 must reduce to plain max-pool in both directions
    y0, mask0, argmax0 = L.saf_pool_forward(x, L.SafPoolConfig(drop_p=0.0), L.TRAIN, SplitRng(mask_key))
    pooled, argmax_mp = L.maxpool_forward(x)
    g0 = L.saf_pool_backward(mask0, argmax0, r, x.shape, 0.0)
    gmp = L.maxpool_backward(argmax_mp, r, x.shape)
    if not (np.array_equal(y0, pooled) and np.array_equal(g0, gmp)):
        return float("inf")
    return err


def _check_dropout(rng: SplitRng) -> float:
    x = rng.uniform((2, 3, 5, 5), -1, 1)
    mask_key = int(rng.integers(1, 2**31)[0])
    p = 0.3
    _, mask = L.dropout_forward(x, p, L.TRAIN, SplitRng(mask_key))
    r = _cot(rng, x.shape)

    def loss():
        out, _ = L.dropout_forward(x, p, L.TRAIN, SplitRng(mask_key))
        return float((out * r).sum())

    return rel_error(L.dropout_backward(r, mask, p), numeric_grad(loss, x))


def _check_batchnorm(rng: SplitRng) -> float:
    x = rng.uniform((4, 3, 5, 5), -1, 1)
    p = L.BatchNormParams(
        gamma=rng.uniform(3, 0.5, 1.5),
        beta=rng.uniform(3, -0.5, 0.5),
        running_mean=np.zeros(3),
        running_var=np.ones(3),
    )
    r = _cot(rng, x.shape)

    def loss():
        fresh = L.BatchNormParams(p.gamma, p.beta, np.zeros(3), np.ones(3))
        y, _ = L.batchnorm_forward(x, fresh, L.TRAIN)
        return float((y * r).sum())

    fresh = L.BatchNormParams(p.gamma, p.beta, np.zeros(3), np.ones(3))
    _, cache = L.batchnorm_forward(x, fresh, L.TRAIN)
    gx, gg, gb = L.batchnorm_backward(r, cache)
    return max(
        rel_error(gx, numeric_grad(loss, x)),
        rel_error(gg, numeric_grad(loss, p.gamma)),
        rel_error(gb, numeric_grad(loss, p.beta)),
    )


def _check_gap(rng: SplitRng) -> float:
    x = rng.uniform((2, 3, 4, 4), -1, 1)
    r = _cot(rng, (2, 3, 1, 1))

    def loss():
        return float((L.global_avgpool_forward(x) * r).sum())

    return rel_error(L.global_avgpool_backward(r, x.shape), numeric_grad(loss, x))


def _check_softmax(rng: SplitRng) -> float:
    logits = rng.uniform((5, 7), -2, 2)
    labels = rng.integers(5, 7)

    def loss():
        return L.softmax_xent(logits, labels)[0]

    _, grad = L.softmax_xent(logits, labels)
    return rel_error(grad, numeric_grad(loss, logits))


def _toy_model(rng: SplitRng) -> Model:
    model = Model(
        [
            L.Conv2d("conv1", 3, 4, 3, 1, 1),
            L.BatchNorm("bn1", 4),
            L.ReLU("relu1"),
            L.SafPool("safpool1", 2, 0.0),
            L.Flatten("flatten1"),
            L.Dense("dense1", 4 * 3 * 3, 10),
        ],
        (3, 6, 6),
    )
    return model.init_params(rng, np.float64)


def _check_model(rng: SplitRng) -> float:
    model = _toy_model(rng.split(0))
    x = rng.uniform((2, 3, 6, 6), -1, 1)
    labels = rng.integers(2, 10)

    def loss():
        model.train()
        return L.softmax_xent(model.forward(x), labels)[0]

    model.train()
    logits = model.forward(x)
    _, grad_logits = L.softmax_xent(logits, labels)
    model.zero_grads()
    grad_x = model.backward(grad_logits)
    worst = rel_error(grad_x, numeric_grad(loss, x))
    for name, value, grad in model.params():
        worst = max(worst, rel_error(grad, numeric_grad(loss, value)))
    return worst


CASES = {
    "conv": _check_conv,
    "sconv": _check_sconv,
    "dense": _check_dense,
    "relu": _check_relu,
    "maxpool": _check_maxpool,
    "safpool": _check_safpool,
    "dropout": _check_dropout,
    "batchnorm": _check_batchnorm,
    "gap": _check_gap,
    "softmax_xent": _check_softmax,
    "model": _check_model,
}


@dataclass(frozen=True)
class CheckResult:
    layer: str
    worst: float
    instances: int
    failed_seed: int | None  # instance index of the first failure

    @property
    def ok(self) -> bool:
        return self.worst < TOL


def run_suite(layers=None, seed: int = 0, instances: int = 20, registry=None) -> list[CheckResult]:
    """Run every case (or the named subset) on `instances` random draws."""
    registry = CASES if registry is None else registry
    if layers:
        unknown = [l for l in layers if l not in registry]
        if unknown:
            raise KeyError(f"unknown layer(s) {unknown}; valid: {', '.join(sorted(registry))}")
        names = [l for l in registry if l in layers]
    else:
        names = list(registry)
    root = SplitRng(seed)
    results = []
    for ci, name in enumerate(names):
        worst = 0.0
        failed = None
        for inst in range(instances):
            err = registry[name](root.split(ci, inst))
            if err > worst:
                worst = err
            if err >= TOL and failed is None:
                failed = inst
        results.append(CheckResult(name, worst, instances, failed))
    return results


def render_results(results) -> str:
    lines = [f"{'layer':<14} {'worst rel err':>14} {'instances':>10}  status"]
    for r in results:
        status = "ok" if r.ok else f"FAIL (instance {r.failed_seed})"
        lines.append(f"{r.layer:<14} {r.worst:>14.3e} {r.instances:>10}  {status}")
    return "\n".join(lines)
