"""Random instances for finite-difference checks, one generator per op or loss.

Each case maps a seed to ``(build, arrays)``: ``build(*tensors)`` returns a
scalar tensor, ``arrays`` are the float64 inputs to differentiate.
"""

import numpy as np

from chargrid.engine import (add, batch_norm, concat, conv2d, conv2d_transpose, mul, relu, sigmoid,
                             softmax, spatial_dropout, tsum, weighted_sum)
from chargrid.losses import LossConfig, boxcoord_loss, boxmask_loss, focal_cross_entropy, seg_loss, total_loss
from chargrid.targets import FOREGROUND, IGNORE


def _away_from(x, points, gap=1e-2):
    """Push values at least ``gap`` away from kinks."""
    for p in points:
        near = np.abs(x - p) < gap
        x[near] = p + np.where(x[near] >= p, gap, -gap)
    return x


def _project(rng, shape):
    # random upstream gradient through a fixed weighting
    w = rng.standard_normal(shape)
    return lambda t: weighted_sum(t, w)


def case_add(rng):
    shape = tuple(rng.integers(1, 5, 3))
    proj = _project(rng, shape)
    return (lambda a, b: proj(add(a, b))), [rng.standard_normal(shape), rng.standard_normal(shape)]


def case_mul(rng):
    shape = tuple(rng.integers(1, 5, 3))
    proj = _project(rng, shape)
    c = float(rng.standard_normal())
    return (lambda a, b: proj(mul(mul(a, b), c))), [rng.standard_normal(shape), rng.standard_normal(shape)]


def case_sum(rng):
    shape = tuple(rng.integers(1, 5, 2))
    return (lambda a: mul(tsum(mul(a, a)), 0.5)), [rng.standard_normal(shape)]


def case_relu(rng):
    shape = tuple(rng.integers(1, 6, 3))
    proj = _project(rng, shape)
    return (lambda a: proj(relu(a))), [_away_from(rng.standard_normal(shape), [0.0])]


def case_sigmoid(rng):
    shape = tuple(rng.integers(1, 6, 3))
    proj = _project(rng, shape)
    return (lambda a: proj(sigmoid(a))), [3 * rng.standard_normal(shape)]


def case_softmax(rng):
    shape = tuple(rng.integers(1, 4, 2)) + (int(rng.integers(2, 10)),)
    proj = _project(rng, shape)
    return (lambda a: proj(softmax(a, axis=-1))), [2 * rng.standard_normal(shape)]


def case_concat(rng):
    n, h, w = rng.integers(1, 4, 3)
    ca, cb = rng.integers(1, 5, 2)
    proj = _project(rng, (n, h, w, ca + cb))
    return (lambda a, b: proj(concat([a, b]))), [rng.standard_normal((n, h, w, ca)),
                                                 rng.standard_normal((n, h, w, cb))]


def case_spatial_dropout(rng):
    shape = (int(rng.integers(1, 4)), 3, 3, int(rng.integers(2, 6)))
    proj = _project(rng, shape)
    p = float(rng.uniform(0.1, 0.6))
    seed = int(rng.integers(1 << 30))
    return (lambda a: proj(spatial_dropout(a, p, True, np.random.default_rng(seed)))), \
        [rng.standard_normal(shape)]


def case_batch_norm_train(rng):
    c = int(rng.integers(1, 5))
    shape = (int(rng.integers(2, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 4)), c)
    proj = _project(rng, shape)

    def build(x, g, b):
        return proj(batch_norm(x, g, b, np.zeros(c), np.ones(c), training=True))

    return build, [rng.standard_normal(shape) * 2 + 1, rng.standard_normal(c), rng.standard_normal(c)]


def case_batch_norm_eval(rng):
    c = int(rng.integers(1, 5))
    shape = (2, 3, 3, c)
    proj = _project(rng, shape)
    mean, var = rng.standard_normal(c), rng.uniform(0.5, 2, c)

    def build(x, g, b):
        return proj(batch_norm(x, g, b, mean.copy(), var.copy(), training=False))

    return build, [rng.standard_normal(shape), rng.standard_normal(c), rng.standard_normal(c)]


def case_conv2d(rng):
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    dilation = int(rng.integers(1, 4))
    n, h, w = 1 + int(rng.integers(0, 2)), int(rng.integers(1, 8)), int(rng.integers(1, 8))
    cin, cout = rng.integers(1, 4, 2)
    x = rng.standard_normal((n, h, w, cin))
    kern = rng.standard_normal((k, k, cin, cout))
    oh, ow = -(-h // stride), -(-w // stride)
    proj = _project(rng, (n, oh, ow, cout))
    if rng.random() < 0.5:
        return (lambda a, b: proj(conv2d(a, b, stride=stride, dilation=dilation))), [x, kern]
    bias = rng.standard_normal(cout)
    return (lambda a, b, c: proj(conv2d(a, b, c, stride=stride, dilation=dilation))), [x, kern, bias]


def case_conv2d_transpose(rng):
    k = int(rng.integers(1, 4))
    n, h, w = 1 + int(rng.integers(0, 2)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    cin, cout = rng.integers(1, 4, 2)
    x = rng.standard_normal((n, h, w, cin))
    kern = rng.standard_normal((k, k, cin, cout))
    proj = _project(rng, (n, 2 * h, 2 * w, cout))
    if rng.random() < 0.5:
        return (lambda a, b: proj(conv2d_transpose(a, b))), [x, kern]
    bias = rng.standard_normal(cout)
    return (lambda a, b, c: proj(conv2d_transpose(a, b, c))), [x, kern, bias]


def _loss_cfg(rng, n_classes):
    return LossConfig(gamma=float(rng.choice([0.0, 0.5, 1.0, 2.0, 3.0])),
                      class_weights=list(rng.uniform(0.5, 5, n_classes)),
                      boxmask_weights=list(rng.uniform(0.5, 5, 2)))


def case_focal_ce(rng):
    k = int(rng.integers(2, 7))
    m = int(rng.integers(1, 12))
    labels = rng.integers(0, k, m)
    mask = rng.random(m) < 0.8
    mask[0] = True
    w = rng.uniform(0.5, 3, k)
    gamma = float(rng.choice([0.0, 0.5, 1.0, 2.0, 3.0]))
    return (lambda z: focal_cross_entropy(z, labels, w, gamma, mask=mask)), [2 * rng.standard_normal((m, k))]


def case_seg_loss(rng):
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    cfg = _loss_cfg(rng, 9)
    labels = rng.integers(0, 9, shape)
    return (lambda z: seg_loss(z, labels, cfg)), [2 * rng.standard_normal(shape + (9,))]


def case_boxmask_loss(rng):
    n_a = int(rng.integers(1, 4))
    shape = (1, int(rng.integers(1, 5)), int(rng.integers(1, 5)), n_a)
    cfg = _loss_cfg(rng, 9)
    state = rng.choice([FOREGROUND, 0, IGNORE], size=shape)
    state.flat[0] = FOREGROUND
    return (lambda z: boxmask_loss(z, state, cfg)), [2 * rng.standard_normal(shape[:3] + (2 * n_a,))]


def case_boxcoord_loss(rng):
    n_a = int(rng.integers(1, 4))
    shape = (1, int(rng.integers(1, 5)), int(rng.integers(1, 5)), n_a)
    state = rng.choice([FOREGROUND, 0, IGNORE], size=shape)
    state.flat[0] = FOREGROUND
    delta = float(rng.uniform(0.3, 2))
    target = rng.standard_normal(shape + (4,))
    pred = target + _away_from(2 * rng.standard_normal(shape + (4,)), [-delta, delta])
    return (lambda p: boxcoord_loss(p, target, state, delta)), [pred.reshape(shape[:3] + (4 * n_a,))]


def case_total_loss(rng):
    h, w, n_a = int(rng.integers(1, 4)), int(rng.integers(1, 4)), 2
    cfg = _loss_cfg(rng, 9)
    labels = rng.integers(0, 9, (1, h, w))
    state = rng.choice([FOREGROUND, 0, IGNORE], size=(1, h, w, n_a))
    state.flat[0] = FOREGROUND
    target = rng.standard_normal((1, h, w, n_a, 4))

    def build(zs, zm, zc):
        return total_loss(seg_loss(zs, labels, cfg), boxmask_loss(zm, state, cfg),
                          boxcoord_loss(zc, target, state, cfg.huber_delta))

    zc = target.reshape(1, h, w, 4 * n_a) + _away_from(rng.standard_normal((1, h, w, 4 * n_a)), [-1, 1])
    return build, [rng.standard_normal((1, h, w, 9)), rng.standard_normal((1, h, w, 2 * n_a)), zc]


OPS = {
    "add": case_add, "mul": case_mul, "sum": case_sum, "relu": case_relu, "sigmoid": case_sigmoid,
    "softmax": case_softmax, "concat": case_concat, "spatial_dropout": case_spatial_dropout,
    "batch_norm_train": case_batch_norm_train, "batch_norm_eval": case_batch_norm_eval,
    "conv2d": case_conv2d, "conv2d_transpose": case_conv2d_transpose,
}
LOSSES = {
    "focal_cross_entropy": case_focal_ce, "seg_loss": case_seg_loss, "boxmask_loss": case_boxmask_loss,
    "boxcoord_loss": case_boxcoord_loss, "total_loss": case_total_loss,
}
CASES = {**OPS, **LOSSES}
N_INSTANCES = 20
TOLERANCE = 1e-4


def instance(name, k):
    return CASES[name](np.random.default_rng([k, sorted(CASES).index(name)]))
