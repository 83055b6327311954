"""Finite-difference check of the analytic gradients.

Central differences are only meaningful where the loss is smooth on
``[theta - h, theta + h]``. ReLU and max-pool make the loss piecewise smooth,
so for each probe the activation pattern (ReLU masks, pool argmax) is compared
between the two evaluations. When it changes, the interval straddles a kink
and the probe is redone on a smaller step, falling back to a one-sided
difference on the side whose pattern matches the unperturbed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gsnorm.features import SampleBatch
from gsnorm.model import layers as L
from gsnorm.model.network import ModelParams, forward, loss_and_gradients

_PATTERN_KEYS = ("conv1.relu", "conv2.relu", "rec.conv.relu", "fuse.relu")


def _loss(params: ModelParams, batch: SampleBatch, masks: dict):
    _, cache = forward(params, batch, training=True, masks=masks, dropout=0.3 if masks else 0.0)
    loss = L.cross_entropy(cache["logits"], batch.labels.astype(np.int64))
    pattern = [cache[k] for k in _PATTERN_KEYS if k in cache]
    if "pool" in cache:
        pattern.append(cache["pool"][0])
    return loss, pattern


def _same(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def relative_error(analytic: float, numeric: float, floor: float = 1e-7) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


@dataclass
class GradCheckReport:
    checked: int = 0
    failures: list = field(default_factory=list)  # (tensor, index, analytic, numeric, rel)
    kinks: int = 0  # probes whose interval crossed an activation-pattern change
    worst: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def check_gradients(
    params: ModelParams,
    batch: SampleBatch,
    masks: dict,
    step: float = 1e-5,
    tol: float = 1e-4,
    names=None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences for every trainable scalar.

    ``params`` should be float64. Dropout ``masks`` are held fixed so the loss
    is a deterministic function of the parameters; batch-norm uses batch
    statistics (training mode), and its gradient flows through them.
    """
    if params.dtype != np.float64:
        raise ValueError("gradient check needs float64 parameters")
    _, grads, _ = loss_and_gradients(params, batch, masks=masks)
    _, base = _loss(params, batch, masks)
    report = GradCheckReport()
    for name in names or params.trainable():
        t, g = params.tensors[name], grads[name]
        for i in range(t.size):
            old = t.flat[i]
            t.flat[i] = old + step
            lp, pp = _loss(params, batch, masks)
            t.flat[i] = old - step
            lm, pm = _loss(params, batch, masks)
            t.flat[i] = old
            num = (lp - lm) / (2 * step)
            if not (_same(pp, base) and _same(pm, base)):
                report.kinks += 1
                num = _kink_probe(params, batch, masks, t, i, base, step)
            a = float(g.flat[i])
            rel = relative_error(a, num)
            report.checked += 1
            report.worst = max(report.worst, rel)
            if rel > tol:
                report.failures.append((name, i, a, num, rel))
    return report


def _kink_probe(params, batch, masks, t, i, base, step) -> float:
    old = t.flat[i]
    h = step
    for _ in range(4):
        h /= 10
        t.flat[i] = old + h
        lp, pp = _loss(params, batch, masks)
        t.flat[i] = old - h
        lm, pm = _loss(params, batch, masks)
        t.flat[i] = old
        if _same(pp, base) and _same(pm, base):
            return (lp - lm) / (2 * h)
    # still straddling: one-sided difference from the side that stays on the base piece
    l0, _ = _loss(params, batch, masks)
    for sign in (1, -1):
        t.flat[i] = old + sign * step
        l1, p1 = _loss(params, batch, masks)
        t.flat[i] = old
        if _same(p1, base):
            return sign * (l1 - l0) / step
    return float("nan")
