"""Training objective: cross-entropy plus distillation and authentic-embedding
alignment against a frozen teacher.

Teacher outputs enter as constants, so no gradient can reach the teacher.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, HyperparameterError, LabelError
from .netmodel import forward


@dataclass(frozen=True)
class LossWeights:
    ce: float = 1.0
    lwf: float = 1.0
    psa: float = 1.0

    def __post_init__(self):
        for name in ("ce", "lwf", "psa"):
            if getattr(self, name) < 0:
                raise HyperparameterError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")


@dataclass
class LossBreakdown:
    ce: float
    lwf: float
    psa: float
    total: float
    weights: LossWeights
    graph: ad.Tensor | None = field(default=None, repr=False, compare=False)


def _labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {y.shape}")
    if not np.isin(y, (0, 1)).all():
        bad = y[~np.isin(y, (0, 1))][0]
        raise LabelError(f"label {bad!r} outside {{0, 1}}")
    return y.astype(np.intp)


def cross_entropy(logits, y) -> ad.Tensor:
    """Mean negative log-likelihood of the true class."""
    logits = ad.as_tensor(logits)
    labels = _labels(y, logits.shape[0])
    return ad.scale(ad.reduce_mean(ad.pick(ad.log_softmax_rows(logits), labels)), -1.0)


def lwf_loss(new_logits, old_logits, temperature: float = 2.0) -> ad.Tensor:
    """``T^2 * mean_i KL(softmax(old_i / T) || softmax(new_i / T))``."""
    if temperature <= 0:
        raise HyperparameterError(f"temperature must be > 0, got {temperature}")
    new_logits = ad.as_tensor(new_logits)
    old = np.asarray(old_logits.data if isinstance(old_logits, ad.Tensor) else old_logits, dtype=np.float64)
    if old.shape != new_logits.shape:
        raise DimensionError(f"lwf: shapes {new_logits.shape} and {old.shape} differ")
    inv_t = 1.0 / temperature
    log_p_old = ad.log_softmax_rows(ad.constant(old * inv_t)).data
    log_p_new = ad.log_softmax_rows(ad.scale(new_logits, inv_t))
    gap = ad.sub(ad.constant(log_p_old), log_p_new)
    kl_rows = ad.sum_rows(ad.mul(ad.constant(np.exp(log_p_old)), gap))
    return ad.scale(ad.reduce_mean(kl_rows), temperature * temperature)


def psa_loss(new_emb, old_emb, y, normalize: bool = False) -> ad.Tensor:
    """Mean squared embedding drift over authentic (label 0) rows; 0 if none."""
    new_emb = ad.as_tensor(new_emb)
    old = np.asarray(old_emb.data if isinstance(old_emb, ad.Tensor) else old_emb, dtype=np.float64)
    if old.shape != new_emb.shape:
        raise DimensionError(f"psa: shapes {new_emb.shape} and {old.shape} differ")
    labels = _labels(y, new_emb.shape[0])
    real = np.flatnonzero(labels == 0)
    if real.size == 0:
        return ad.constant(np.array(0.0))
    new_real = ad.take_rows(new_emb, real)
    old_real = old[real]
    if normalize:
        new_real = ad.l2_normalize_rows(new_real)
        old_real = ad.l2_normalize_rows(ad.constant(old_real)).data
    return ad.reduce_mean(ad.squared_l2_rows(ad.sub(new_real, ad.constant(old_real))))


def dfwf_total(ce, lwf=None, psa=None, weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Weighted sum of the three terms.

    ``lwf`` and ``psa`` are ``None`` when there is no teacher (first task); the
    total is then exactly the cross-entropy term scaled by its weight.
    """
    if not isinstance(weights, LossWeights):
        weights = LossWeights(*weights)
    ce = ad.as_tensor(ce)
    total = ad.scale(ce, weights.ce)
    lwf_v = psa_v = 0.0
    if lwf is not None:
        lwf = ad.as_tensor(lwf)
        total = ad.add(total, ad.scale(lwf, weights.lwf))
        lwf_v = lwf.item()
    if psa is not None:
        psa = ad.as_tensor(psa)
        total = ad.add(total, ad.scale(psa, weights.psa))
        psa_v = psa.item()
    return LossBreakdown(ce.item(), lwf_v, psa_v, total.item(), weights, graph=total)


def dfwf_loss(model, X, y, teacher=None, weights: LossWeights = LossWeights(),
              temperature: float = 2.0, psa_normalize: bool = False) -> LossBreakdown:
    """Full objective for one batch: forward the student and, if given, the teacher."""
    emb, logits = forward(model, X)
    ce = cross_entropy(logits, y)
    if teacher is None:
        return dfwf_total(ce, weights=weights)
    old_emb, old_logits = forward(teacher, X)
    lwf = lwf_loss(logits, old_logits, temperature)
    psa = psa_loss(emb, old_emb, y, normalize=psa_normalize)
    return dfwf_total(ce, lwf, psa, weights)


def dfwf_grad_check(seed: int = 0, n: int = 8, eps: float = 1e-6,
                    widths=(3, 3, 3, 2), split_index: int = 2) -> tuple[float, int]:
    """Finite-difference check of the full objective on a tiny split model.

    Returns ``(max relative error, number of parameters checked)``. The
    teacher is an independently initialized copy so every term is nonzero.
    Biases are nudged off zero: with zero biases a row whose hidden units are
    all inactive puts the next layer exactly on the relu kink.
    """
    from .autodiff import grad_check
    from .netmodel import ModelSpec, init_model, snapshot

    spec = ModelSpec.from_widths(list(widths), split_index)
    rng = np.random.default_rng(seed)
    student = init_model(spec, seed)
    for name, p in student.params.items():
        if name.endswith("bias"):
            p.data[...] = rng.uniform(0.05, 0.25, size=p.shape)
    teacher = snapshot(init_model(spec, seed + 1))
    X = rng.normal(size=(n, spec.input_dim))
    y = np.arange(n) % 2

    def loss():
        return dfwf_loss(student, X, y, teacher).graph

    params = student.parameters()
    return grad_check(loss, params, eps), sum(p.data.size for p in params)
