"""Training objective: data misfit, weight regularisation and encoding penalties."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .box import HyperRectangle
from .mfmodel import HFPrediction, MultiFidelityModel, ParameterGroups

__all__ = [
    "HyperRectangle",
    "LossWeights",
    "interval_score",
    "loss_enc",
    "loss_err",
    "loss_reg",
    "total_loss",
]

LAMBDA_CHOICES = (0.0, 1e-5, 1e-3, 1.0)


@dataclass(frozen=True)
class LossWeights:
    lam_lf: float = 0.0       # LF surrogate weights
    lam_nl: float = 0.0       # HF nonlinear block weights
    lam_lin: float = 0.0      # linear-vs-full discrepancy
    lam_domain: float = 0.0   # interval score of encoded points

    def __post_init__(self):
        for name in ("lam_lf", "lam_nl", "lam_lin", "lam_domain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return {"lam_lf": self.lam_lf, "lam_nl": self.lam_nl, "lam_lin": self.lam_lin, "lam_domain": self.lam_domain}


def _mse(pred: Tensor, target: np.ndarray) -> Tensor:
    return ad.mean(ad.square(ad.sub(pred, Tensor(np.asarray(target).reshape(pred.shape)))))


def loss_err(
    model: MultiFidelityModel,
    hf_x: np.ndarray,
    hf_y: np.ndarray,
    lf_batches: dict[int, tuple[np.ndarray, np.ndarray]] | None = None,
    *,
    prediction: HFPrediction | None = None,
) -> Tensor:
    """Mean squared HF misfit plus the mean squared misfit of every learned LF surrogate."""
    if len(hf_x) == 0:
        raise ValueError("loss_err needs a nonempty HF batch")
    lf_batches = lf_batches or {}
    pred = prediction if prediction is not None else model.predict_hf(hf_x)
    total = _mse(pred.y, hf_y)
    for i, src in enumerate(model.sources):
        if src.is_exact:
            continue
        if i not in lf_batches:
            raise ValueError(f"missing LF batch for learned source {i}")
        x_l, y_l = lf_batches[i]
        total = ad.add(total, _mse(model.predict_lf(i, x_l), y_l))
    return total


def loss_reg(groups: ParameterGroups, weights: LossWeights) -> Tensor:
    """``lam_nl * ||theta_nl||_2 + lam_lf * sum_i ||theta_L_i||_2`` (norms, not squared)."""
    total = Tensor(np.array(0.0))
    if weights.lam_nl and groups.nl:
        total = ad.add(total, ad.scale(ad.l2norm(list(groups.nl.values())), weights.lam_nl))
    if weights.lam_lf:
        for params in groups.lf.values():
            if params:
                total = ad.add(total, ad.scale(ad.l2norm(list(params.values())), weights.lam_lf))
    return total


def interval_score(points: Tensor | np.ndarray, box: HyperRectangle) -> Tensor:
    """Average l1 distance of a point cloud from a box (zero inside it)."""
    points = ad.as_tensor(points)
    if points.data.ndim != 2 or points.shape[1] != box.dim:
        raise ad.ShapeError(f"interval_score: points {points.shape} do not match a {box.dim}-D box")
    m = points.shape[0]
    if m == 0:
        return Tensor(np.array(0.0))
    below = ad.relu(ad.sub(Tensor(np.broadcast_to(box.lo, points.shape)), points))
    above = ad.relu(ad.sub(points, Tensor(np.broadcast_to(box.hi, points.shape))))
    return ad.scale(ad.sum(ad.add(below, above)), 1.0 / m)


def loss_enc(
    model: MultiFidelityModel,
    hf_x: np.ndarray,
    lf_boxes: Sequence[HyperRectangle] | None,
    weights: LossWeights,
    *,
    prediction: HFPrediction | None = None,
) -> Tensor:
    """``lam_lin * ||y_lin - y||^2 + lam_domain * sum_i IS(T_i(X_H); box_i)``.

    The discrepancy is summed over the HF batch (unlike the data misfit,
    which is averaged). ``y_lin - y`` equals minus the nonlinear output.
    """
    if not model.encoded:
        raise ValueError("loss_enc applies to models with at least one active encoder")
    if lf_boxes is None or len(lf_boxes) != model.n_sources:
        raise ValueError("loss_enc needs one LF sample box per source")
    pred = prediction if prediction is not None else model.predict_hf(hf_x)
    total = Tensor(np.array(0.0))
    if weights.lam_lin:
        total = ad.add(total, ad.scale(ad.sum(ad.square(ad.sub(pred.y_lin, pred.y))), weights.lam_lin))
    if weights.lam_domain:
        for enc, u, box in zip(model.encoders, pred.encoded, lf_boxes):
            if enc.mode != "none":
                total = ad.add(total, ad.scale(interval_score(u, box), weights.lam_domain))
    return total


def total_loss(
    model: MultiFidelityModel,
    hf_x: np.ndarray,
    hf_y: np.ndarray,
    lf_batches: dict[int, tuple[np.ndarray, np.ndarray]],
    weights: LossWeights,
    lf_boxes: Sequence[HyperRectangle] | None = None,
) -> Tensor:
    pred = model.predict_hf(hf_x)
    loss = ad.add(loss_err(model, hf_x, hf_y, lf_batches, prediction=pred), loss_reg(model.trainable_parameters(), weights))
    if model.encoded:
        loss = ad.add(loss, loss_enc(model, hf_x, lf_boxes, weights, prediction=pred))
    return loss
