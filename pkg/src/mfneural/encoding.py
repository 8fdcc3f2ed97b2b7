"""Learned coordinate maps from the HF input space to each LF input space.

Both learned modes start as the selector ``P = I_{k_L, k_H}`` (the identity
when dimensions agree). The nonlinear map is residual, ``T(x) = P x + M(x)``,
with the output layer of the tanh MLP ``M`` zeroed so that ``M == 0`` at
initialisation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .networks import NetworkSpec, Params, forward, init_mlp

MODES = ("none", "linear", "nonlinear")


class EncoderConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderSpec:
    mode: str
    hf_dim: int
    lf_dim: int
    hidden: tuple[int, ...] = (16,)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.mode not in MODES:
            raise EncoderConfigError(f"unknown encoding mode {self.mode!r}; expected one of {MODES}")
        if self.hf_dim < 1 or self.lf_dim < 1:
            raise EncoderConfigError("encoder dimensions must be positive")
        if self.mode == "none" and self.hf_dim != self.lf_dim:
            raise EncoderConfigError(
                f"encoding 'none' needs equal input dimensions, got HF {self.hf_dim} vs LF {self.lf_dim}"
            )
        if self.mode == "nonlinear" and not self.hidden:
            raise EncoderConfigError("nonlinear encoding needs at least one hidden layer")

    @property
    def body_spec(self) -> NetworkSpec:
        return NetworkSpec("mlp", self.hf_dim, self.lf_dim, self.hidden)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "hf_dim": self.hf_dim, "lf_dim": self.lf_dim, "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(**d)


def selector(lf_dim: int, hf_dim: int) -> np.ndarray:
    """``I_{k_L, k_H}``: ones on the main diagonal, zeros elsewhere."""
    return np.eye(lf_dim, hf_dim)


def init_encoder(spec: EncoderSpec, rng: np.random.Generator) -> Params:
    if spec.mode == "none":
        return {}
    if spec.mode == "linear":
        return {
            "W": Tensor(selector(spec.lf_dim, spec.hf_dim), requires_grad=True),
            "b": Tensor(np.zeros(spec.lf_dim), requires_grad=True),
        }
    body = init_mlp(spec.body_spec, rng)
    last = spec.body_spec.n_layers - 1
    body[f"W{last}"].data[...] = 0.0
    body[f"b{last}"].data[...] = 0.0
    return body


def encode(spec: EncoderSpec, params: Params, x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[1] != spec.hf_dim:
        raise ad.ShapeError(f"encoder expects input (batch, {spec.hf_dim}), got {x.shape}")
    if spec.mode == "none":
        return x
    if spec.mode == "linear":
        return ad.linear(x, params["W"], params["b"])
    skip = ad.matmul(x, Tensor(selector(spec.lf_dim, spec.hf_dim)), transpose_b=True)
    return ad.add(skip, forward(spec.body_spec, params, x))


def encode_array(spec: EncoderSpec, params: Params, x: np.ndarray) -> np.ndarray:
    """Plain-array evaluation (no tape)."""
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    return encode(spec, frozen, Tensor(np.atleast_2d(x))).data
