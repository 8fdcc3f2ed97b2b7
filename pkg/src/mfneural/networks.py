"""MLP, Siren and KAN sub-networks with their initialisation schemes.

Parameters live in plain ``dict[str, Tensor]`` collections. Weight matrices are
stored (out, in); KAN spline coefficients are stored (out, in * n_basis) with
the basis index varying fastest, matching the layout of :func:`bspline_basis`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Params = Dict[str, Tensor]

KINDS = ("mlp", "siren", "kan")


@dataclass(frozen=True)
class NetworkSpec:
    kind: str
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = ()
    use_bias_on_output: bool = True
    siren_omega0: float = 30.0
    siren_c: float = 6.0
    kan_grid_size: int = 5
    kan_spline_order: int = 3
    kan_grid_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "kan_grid_range", tuple(float(v) for v in self.kan_grid_range))
        if self.kind not in KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"layer widths must be positive: {self.widths}")
        if self.siren_omega0 <= 0 or self.siren_c <= 0:
            raise ValueError("siren_omega0 and siren_c must be positive")
        if self.kan_grid_size < 1 or self.kan_spline_order < 1:
            raise ValueError("kan_grid_size and kan_spline_order must be positive")
        lo, hi = self.kan_grid_range
        if not lo < hi:
            raise ValueError(f"empty KAN grid range {self.kan_grid_range}")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.output_dim]

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    @property
    def n_basis(self) -> int:
        return self.kan_grid_size + self.kan_spline_order

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["kan_grid_range"] = list(self.kan_grid_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


def _uniform(rng: np.random.Generator, bound: float, shape) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _layer_streams(rng: np.random.Generator, spec: NetworkSpec) -> list[np.random.Generator]:
    # one child stream per layer: networks that differ only in input width
    # draw identical parameters for every layer after the first
    return rng.spawn(spec.n_layers)


def _has_bias(spec: NetworkSpec, layer: int) -> bool:
    return layer < spec.n_layers - 1 or spec.use_bias_on_output


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def siren_bounds(spec: NetworkSpec) -> list[float]:
    """Uniform half-widths for every Siren layer (weights and biases share them)."""
    w = spec.widths
    first = 1.0 / w[0]
    rest = [math.sqrt(spec.siren_c / (spec.siren_omega0**2 * w[l])) for l in range(1, spec.n_layers)]
    return [first, *rest]


def init_mlp(spec: NetworkSpec, rng: np.random.Generator) -> Params:
    if spec.kind != "mlp":
        raise ValueError(f"init_mlp called with kind={spec.kind!r}")
    w = spec.widths
    params: Params = {}
    for l, r in enumerate(_layer_streams(rng, spec)):
        params[f"W{l}"] = _uniform(r, xavier_bound(w[l], w[l + 1]), (w[l + 1], w[l]))
        if _has_bias(spec, l):
            params[f"b{l}"] = _zeros(w[l + 1])
    return params


def init_siren(spec: NetworkSpec, rng: np.random.Generator) -> Params:
    if spec.kind != "siren":
        raise ValueError(f"init_siren called with kind={spec.kind!r}")
    w = spec.widths
    params: Params = {}
    for l, (bound, r) in enumerate(zip(siren_bounds(spec), _layer_streams(rng, spec))):
        params[f"W{l}"] = _uniform(r, bound, (w[l + 1], w[l]))
        if _has_bias(spec, l):
            params[f"b{l}"] = _uniform(r, bound, w[l + 1])
    return params


# KAN spline coefficients start small so the SiLU path dominates early training.
KAN_SPLINE_INIT_SCALE = 0.1


def init_kan(spec: NetworkSpec, rng: np.random.Generator) -> Params:
    if spec.kind != "kan":
        raise ValueError(f"init_kan called with kind={spec.kind!r}")
    w = spec.widths
    nb = spec.n_basis
    params: Params = {}
    for l, r in enumerate(_layer_streams(rng, spec)):
        n_in, n_out = w[l], w[l + 1]
        params[f"base{l}"] = _uniform(r, math.sqrt(6.0 / n_in), (n_out, n_in))
        bound = KAN_SPLINE_INIT_SCALE * math.sqrt(6.0 / (n_in * nb))
        params[f"spline{l}"] = _uniform(r, bound, (n_out, n_in * nb))
    return params


def init_network(spec: NetworkSpec, rng: np.random.Generator) -> Params:
    return {"mlp": init_mlp, "siren": init_siren, "kan": init_kan}[spec.kind](spec, rng)


# ------------------------------------------------------------- B-splines

def kan_grid(grid_size: int, order: int, grid_range=(-1.0, 1.0)) -> np.ndarray:
    """Uniform knot vector over ``grid_range`` extended by ``order`` knots per side."""
    lo, hi = grid_range
    h = (hi - lo) / grid_size
    return lo + h * np.arange(-order, grid_size + order + 1, dtype=np.float64)


def _bspline_values(x: np.ndarray, knots: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Cox-de Boor recursion. Returns bases (..., n_basis) and their x-derivatives."""
    x = x[..., None]
    b = ((x >= knots[:-1]) & (x < knots[1:])).astype(np.float64)
    deriv = np.zeros_like(b)
    for p in range(1, order + 1):
        left_den = knots[p:-1] - knots[: -p - 1]
        right_den = knots[p + 1 :] - knots[1:-p]
        lower = b
        b = (x - knots[: -p - 1]) / left_den * lower[..., :-1] + (knots[p + 1 :] - x) / right_den * lower[..., 1:]
        if p == order:
            deriv = p * (lower[..., :-1] / left_den - lower[..., 1:] / right_den)
    return b, deriv


def bspline_basis(x: Tensor, grid_size: int, order: int, grid_range=(-1.0, 1.0)) -> Tensor:
    """Evaluate all B-spline bases of every input column.

    ``x`` is (batch, n_in); the result is (batch, n_in * (grid_size + order)).
    Inputs outside ``grid_range`` are clamped for the lookup, so the bases are
    constant (zero derivative) there.
    """
    if x.data.ndim != 2:
        raise ad.ShapeError(f"bspline_basis expects a 2-D input, got {x.shape}")
    lo, hi = grid_range
    knots = kan_grid(grid_size, order, grid_range)
    xc = np.clip(x.data, lo, hi)
    vals, dvals = _bspline_values(xc, knots, order)
    inside = ((x.data >= lo) & (x.data <= hi))[..., None]
    dvals = dvals * inside
    batch, n_in = x.shape
    nb = grid_size + order
    out = vals.reshape(batch, n_in * nb)

    def _bw(g):
        x._accumulate((g.reshape(batch, n_in, nb) * dvals).sum(axis=-1))

    return ad._node(out, (x,), _bw, "bspline")


# --------------------------------------------------------------- forward

def _check_input(spec: NetworkSpec, x: Tensor) -> None:
    if x.data.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ad.ShapeError(f"{spec.kind} expects input of shape (batch, {spec.input_dim}), got {x.shape}")


def forward(spec: NetworkSpec, params: Params, x: Tensor) -> Tensor:
    _check_input(spec, x)
    last = spec.n_layers - 1
    h = x
    if spec.kind == "mlp":
        for l in range(spec.n_layers):
            h = ad.linear(h, params[f"W{l}"], params.get(f"b{l}"))
            if l < last:
                h = ad.tanh(h)
        return h
    if spec.kind == "siren":
        if last == 0:
            return ad.linear(h, params["W0"], params.get("b0"))
        h = ad.scale(ad.matmul(h, params["W0"], transpose_b=True), spec.siren_omega0)
        if "b0" in params:
            h = ad.add(h, params["b0"])
        h = ad.sin(h)
        for l in range(1, spec.n_layers):
            h = ad.linear(h, params[f"W{l}"], params.get(f"b{l}"))
            if l < last:
                h = ad.sin(h)
        return h
    for l in range(spec.n_layers):
        base = ad.matmul(ad.silu(h), params[f"base{l}"], transpose_b=True)
        bases = bspline_basis(h, spec.kan_grid_size, spec.kan_spline_order, spec.kan_grid_range)
        h = ad.add(base, ad.matmul(bases, params[f"spline{l}"], transpose_b=True))
    return h


@dataclass
class Network:
    """A sub-network: its spec plus a parameter collection."""

    spec: NetworkSpec
    params: Params = field(default_factory=dict)

    @classmethod
    def create(cls, spec: NetworkSpec, rng: np.random.Generator) -> "Network":
        return cls(spec, init_network(spec, rng))

    def __call__(self, x: Tensor) -> Tensor:
        return forward(self.spec, self.params, x)


# ------------------------------------------------------------ persistence

def save_params(path: str | Path, params: Params, extra: dict | None = None) -> None:
    """Write ``params`` as ``<path>.json`` (manifest) + ``<path>.npz`` (payload)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "mfneural-params/1",
        "arrays": {k: {"shape": list(v.shape), "dtype": "float64"} for k, v in params.items()},
    }
    if extra:
        manifest["meta"] = extra
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    np.savez(path.with_suffix(".npz"), **{k: v.data for k, v in params.items()})


def load_params(path: str | Path) -> tuple[Params, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    with np.load(path.with_suffix(".npz")) as payload:
        params = {}
        for name, info in manifest["arrays"].items():
            arr = payload[name]
            if list(arr.shape) != info["shape"]:
                raise ValueError(f"array {name!r} has shape {arr.shape}, manifest says {info['shape']}")
            params[name] = Tensor(arr, requires_grad=True)
    return params, manifest.get("meta", {})
