"""Multi-fidelity composition: LF sources, coordinate maps and correlation blocks.

All computations run in normalised coordinates (see ``sampling.Normalizers``).
An exact LF source is wrapped so that, seen from the network, it maps
normalised LF inputs to normalised LF outputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .benchmarks import BenchmarkProblem, ModelFunction
from .encoding import EncoderSpec, encode, init_encoder
from .networks import NetworkSpec, Params, forward, init_network, load_params, save_params
from .sampling import Normalizers, UnnormalizedCorrelation, recover_unnormalized_coefficients, stream


@dataclass
class LowFidelitySource:
    """Either an exact closed-form LF function or a learned LF surrogate."""

    input_dim: int
    exact: ModelFunction | None = None
    spec: NetworkSpec | None = None
    params: Params = field(default_factory=dict)
    rng: np.random.Generator | None = None  # noise stream for noisy exact sources

    def __post_init__(self):
        if (self.exact is None) == (self.spec is None):
            raise ValueError("a LF source is either exact or learned, not both/neither")

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    @classmethod
    def exact_source(cls, fn: ModelFunction, rng: np.random.Generator | None = None) -> "LowFidelitySource":
        return cls(fn.dim, exact=fn, rng=rng)

    @classmethod
    def learned_source(cls, spec: NetworkSpec, rng: np.random.Generator) -> "LowFidelitySource":
        if spec.output_dim != 1:
            raise ValueError("LF surrogates have scalar output")
        return cls(spec.input_dim, spec=spec, params=init_network(spec, rng))


class HFPrediction(NamedTuple):
    y: Tensor
    y_lin: Tensor
    y_nl: Tensor
    z: list[Tensor]        # LF predictions composed with their coordinate maps
    encoded: list[Tensor]  # T_i(x), the LF-space coordinates


@dataclass
class ParameterGroups:
    lf: dict[int, Params]
    enc: dict[int, Params]
    lin: Params
    nl: Params

    def all(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, p in self.lf.items():
            out.update({f"lf{i}.{k}": v for k, v in p.items()})
        for i, p in self.enc.items():
            out.update({f"enc{i}.{k}": v for k, v in p.items()})
        out.update({f"lin.{k}": v for k, v in self.lin.items()})
        out.update({f"nl.{k}": v for k, v in self.nl.items()})
        return out


def _exact_lf_node(src: LowFidelitySource, u: Tensor, x_norm, y_norm) -> Tensor:
    """Exact LF function in normalised coordinates, with analytic Jacobian."""
    x_orig = x_norm.inverse(u.data)
    if u.requires_grad and src.exact.grad is not None:
        vals, jac = src.exact.value_and_grad(x_orig, src.rng)
        jac = jac * x_norm.alpha / y_norm.alpha[0]
    else:
        vals = src.exact(x_orig, src.rng)
        jac = np.zeros_like(u.data)
    z = ((vals - y_norm.beta[0]) / y_norm.alpha[0])[:, None]
    return ad.apply_rowwise(u, z, jac, op=f"exact:{src.exact.name}")


@dataclass
class MultiFidelityModel:
    hf_dim: int
    sources: list[LowFidelitySource]
    encoders: list[EncoderSpec]
    enc_params: list[Params]
    lin_params: Params
    nl_spec: NetworkSpec
    nl_params: Params
    normalizers: Normalizers

    def __post_init__(self):
        n = len(self.sources)
        if len(self.encoders) != n or len(self.enc_params) != n:
            raise ValueError("need exactly one encoder per LF source")
        for i, (src, enc) in enumerate(zip(self.sources, self.encoders)):
            if enc.hf_dim != self.hf_dim or enc.lf_dim != src.input_dim:
                raise ValueError(
                    f"encoder {i} maps {enc.hf_dim}->{enc.lf_dim} but model needs {self.hf_dim}->{src.input_dim}"
                )
        if self.nl_spec.input_dim != self.hf_dim + n or self.nl_spec.output_dim != 1:
            raise ValueError("nonlinear block must map (k_H + n) inputs to one output")
        if self.nl_spec.use_bias_on_output:
            raise ValueError("nonlinear correlation block must not carry an output bias")

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def encoded(self) -> bool:
        return any(e.mode != "none" for e in self.encoders)

    # ------------------------------------------------------------ forward
    def _to_lf_coords(self, i: int, x: Tensor) -> Tensor:
        enc = self.encoders[i]
        if enc.mode != "none":
            return encode(enc, self.enc_params[i], x)
        nh, nl = self.normalizers.x_hf, self.normalizers.x_lf[i]
        if np.array_equal(nh.alpha, nl.alpha) and np.array_equal(nh.beta, nl.beta):
            return x
        # identity in original units, expressed between two different normalisations
        return ad.add(ad.mul(x, Tensor(nh.alpha / nl.alpha)), Tensor((nh.beta - nl.beta) / nl.alpha))

    def source_output(self, i: int, u: Tensor) -> Tensor:
        src = self.sources[i]
        if src.is_exact:
            return _exact_lf_node(src, u, self.normalizers.x_lf[i], self.normalizers.y_lf[i])
        return forward(src.spec, src.params, u)

    def predict_hf(self, x: Tensor | np.ndarray) -> HFPrediction:
        x = ad.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.hf_dim:
            raise ad.ShapeError(f"model expects HF inputs (batch, {self.hf_dim}), got {x.shape}")
        encoded = [self._to_lf_coords(i, x) for i in range(self.n_sources)]
        for i, u in enumerate(encoded):
            if u.shape[1] != self.sources[i].input_dim:
                raise ad.ShapeError(f"encoder {i} produced {u.shape[1]} coords, source expects {self.sources[i].input_dim}")
        z = [self.source_output(i, u) for i, u in enumerate(encoded)]
        inp = ad.concat([x, *z])
        y_lin = ad.linear(inp, self.lin_params["W"], self.lin_params["b"])
        y_nl = forward(self.nl_spec, self.nl_params, inp)
        return HFPrediction(ad.add(y_lin, y_nl), y_lin, y_nl, z, encoded)

    def predict_lf(self, i: int, x_lf: Tensor | np.ndarray) -> Tensor:
        if not 0 <= i < self.n_sources:
            raise IndexError(f"LF source index {i} out of range (model has {self.n_sources})")
        src = self.sources[i]
        if src.is_exact:
            raise ValueError(f"LF source {i} is exact; only learned sources are fitted to LF data")
        return forward(src.spec, src.params, ad.as_tensor(x_lf))

    def trainable_parameters(self) -> ParameterGroups:
        return ParameterGroups(
            lf={i: s.params for i, s in enumerate(self.sources) if not s.is_exact},
            enc={i: p for i, p in enumerate(self.enc_params) if p},
            lin=self.lin_params,
            nl=self.nl_params,
        )

    # ---------------------------------------------------- original units
    def predict(self, x: np.ndarray) -> np.ndarray:
        """HF prediction in original units for original-unit inputs."""
        xt = self.normalizers.x_hf.forward(np.atleast_2d(x))
        return self.normalizers.y_hf.inverse(self.predict_hf(xt).y.data[:, 0])

    def components(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Original-unit decomposition for plotting: total, linear, nonlinear, encoded LF."""
        nz = self.normalizers
        xt = nz.x_hf.forward(np.atleast_2d(x))
        p = self.predict_hf(xt)
        a, b = nz.y_hf.alpha[0], nz.y_hf.beta[0]
        out = {
            "y_hat": a * p.y.data[:, 0] + b,
            # the offset is attributed to the linear part
            "y_lin": a * p.y_lin.data[:, 0] + b,
            "y_nl": a * p.y_nl.data[:, 0],
        }
        for i, zi in enumerate(p.z):
            out[f"lf{i}_encoded"] = nz.y_lf[i].inverse(zi.data[:, 0])
        return out

    def encoder_original(self, i: int, x: np.ndarray) -> np.ndarray:
        """``T_i = W_XL^-1 o T~_i o W_XH`` evaluated on original-unit HF inputs."""
        nz = self.normalizers
        xt = Tensor(nz.x_hf.forward(np.atleast_2d(x)))
        return nz.x_lf[i].inverse(self._to_lf_coords(i, xt).data)

    def unnormalized_correlation(self) -> UnnormalizedCorrelation:
        """Linear coefficients and residual of the correlation in original units."""
        W = self.lin_params["W"].data[0]
        B_t, A_t = W[: self.hf_dim], W[self.hf_dim:]
        spec, params = self.nl_spec, {k: Tensor(v.data) for k, v in self.nl_params.items()}

        def delta_tilde(xt, zt):
            inp = np.column_stack([np.atleast_2d(xt), *[np.asarray(z).reshape(len(xt), 1) for z in zt]])
            return forward(spec, params, Tensor(inp)).data[:, 0]

        return recover_unnormalized_coefficients(A_t, B_t, float(self.lin_params["b"].data[0]), self.normalizers, delta_tilde)

    def lf_composed(self, x: np.ndarray) -> list[np.ndarray]:
        """``y_hat_{L_i} o T_i`` in original units at original-unit HF inputs."""
        nz = self.normalizers
        p = self.predict_hf(nz.x_hf.forward(np.atleast_2d(x)))
        return [nz.y_lf[i].inverse(zi.data[:, 0]) for i, zi in enumerate(p.z)]


@dataclass
class SingleFidelityModel:
    spec: NetworkSpec
    params: Params
    normalizers: Normalizers

    def predict_hf(self, x: Tensor | np.ndarray) -> Tensor:
        return forward(self.spec, self.params, ad.as_tensor(x))

    def trainable_parameters(self) -> ParameterGroups:
        return ParameterGroups(lf={}, enc={}, lin={}, nl=self.params)

    def predict(self, x: np.ndarray) -> np.ndarray:
        xt = self.normalizers.x_hf.forward(np.atleast_2d(x))
        return self.normalizers.y_hf.inverse(self.predict_hf(xt).data[:, 0])


# ------------------------------------------------------------- construction

TIERS = {
    1: {"hidden": (16, 16, 16), "exact_lf": True},
    2: {"hidden": (8,), "exact_lf": True},
    3: {"hidden": (8,), "exact_lf": False},
}


def network_spec(kind: str, input_dim: int, hidden: Sequence[int], bias: bool = True, **kw) -> NetworkSpec:
    return NetworkSpec(kind, input_dim, 1, tuple(hidden), use_bias_on_output=bias, **kw)


def build_mf_model(
    problem: BenchmarkProblem,
    kind: str,
    tier: int,
    encoding: str,
    normalizers: Normalizers,
    seed: int,
    *,
    encoder_hidden: Sequence[int] = (16,),
    network_kw: dict | None = None,
) -> MultiFidelityModel:
    """Assemble the MF model for one (architecture, tier, encoding) cell."""
    network_kw = network_kw or {}
    cfg = TIERS[tier]
    n = problem.n_lf
    sources = []
    for i, fn in enumerate(problem.lf):
        if cfg["exact_lf"]:
            sources.append(LowFidelitySource.exact_source(fn, stream(seed, "exact-noise", i)))
        else:
            spec = network_spec(kind, fn.dim, cfg["hidden"], **network_kw)
            sources.append(LowFidelitySource.learned_source(spec, stream(seed, "lf-net", i)))
    encoders = [EncoderSpec(encoding, problem.hf_dim, fn.dim, tuple(encoder_hidden)) for fn in problem.lf]
    enc_params = [init_encoder(e, stream(seed, "encoder", i)) for i, e in enumerate(encoders)]
    lin_spec = NetworkSpec("mlp", problem.hf_dim + n, 1)
    lin = init_network(lin_spec, stream(seed, "linear"))
    nl_spec = network_spec(kind, problem.hf_dim + n, cfg["hidden"], bias=False, **network_kw)
    nl = init_network(nl_spec, stream(seed, "nonlinear"))
    return MultiFidelityModel(
        problem.hf_dim, sources, encoders, enc_params, {"W": lin["W0"], "b": lin["b0"]}, nl_spec, nl, normalizers
    )


def build_sf_model(
    problem: BenchmarkProblem, kind: str, tier: int, normalizers: Normalizers, seed: int, *, network_kw: dict | None = None
) -> SingleFidelityModel:
    """Single-fidelity baseline; shares the nonlinear block's parameter stream."""
    spec = network_spec(kind, problem.hf_dim, TIERS[tier]["hidden"], **(network_kw or {}))
    return SingleFidelityModel(spec, init_network(spec, stream(seed, "nonlinear")), normalizers)


# ---------------------------------------------------------------- archive

def save_model(path: str | Path, model: MultiFidelityModel | SingleFidelityModel, problem_name: str = "") -> Path:
    """Write ``manifest.json`` (topology + normalisers) and ``params.{json,npz}`` under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if isinstance(model, SingleFidelityModel):
        topo = {"type": "single", "spec": model.spec.to_dict()}
        params = {f"nl.{k}": v for k, v in model.params.items()}
    else:
        topo = {
            "type": "multi",
            "hf_dim": model.hf_dim,
            "sources": [
                {"exact": s.exact.name, "input_dim": s.input_dim} if s.is_exact
                else {"spec": s.spec.to_dict(), "input_dim": s.input_dim}
                for s in model.sources
            ],
            "encoders": [e.to_dict() for e in model.encoders],
            "nl_spec": model.nl_spec.to_dict(),
        }
        params = model.trainable_parameters().all()
    manifest = {"format": "mfneural-model/1", "problem": problem_name, "topology": topo,
                "normalizers": model.normalizers.to_dict()}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    save_params(path / "params", params)
    return path


def load_model(path: str | Path, problem: BenchmarkProblem | None = None):
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    flat, _ = load_params(path / "params")
    normalizers = Normalizers.from_dict(manifest["normalizers"])
    topo = manifest["topology"]

    def group(prefix: str) -> Params:
        return {k[len(prefix):]: v for k, v in flat.items() if k.startswith(prefix)}

    if topo["type"] == "single":
        return SingleFidelityModel(NetworkSpec.from_dict(topo["spec"]), group("nl."), normalizers)
    sources = []
    for i, s in enumerate(topo["sources"]):
        if "exact" in s:
            if problem is None:
                raise ValueError("model uses exact LF sources; pass the benchmark problem to reattach them")
            sources.append(LowFidelitySource.exact_source(problem.lf[i]))
        else:
            sources.append(LowFidelitySource(s["input_dim"], spec=NetworkSpec.from_dict(s["spec"]), params=group(f"lf{i}.")))
    encoders = [EncoderSpec.from_dict(e) for e in topo["encoders"]]
    return MultiFidelityModel(
        topo["hf_dim"], sources, encoders, [group(f"enc{i}.") for i in range(len(encoders))],
        group("lin."), NetworkSpec.from_dict(topo["nl_spec"]), group("nl."), normalizers,
    )
