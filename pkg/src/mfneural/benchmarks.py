"""Closed-form multi-fidelity test problems and the tabulated RD loader.

Every model function maps an ``(n, dim)`` array to ``(n,)`` values and, where
it may be composed with a learned coordinate map, also provides its analytic
``(n, dim)`` gradient.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .box import HyperRectangle

ArrayFn = Callable[[np.ndarray], np.ndarray]

RD_BOX = HyperRectangle((1e-3, 1e-3), (1e-2, 1e-2))


class DomainError(ValueError):
    """A point lies outside the domain box of the function being evaluated."""


@dataclass(frozen=True)
class ModelFunction:
    name: str
    domain: HyperRectangle
    f: ArrayFn
    grad: Optional[ArrayFn] = None
    noise_var: float = 0.0

    @property
    def dim(self) -> int:
        return self.domain.dim

    def noise_factor(self, n: int, rng: np.random.Generator | None) -> np.ndarray:
        """Multiplicative ``N(1, noise_var)`` draw per evaluation point."""
        if self.noise_var == 0.0 or rng is None:
            return np.ones(n)
        return 1.0 + math.sqrt(self.noise_var) * rng.standard_normal(n)

    def __call__(self, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.f(x) * self.noise_factor(len(x), rng)

    def value_and_grad(self, x: np.ndarray, rng: np.random.Generator | None = None):
        """Values and gradient, sharing one noise draw per point."""
        if self.grad is None:
            raise NotImplementedError(f"{self.name} has no analytic gradient")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        xi = self.noise_factor(len(x), rng)
        return self.f(x) * xi, self.grad(x) * xi[:, None]


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    hf: ModelFunction
    lf: tuple[ModelFunction, ...]
    # residual y_H(x) - rhs(x), rhs built from the LF functions; zero when the relation holds
    relation: Optional[ArrayFn] = None
    relation_note: str = ""
    rng_seed: int = 0
    sizes: tuple[int, ...] = (8, 16, 32)
    meta: dict = field(default_factory=dict)

    @property
    def hf_dim(self) -> int:
        return self.hf.dim

    @property
    def n_lf(self) -> int:
        return len(self.lf)

    @property
    def noisy(self) -> bool:
        return self.hf.noise_var > 0 or any(m.noise_var > 0 for m in self.lf)

    def function(self, which) -> ModelFunction:
        if which in ("hf", "H", None):
            return self.hf
        if isinstance(which, (int, np.integer)) and 0 <= which < self.n_lf:
            return self.lf[which]
        raise IndexError(f"{self.name}: no model {which!r} (use 'hf' or 0..{self.n_lf - 1})")


def _check_domain(fn: ModelFunction, points: np.ndarray) -> None:
    lo, hi = fn.domain.lo, fn.domain.hi
    bad = (points < lo) | (points > hi)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DomainError(
            f"{fn.name}: coordinate x{col + 1}={points[row, col]!r} of point {row} "
            f"is outside [{lo[col]}, {hi[col]}]"
        )


def evaluate(problem: BenchmarkProblem, which, points, rng: np.random.Generator | None = None) -> np.ndarray:
    """Evaluate the HF model (``which='hf'``) or LF model ``which=i`` on ``points``.

    Noisy models draw one multiplicative factor per point from ``rng``; when
    ``rng`` is omitted a stream seeded by the problem's ``rng_seed`` is used.
    """
    fn = problem.function(which)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != fn.dim:
        raise ValueError(f"{fn.name} expects {fn.dim} coordinates, got {points.shape[1]}")
    _check_domain(fn, points)
    if rng is None and fn.noise_var > 0:
        rng = np.random.default_rng(problem.rng_seed)
    return fn(points, rng)


# ---------------------------------------------------------------- 1D pieces

UNIT = HyperRectangle((0.0,), (1.0,))
TWO_PI = 2.0 * math.pi
EIGHT_PI = 8.0 * math.pi


def _forrester(x):
    return (6 * x - 2) ** 2 * np.sin(12 * x - 4)


def _forrester_d(x):
    return 12 * (6 * x - 2) * np.sin(12 * x - 4) + 12 * (6 * x - 2) ** 2 * np.cos(12 * x - 4)


def _k1_lf(x):
    return 0.5 * _forrester(x) + 10 * x - 10


def _k1_lf_d(x):
    return 0.5 * _forrester_d(x) + 10


def _step(x, at):
    # indicator of (at, 1]; the jump point takes the left value
    return (x > at).astype(np.float64)


def _sin8(x):
    return np.sin(EIGHT_PI * x)


def _sin8_d(x):
    return EIGHT_PI * np.cos(EIGHT_PI * x)


def _k4_hf(x):
    return x**2 + np.sin(EIGHT_PI * x + math.pi / 10) ** 2


def _col(fn):
    """Lift a scalar 1-D function to the (n, 1) -> (n,) convention."""
    return lambda X: fn(X[:, 0])


def _colgrad(fn):
    return lambda X: fn(X[:, 0])[:, None]


def _fn1(name, f, df=None) -> ModelFunction:
    return ModelFunction(name, UNIT, _col(f), _colgrad(df) if df else None)


def _k1() -> BenchmarkProblem:
    lf = _fn1("K1.lf", _k1_lf, _k1_lf_d)
    hf = _fn1("K1.hf", _forrester)
    return BenchmarkProblem(
        "K1", hf, (lf,),
        relation=lambda X: hf.f(X) - (2 * lf.f(X) - 20 * X[:, 0] + 20),
        relation_note="y_H = 2 y_L - 20 x + 20",
    )


def _k2(lf_step: float, name: str) -> BenchmarkProblem:
    lf = _fn1(
        f"{name}.lf",
        lambda x: 3 * _step(x, lf_step) + _k1_lf(x),
        _k1_lf_d,
    )
    # expanded form: 4*1 + 2*(3*1' + K1_lf) - 20x + 20 = forrester + 4*1 + 6*1'
    hf = _fn1(f"{name}.hf", lambda x: _forrester(x) + 4 * _step(x, 0.5) + 6 * _step(x, lf_step))
    return BenchmarkProblem(
        name, hf, (lf,),
        relation=lambda X: hf.f(X) - (4 * _step(X[:, 0], 0.5) + 2 * lf.f(X) - 20 * X[:, 0] + 20),
        relation_note="y_H = 4 1(0.5,1] + 2 y_L - 20 x + 20",
    )


def _k3() -> BenchmarkProblem:
    lf = _fn1("K3.lf", _sin8, _sin8_d)
    hf = _fn1("K3.hf", lambda x: (x - math.sqrt(2)) * np.sin(EIGHT_PI * x) ** 2)
    return BenchmarkProblem(
        "K3", hf, (lf,),
        relation=lambda X: hf.f(X) - (X[:, 0] - math.sqrt(2)) * lf.f(X) ** 2,
        relation_note="y_H = (x - sqrt 2) y_L^2",
    )


def _k4() -> BenchmarkProblem:
    lf = _fn1("K4.lf", _sin8, _sin8_d)
    hf = _fn1("K4.hf", _k4_hf)
    return BenchmarkProblem(
        "K4", hf, (lf,),
        relation=lambda X: hf.f(X) - (X[:, 0] ** 2 + lf.f(X + 1.0 / 80.0) ** 2),
        relation_note="y_H = x^2 + y_L(x + 1/80)^2, using 8 pi / 80 = pi / 10",
    )


def _k4_multi(name: str, lf1: ModelFunction, lf2: ModelFunction) -> BenchmarkProblem:
    return BenchmarkProblem(name, _fn1(f"{name}.hf", _k4_hf), (lf1, lf2))


def _k4p_pieces(first, first_d, second, second_d):
    def f(x):
        return np.where(x <= 0.5, first(x), second(x))

    def d(x):
        return np.where(x <= 0.5, first_d(x), second_d(x))

    return f, d


def _k4p() -> BenchmarkProblem:
    f1, d1 = _k4p_pieces(_k1_lf, _k1_lf_d, _sin8, _sin8_d)
    f2, d2 = _k4p_pieces(_sin8, _sin8_d, _k1_lf, _k1_lf_d)
    return _k4_multi("K4P", _fn1("K4P.lf1", f1, d1), _fn1("K4P.lf2", f2, d2))


# ---------------------------------------------------------------- 2D / 3D

SQUARE15 = HyperRectangle.cube(-1.5, 1.5, 2)


def _exp_sin_lf(X):
    return np.exp(0.01 * X[:, 0] + 0.99 * X[:, 1])


def _2de_lf(X):
    return _exp_sin_lf(X) + 0.15 * np.sin(3 * math.pi * X[:, 1])


def _2de_lf_d(X):
    e = _exp_sin_lf(X)
    return np.stack([0.01 * e, 0.99 * e + 0.45 * math.pi * np.cos(3 * math.pi * X[:, 1])], axis=1)


def _2de_hf(X):
    return np.exp(0.7 * X[:, 0] + 0.3 * X[:, 1]) + 0.15 * np.sin(3 * math.pi * X[:, 0])


def derived_2de_transform(X: np.ndarray) -> np.ndarray:
    """Linear map ``T(x1, x2) = (-29 x1 + 30 x2, x1)`` with ``y_H = y_L o T`` for 2DE.

    The matrix printed alongside the original problem statement does not
    satisfy this identity; this one does (match the exponent and the sine
    argument coordinate by coordinate).
    """
    X = np.atleast_2d(X)
    return np.stack([-29.0 * X[:, 0] + 30.0 * X[:, 1], X[:, 0]], axis=1)


PRINTED_2DE_MATRIX = np.array([[0.0, 1.5], [1.0 / 30.0, -0.2]])


def _2de() -> BenchmarkProblem:
    lf = ModelFunction("2DE.lf", SQUARE15, _2de_lf, _2de_lf_d)
    hf = ModelFunction("2DE.hf", SQUARE15, _2de_hf)
    return BenchmarkProblem(
        "2DE", hf, (lf,),
        relation=lambda X: hf.f(X) - lf.f(derived_2de_transform(X)),
        relation_note="y_H = y_L o T with T(x1,x2) = (-29 x1 + 30 x2, x1); "
        "the printed matrix [[0, 1.5], [1/30, -0.2]] does not satisfy this identity",
        sizes=(64, 128, 256),
    )


def _2du_lf(X):
    return np.exp(0.01 * X[:, 0] + 0.99 * X[:, 1]) + 0.15 * np.sin(3 * math.pi * X[:, 0])


def _2du_lf_d(X):
    e = np.exp(0.01 * X[:, 0] + 0.99 * X[:, 1])
    return np.stack([0.01 * e + 0.45 * math.pi * np.cos(3 * math.pi * X[:, 0]), 0.99 * e], axis=1)


def _2du_hf(X):
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    return np.exp(0.7 * z + 0.3 * y) + 0.15 * np.sin(TWO_PI * z) + 0.5 * x**3


def _2du() -> BenchmarkProblem:
    lf = ModelFunction("2DU.lf", SQUARE15, _2du_lf, _2du_lf_d)
    hf = ModelFunction("2DU.hf", HyperRectangle.cube(-1.5, 1.5, 3), _2du_hf)
    return BenchmarkProblem("2DU", hf, (lf,), sizes=(64, 128, 256))


# ------------------------------------------------------------------ GJG9

GJG9_BOX = HyperRectangle.cube(-1.0, 1.0, 2)


def gjg_core(i1: int, i2: int) -> tuple[ArrayFn, ArrayFn]:
    """Noiseless polynomial ``f_{i1,i2}`` and its gradient."""

    def f(X):
        x1, x2 = X[:, 0], X[:, 1]
        return (
            (2 + 0.5 * x1 + 0.5 * x2 + 3 * x1 * x2)
            + i1 * (2 * x1**5 + 2 * x2**5)
            + i2 * (x1**2 + x2**2 + 5 * x1**2 * x2**2)
        )

    def d(X):
        x1, x2 = X[:, 0], X[:, 1]
        g1 = 0.5 + 3 * x2 + i1 * 10 * x1**4 + i2 * (2 * x1 + 10 * x1 * x2**2)
        g2 = 0.5 + 3 * x1 + i1 * 10 * x2**4 + i2 * (2 * x2 + 10 * x1**2 * x2)
        return np.stack([g1, g2], axis=1)

    return f, d


GJG9_LF_MODELS = [
    ((0, 0), 1 / 5), ((0, 0), 1 / 10), ((0, 0), 1 / 100),
    ((0, 1), 1 / 5), ((0, 1), 1 / 10), ((0, 1), 1 / 100),
    ((1, 1), 1 / 5), ((1, 1), 1 / 10),
]
GJG9_HF_MODEL = ((1, 1), 1 / 100)


def _gjg9(noise_scale: float = 1.0, seed: int = 9) -> BenchmarkProblem:
    lfs = []
    for k, ((i1, i2), var) in enumerate(GJG9_LF_MODELS, start=1):
        f, d = gjg_core(i1, i2)
        lfs.append(ModelFunction(f"GJG9.lf{k}", GJG9_BOX, f, d, noise_var=var * noise_scale))
    (i1, i2), var = GJG9_HF_MODEL
    f, d = gjg_core(i1, i2)
    hf = ModelFunction("GJG9.hf", GJG9_BOX, f, d, noise_var=var * noise_scale)
    return BenchmarkProblem("GJG9", hf, tuple(lfs), rng_seed=seed, sizes=(64, 128, 256))


# -------------------------------------------------------------------- K5

K5_DIM = 20
K5_BOX = HyperRectangle.cube(-3.0, 3.0, K5_DIM)


def _k5_lf(X):
    a, b = X[:, 1:], X[:, :-1]
    return 0.8 * (X[:, 0] - 1) ** 2 + 0.4 * np.sum((2 * a - b) * (a - 2 * b), axis=1) - 50


def _k5_lf_d(X):
    g = np.zeros_like(X)
    a, b = X[:, 1:], X[:, :-1]
    # d/da (2a-b)(a-2b) = 4a - 5b ; d/db = -5a + 4b
    g[:, 1:] += 0.4 * (4 * a - 5 * b)
    g[:, :-1] += 0.4 * (-5 * a + 4 * b)
    g[:, 0] += 1.6 * (X[:, 0] - 1)
    return g


def _k5_hf(X):
    # equals 1.25 y_L + sum 0.5 x_i x_{i+1} + 62.5 after expansion
    return (X[:, 0] - 1) ** 2 + np.sum((X[:, 1:] - X[:, :-1]) ** 2, axis=1)


def _k5() -> BenchmarkProblem:
    lf = ModelFunction("K5.lf", K5_BOX, _k5_lf, _k5_lf_d)
    hf = ModelFunction("K5.hf", K5_BOX, _k5_hf)
    return BenchmarkProblem(
        "K5", hf, (lf,),
        relation=lambda X: hf.f(X) - (1.25 * lf.f(X) + 0.5 * np.sum(X[:, :-1] * X[:, 1:], axis=1) + 62.5),
        relation_note="y_H = 1.25 y_L + sum 0.5 x_i x_{i+1} + 62.5",
        sizes=(64, 128, 256),
    )


# ------------------------------------------------------------- registry

_REGISTRY: dict[str, Callable[[], BenchmarkProblem]] = {
    "K1": _k1,
    "K2": lambda: _k2(0.5, "K2"),
    "K2-shift": lambda: _k2(0.6, "K2-shift"),
    "K3": _k3,
    "K4": _k4,
    "K4D": lambda: _k4_multi("K4D", _fn1("K4D.lf1", _sin8, _sin8_d), _fn1("K4D.lf2", _sin8, _sin8_d)),
    "K4U": lambda: _k4_multi("K4U", _fn1("K4U.lf1", _sin8, _sin8_d), _fn1("K4U.lf2", _k1_lf, _k1_lf_d)),
    "K4P": _k4p,
    "2DE": _2de,
    "2DU": _2du,
    "GJG9": _gjg9,
    "K5": _k5,
}

PROBLEM_NAMES = tuple(_REGISTRY) + ("RD",)


def make_problem(name: str, *, rd_table: str | Path | None = None, **kwargs) -> BenchmarkProblem:
    """Construct a registered problem by name (case-insensitive).

    ``RD`` needs ``rd_table``; ``GJG9`` accepts ``noise_scale`` and ``seed``.
    """
    key = {k.upper(): k for k in PROBLEM_NAMES}.get(name.upper())
    if key is None:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(PROBLEM_NAMES)}")
    if key == "RD":
        if rd_table is None:
            raise ValueError("problem RD needs a quantity-of-interest table (rd_table)")
        return load_rd_table(rd_table)
    if key == "GJG9":
        return _gjg9(**kwargs)
    return _REGISTRY[key]()


# ------------------------------------------------------------------- RD

class RDTableError(ValueError):
    pass


@dataclass(frozen=True)
class BilinearGrid:
    """Bilinear interpolant of values tabulated on a rectilinear grid."""

    u: np.ndarray
    v: np.ndarray
    values: np.ndarray  # (len(u), len(v))

    def _locate(self, X):
        iu = np.clip(np.searchsorted(self.u, X[:, 0], side="right") - 1, 0, len(self.u) - 2)
        iv = np.clip(np.searchsorted(self.v, X[:, 1], side="right") - 1, 0, len(self.v) - 2)
        hu = self.u[iu + 1] - self.u[iu]
        hv = self.v[iv + 1] - self.v[iv]
        s = (X[:, 0] - self.u[iu]) / hu
        t = (X[:, 1] - self.v[iv]) / hv
        q = self.values
        return s, t, hu, hv, q[iu, iv], q[iu + 1, iv], q[iu, iv + 1], q[iu + 1, iv + 1]

    def __call__(self, X):
        s, t, _, _, q00, q10, q01, q11 = self._locate(X)
        return (1 - s) * (1 - t) * q00 + s * (1 - t) * q10 + (1 - s) * t * q01 + s * t * q11

    def grad(self, X):
        s, t, hu, hv, q00, q10, q01, q11 = self._locate(X)
        du = ((1 - t) * (q10 - q00) + t * (q11 - q01)) / hu
        dv = ((1 - s) * (q01 - q00) + s * (q11 - q10)) / hv
        return np.stack([du, dv], axis=1)


def _grid_from_rows(rows: list[tuple[float, float, float]], label: str) -> BilinearGrid:
    arr = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise RDTableError(f"{label}: table contains NaN or infinite values")
    u = np.unique(arr[:, 0])
    v = np.unique(arr[:, 1])
    if len(u) < 2 or len(v) < 2:
        raise RDTableError(f"{label}: need at least a 2x2 grid of (d_u, d_v) nodes")
    if len(arr) != len(u) * len(v):
        raise RDTableError(f"{label}: {len(arr)} rows do not form a {len(u)}x{len(v)} grid (scattered data)")
    values = np.full((len(u), len(v)), np.nan)
    values[np.searchsorted(u, arr[:, 0]), np.searchsorted(v, arr[:, 1])] = arr[:, 2]
    if np.isnan(values).any():
        raise RDTableError(f"{label}: duplicate or missing grid nodes")
    lo, hi = RD_BOX.lo, RD_BOX.hi
    if u[0] < lo[0] or u[-1] > hi[0] or v[0] < lo[1] or v[-1] > hi[1]:
        raise RDTableError(f"{label}: nodes must lie in [1e-3, 1e-2]^2")
    return BilinearGrid(u, v, values)


def load_rd_table(path: str | Path) -> BenchmarkProblem:
    """Read a reaction-diffusion quantity-of-interest table.

    Accepted layouts: wide ``d_u,d_v,q_hf,q_lf`` or long ``d_u,d_v,q,fidelity``
    with fidelity ``hf``/``lf``. Each fidelity must be tabulated on a full
    rectilinear (d_u, d_v) grid.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = [h.strip().lower() for h in (reader.fieldnames or [])]
            rows = [{k.strip().lower(): (v or "").strip() for k, v in r.items() if k is not None} for r in reader]
    except OSError as exc:
        raise RDTableError(f"cannot read RD table {path}: {exc}") from exc
    hf_rows, lf_rows = [], []
    try:
        if {"d_u", "d_v", "q_hf", "q_lf"} <= set(header):
            for r in rows:
                du, dv = float(r["d_u"]), float(r["d_v"])
                hf_rows.append((du, dv, float(r["q_hf"])))
                lf_rows.append((du, dv, float(r["q_lf"])))
        elif {"d_u", "d_v", "q", "fidelity"} <= set(header):
            for r in rows:
                fid = r["fidelity"].lower()
                if fid not in ("hf", "lf"):
                    raise RDTableError(f"{path}: unknown fidelity label {r['fidelity']!r}")
                (hf_rows if fid == "hf" else lf_rows).append((float(r["d_u"]), float(r["d_v"]), float(r["q"])))
        else:
            raise RDTableError(f"{path}: header {header} matches neither (d_u,d_v,q_hf,q_lf) nor (d_u,d_v,q,fidelity)")
    except (KeyError, TypeError) as exc:
        raise RDTableError(f"{path}: malformed row ({exc})") from exc
    except ValueError as exc:
        if isinstance(exc, RDTableError):
            raise
        raise RDTableError(f"{path}: non-numeric entry ({exc})") from exc
    hf_grid = _grid_from_rows(hf_rows, f"{path} [hf]")
    lf_grid = _grid_from_rows(lf_rows, f"{path} [lf]")
    hf = ModelFunction("RD.hf", RD_BOX, hf_grid, hf_grid.grad)
    lf = ModelFunction("RD.lf", RD_BOX, lf_grid, lf_grid.grad)
    return BenchmarkProblem("RD", hf, (lf,), sizes=(64, 128, 256), meta={"table": str(path)})


def synthetic_rd_values(du: np.ndarray, dv: np.ndarray, fidelity: str) -> np.ndarray:
    """Smooth stand-in for the RD quantity of interest (for tests and CI only).

    It mimics a mean activator level that decays with diffusivity; the LF
    variant adds a mild mesh-like bias. It is not a PDE solution.
    """
    a = (du - 1e-3) / 9e-3
    b = (dv - 1e-3) / 9e-3
    q = -0.2 + 0.15 * np.exp(-1.5 * a) * np.cos(1.2 * b) + 0.05 * a * b
    if fidelity == "lf":
        q = 0.97 * q + 0.004 * np.sin(2.0 * a + b) - 0.002
    return q


def write_synthetic_rd_table(path: str | Path, n_hf: int = 33, n_lf: int = 17) -> Path:
    """Write a long-format synthetic RD table with separate HF and LF grids."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d_u", "d_v", "q", "fidelity"])
        for fid, n in (("hf", n_hf), ("lf", n_lf)):
            nodes = np.linspace(1e-3, 1e-2, n)
            for du in nodes:
                for dv in nodes:
                    q = float(synthetic_rd_values(np.array(du), np.array(dv), fid))
                    w.writerow([repr(float(du)), repr(float(dv)), repr(q), fid])
    return path
