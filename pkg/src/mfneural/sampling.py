"""Training/testing designs and affine data normalisation.

Sobol' points come from unscrambled direction numbers (``scipy.stats.qmc``)
with the leading zero point skipped. Repetitions take disjoint, power-of-two
aligned index blocks whose position is drawn from the seed.
"""
from __future__ import annotations

import csv
import itertools
import math
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .benchmarks import BenchmarkProblem, evaluate
from .box import HyperRectangle

MAX_SOBOL_DIM = 32
# range of the seeded block index r; offsets are r * 2^ceil(log2 n)
_BLOCK_RANGE = 1 << 12


def stream(*keys) -> np.random.Generator:
    """Deterministic generator derived from a tuple of ints/strings."""
    words = [k if isinstance(k, (int, np.integer)) else zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(np.random.SeedSequence([int(w) & 0xFFFFFFFF for w in words]))


def sobol_block_start(n: int, seed: int, repetition_index: int) -> int:
    base = int(stream("sobol-block", seed).integers(0, _BLOCK_RANGE))
    return (base + repetition_index) * (1 << max(0, math.ceil(math.log2(n))))


def sobol(n: int, dim: int, seed: int = 0, repetition_index: int = 0, *, offset: int | None = None) -> np.ndarray:
    """``n`` consecutive Sobol' points in ``[0, 1)^dim``.

    Points are taken from indices ``o + 1 .. o + n`` of the unscrambled
    sequence (index 0, the origin, is never used). ``o`` defaults to the
    seeded block start for ``repetition_index``; pass ``offset`` to override.
    """
    if n < 1:
        raise ValueError(f"need at least one point, got n={n}")
    if not 1 <= dim <= MAX_SOBOL_DIM:
        raise ValueError(f"Sobol' direction numbers are provisioned for 1..{MAX_SOBOL_DIM} dims, got {dim}")
    o = sobol_block_start(n, seed, repetition_index) if offset is None else int(offset)
    engine = qmc.Sobol(dim, scramble=False)
    engine.fast_forward(o + 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # balance warning for non power-of-two n
        return engine.random(n)


def corners(domain: HyperRectangle) -> np.ndarray:
    """Boundary points appended to a design.

    1-D: both endpoints; 2-D and 3-D: every corner; higher: the all-lower and
    all-upper corners only.
    """
    lo, hi = domain.lo, domain.hi
    if domain.dim <= 3:
        return np.array([[(hi if b else lo)[i] for i, b in enumerate(bits)]
                         for bits in itertools.product((0, 1), repeat=domain.dim)])
    return np.stack([lo, hi])


def augment_boundary(points: np.ndarray, domain: HyperRectangle) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    extra = [c for c in corners(domain) if not np.any(np.all(points == c, axis=1))]
    return np.vstack([points, *extra]) if extra else points


@dataclass(frozen=True)
class DesignSpec:
    n_hf: int
    lf_ratio: int = 8
    seed: int = 0
    repetition_index: int = 0

    def __post_init__(self):
        if self.n_hf < 1 or self.lf_ratio < 1:
            raise ValueError("n_hf and lf_ratio must be positive")

    @property
    def n_lf(self) -> int:
        return self.lf_ratio * self.n_hf


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.dim)] + ["y"])
            for xi, yi in zip(self.x, self.y):
                w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "y" or header[:-1] != [f"x{i + 1}" for i in range(len(header) - 1)]:
            raise ValueError(f"{path}: expected columns x1..xd,y, got {header}")
        arr = np.asarray(body, dtype=np.float64).reshape(len(body), len(header))
        return cls(arr[:, :-1], arr[:, -1])


@dataclass
class Datasets:
    hf_train: Dataset
    lf_train: list[Dataset]
    hf_test: Dataset
    design: DesignSpec | None = None
    hf_validation: Dataset | None = None


def build_datasets(problem: BenchmarkProblem, design: DesignSpec, *, validation: bool = False) -> Datasets:
    """Generate HF/LF training sets and an HF test set for one repetition.

    HF train: ``n_hf`` Sobol' points plus boundary points. LF train per
    source: ``lf_ratio * n_hf`` Sobol' points on the source's own domain.
    HF test: ``n_hf`` i.i.d. uniform points. With ``validation`` an extra
    independent uniform HF set of the same size is drawn for model selection.
    """
    seed, rep = design.seed, design.repetition_index
    hf_dom = problem.hf.domain
    x_h = augment_boundary(hf_dom.from_unit(sobol(design.n_hf, hf_dom.dim, seed, rep)), hf_dom)
    noise = lambda tag: stream("noise", problem.name, seed, rep, tag)  # noqa: E731
    hf_train = Dataset(x_h, evaluate(problem, "hf", x_h, noise("hf-train")))
    lf_train = []
    for i, fn in enumerate(problem.lf):
        u = sobol(design.n_lf, fn.dim, seed=int(stream("lf-seed", seed, i).integers(0, 2**31)), repetition_index=rep)
        x_l = fn.domain.from_unit(u)
        lf_train.append(Dataset(x_l, evaluate(problem, i, x_l, noise(f"lf{i}"))))

    def uniform_set(tag: str) -> Dataset:
        x = hf_dom.from_unit(stream(tag, problem.name, seed, rep).random((design.n_hf, hf_dom.dim)))
        return Dataset(x, evaluate(problem, "hf", x, noise(tag)))

    return Datasets(
        hf_train,
        lf_train,
        uniform_set("test"),
        design,
        uniform_set("validation") if validation else None,
    )


# ----------------------------------------------------------- normalisation

@dataclass(frozen=True)
class AffineNormalizer:
    """``W(z) = (z - beta) / alpha`` applied per column."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if alpha.shape != beta.shape:
            raise ValueError(f"alpha {alpha.shape} and beta {beta.shape} differ in shape")
        if np.any(alpha == 0):
            raise ValueError("normaliser scale alpha must be nonzero")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def identity(cls, dim: int = 1) -> "AffineNormalizer":
        return cls(np.ones(dim), np.zeros(dim))

    @classmethod
    def min_max(cls, data: np.ndarray) -> "AffineNormalizer":
        """Send each column's [min, max] onto [-1, 1]; constant columns get alpha = 1."""
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        lo, hi = data.min(axis=0), data.max(axis=0)
        alpha = (hi - lo) / 2.0
        alpha = np.where(alpha > 0, alpha, 1.0)
        return cls(alpha, (hi + lo) / 2.0)

    @classmethod
    def from_box(cls, box: HyperRectangle) -> "AffineNormalizer":
        return cls.min_max(np.stack([box.lo, box.hi]))

    @property
    def dim(self) -> int:
        return len(self.alpha)

    def forward(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1 and self.dim == 1:
            return (z - self.beta[0]) / self.alpha[0]
        return (z - self.beta) / self.alpha

    def inverse(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1 and self.dim == 1:
            return self.alpha[0] * z + self.beta[0]
        return self.alpha * z + self.beta

    def box(self, box: HyperRectangle) -> HyperRectangle:
        return HyperRectangle(tuple(self.forward(box.lo)), tuple(self.forward(box.hi)))

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineNormalizer":
        return cls(np.asarray(d["alpha"]), np.asarray(d["beta"]))


@dataclass(frozen=True)
class Normalizers:
    x_hf: AffineNormalizer
    x_lf: tuple[AffineNormalizer, ...]
    y_hf: AffineNormalizer
    y_lf: tuple[AffineNormalizer, ...]

    @classmethod
    def identity(cls, hf_dim: int, lf_dims: Sequence[int]) -> "Normalizers":
        return cls(
            AffineNormalizer.identity(hf_dim),
            tuple(AffineNormalizer.identity(d) for d in lf_dims),
            AffineNormalizer.identity(1),
            tuple(AffineNormalizer.identity(1) for _ in lf_dims),
        )

    def to_dict(self) -> dict:
        return {
            "x_hf": self.x_hf.to_dict(),
            "x_lf": [n.to_dict() for n in self.x_lf],
            "y_hf": self.y_hf.to_dict(),
            "y_lf": [n.to_dict() for n in self.y_lf],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizers":
        f = AffineNormalizer.from_dict
        return cls(f(d["x_hf"]), tuple(map(f, d["x_lf"])), f(d["y_hf"]), tuple(map(f, d["y_lf"])))


def fit_normalizers(datasets: Datasets, problem: BenchmarkProblem | None = None) -> Normalizers:
    """Min-max normalisers for every input and output space.

    Output spaces use the training data. Input spaces use the training data
    too, unless ``problem`` is given, in which case each input space is scaled
    by its domain box so that HF and LF inputs sharing a box share a map.
    """
    if len(datasets.hf_train) == 0 or any(len(d) == 0 for d in datasets.lf_train):
        raise ValueError("cannot fit normalisers on an empty dataset")
    if problem is not None:
        x_hf = AffineNormalizer.from_box(problem.hf.domain)
        x_lf = tuple(AffineNormalizer.from_box(fn.domain) for fn in problem.lf)
    else:
        x_hf = AffineNormalizer.min_max(datasets.hf_train.x)
        x_lf = tuple(AffineNormalizer.min_max(d.x) for d in datasets.lf_train)
    return Normalizers(
        x_hf,
        x_lf,
        AffineNormalizer.min_max(datasets.hf_train.y),
        tuple(AffineNormalizer.min_max(d.y) for d in datasets.lf_train),
    )


@dataclass
class UnnormalizedCorrelation:
    """HF correlation expressed in original units.

    ``y_H(x) = sum_i A_i z_i + B . x + C + delta(x, z_1..z_n)`` where ``z_i``
    is the LF prediction composed with its coordinate map, in LF units.
    """

    A: np.ndarray
    B: np.ndarray
    C: float
    delta: Callable[[np.ndarray, Sequence[np.ndarray]], np.ndarray] | None = None

    def __call__(self, x: np.ndarray, z: Sequence[np.ndarray]) -> np.ndarray:
        x = np.atleast_2d(x)
        out = x @ self.B + self.C
        for a, zi in zip(self.A, z):
            out = out + a * np.asarray(zi)
        if self.delta is not None:
            out = out + self.delta(x, z)
        return out


def recover_unnormalized_coefficients(
    A_tilde: Sequence[float],
    B_tilde: Sequence[float],
    C_tilde: float,
    normalizers: Normalizers,
    delta_tilde: Callable[[np.ndarray, Sequence[np.ndarray]], np.ndarray] | None = None,
) -> UnnormalizedCorrelation:
    """Transport a normalised linear correlation (and residual) back to original units."""
    A_tilde = np.asarray(A_tilde, dtype=np.float64).ravel()
    B_tilde = np.asarray(B_tilde, dtype=np.float64).ravel()
    a_yh, b_yh = normalizers.y_hf.alpha[0], normalizers.y_hf.beta[0]
    a_x, b_x = normalizers.x_hf.alpha, normalizers.x_hf.beta
    a_yl = np.array([n.alpha[0] for n in normalizers.y_lf])
    b_yl = np.array([n.beta[0] for n in normalizers.y_lf])
    if len(A_tilde) != len(a_yl) or len(B_tilde) != len(a_x):
        raise ValueError("coefficient sizes do not match the normalisers")

    A = a_yh * A_tilde / a_yl
    B = a_yh * B_tilde / a_x
    C = float(a_yh * C_tilde - np.sum(A * b_yl) - np.dot(B, b_x) + b_yh)

    delta = None
    if delta_tilde is not None:

        def delta(x, z):
            xt = normalizers.x_hf.forward(np.atleast_2d(x))
            zt = [n.forward(np.asarray(zi)) for n, zi in zip(normalizers.y_lf, z)]
            return a_yh * np.asarray(delta_tilde(xt, zt))

    return UnnormalizedCorrelation(A, B, C, delta)
