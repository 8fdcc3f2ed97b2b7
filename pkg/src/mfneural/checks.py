"""Self-checks shared by the CLI and the test suite.

``oracle_report`` exercises a benchmark problem's closed-form cross-fidelity
relation, analytic LF gradients and domain guard. ``gradcheck_report``
compares reverse-mode gradients with central finite differences for every
primitive, all three architectures and the composite training loss.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .benchmarks import PRINTED_2DE_MATRIX, BenchmarkProblem, DomainError, evaluate
from .box import HyperRectangle
from .networks import NetworkSpec, bspline_basis, forward, init_network
from .sampling import stream

RELATION_TOL = 1e-12
GRAD_TOL = 1e-5
FD_STEP = 1e-6


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status}  {self.name:<34} {self.value:10.3e}  (tol {self.tol:.0e})"
        return f"{text}  {self.note}" if self.note else text


# ------------------------------------------------------------------ oracle

def relation_residual(problem: BenchmarkProblem, n: int = 1000, seed: int = 0) -> float:
    """Max of ``|y_H - rhs| / max(1, |y_H|)`` over ``n`` uniform domain points."""
    if problem.relation is None:
        raise ValueError(f"{problem.name} has no closed-form relation")
    x = problem.hf.domain.from_unit(stream(seed, "oracle", problem.name).random((n, problem.hf_dim)))
    scale = np.maximum(1.0, np.abs(problem.hf.f(x)))
    return float(np.max(np.abs(problem.relation(x)) / scale))


def _fd_gradient(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    g = np.empty_like(x)
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = h
        g[:, j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def oracle_report(problem: BenchmarkProblem, n: int = 1000, seed: int = 0) -> list[Check]:
    out = []
    if problem.relation is not None:
        r = relation_residual(problem, n, seed)
        out.append(Check(f"{problem.name} relation", r, RELATION_TOL, r < RELATION_TOL, problem.relation_note))
    if problem.name == "2DE":
        # the printed matrix is kept for reference; show how far it is from an identity
        x = problem.hf.domain.from_unit(stream(seed, "oracle-2de").random((n, 2)))
        u = x @ PRINTED_2DE_MATRIX.T
        miss = float(np.max(np.abs(problem.hf.f(x) - problem.lf[0].f(u))))
        out.append(Check("2DE printed matrix (informational)", miss, np.inf, True,
                         "printed matrix does not satisfy y_H = y_L o T; derived transform used"))
    # analytic LF gradients, where provided
    for i, fn in enumerate(problem.lf):
        if fn.grad is None:
            continue
        inner = fn.domain.shift(np.zeros(fn.dim))
        u = stream(seed, "oracle-grad", problem.name, i).random((50, fn.dim))
        # stay a finite-difference step away from the boundary
        x = inner.lo + (inner.hi - inner.lo) * (0.01 + 0.98 * u)
        fd = _fd_gradient(fn.f, x, FD_STEP * max(1.0, float(np.max(inner.hi - inner.lo))))
        an = fn.grad(x)
        err = float(np.max(np.abs(an - fd)) / max(np.max(np.abs(fd)), 1e-8))
        out.append(Check(f"{fn.name} gradient", err, GRAD_TOL, err < GRAD_TOL))
    # domain guard
    bad = problem.hf.domain.hi + 1.0
    try:
        evaluate(problem, "hf", bad[None, :])
        out.append(Check(f"{problem.name} domain guard", 1.0, 0.0, False, "out-of-domain point accepted"))
    except DomainError:
        out.append(Check(f"{problem.name} domain guard", 0.0, 0.0, True))
    return out


# -------------------------------------------------------------- gradcheck

# below this gradient magnitude the error is measured absolutely; central
# differences carry O(h^2) truncation noise that a relative ratio would inflate
GRAD_FLOOR = 1e-6


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), GRAD_FLOOR))


def check_gradient(build: Callable[[list[Tensor]], Tensor], inputs: list[np.ndarray], h: float = FD_STEP) -> float:
    """Relative error between tape gradients and central differences of a scalar function."""
    leaves = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = build(leaves)
    ad.backward(out, leaves)
    worst = 0.0
    for k, leaf in enumerate(inputs):
        fd = np.zeros_like(leaf)
        for idx in np.ndindex(leaf.shape):
            vals = []
            for sign in (1.0, -1.0):
                shifted = [x.copy() for x in inputs]
                shifted[k][idx] += sign * h
                vals.append(build([Tensor(x) for x in shifted]).item())
            fd[idx] = (vals[0] - vals[1]) / (2 * h)
        worst = max(worst, _rel(leaves[k].grad, fd))
    return worst


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((4, 3))
    row = rng.standard_normal(3)
    w = rng.standard_normal((2, 3))
    bias = rng.standard_normal(2)
    pos = rng.uniform(0.5, 2.0, (4, 3))
    away = np.where(np.abs(a) < 0.1, a + 0.3, a)  # keep kinks out of reach of the FD step
    lo, hi = np.full(3, -0.5), np.full(3, 0.5)
    box = HyperRectangle(lo, hi)
    from .loss import interval_score

    fixed: dict[tuple, np.ndarray] = {}

    def rng_fixed(shape):
        if shape not in fixed:
            fixed[shape] = rng.standard_normal(shape)
        return fixed[shape]

    def w_(t):
        # random linear functional, so every output entry matters
        return ad.sum(ad.mul(t, Tensor(rng_fixed(t.shape))))

    return {
        "add": (lambda t: w_(ad.add(t[0], t[1])), [a, b]),
        "add (batch broadcast)": (lambda t: w_(ad.add(t[0], t[1])), [a, row]),
        "sub": (lambda t: w_(ad.sub(t[0], t[1])), [a, b]),
        "mul": (lambda t: w_(ad.mul(t[0], t[1])), [a, b]),
        "mul (batch broadcast)": (lambda t: w_(ad.mul(t[0], t[1])), [a, row]),
        "matmul": (lambda t: w_(ad.matmul(t[0], t[1])), [a, w.T.copy()]),
        "matmul (transposed)": (lambda t: w_(ad.matmul(t[0], t[1], transpose_b=True)), [a, w]),
        "linear": (lambda t: w_(ad.linear(t[0], t[1], t[2])), [a, w, bias]),
        "scale": (lambda t: w_(ad.scale(t[0], -2.5)), [a]),
        "sin": (lambda t: w_(ad.sin(t[0])), [a]),
        "cos": (lambda t: w_(ad.cos(t[0])), [a]),
        "tanh": (lambda t: w_(ad.tanh(t[0])), [a]),
        "silu": (lambda t: w_(ad.silu(t[0])), [a]),
        "relu": (lambda t: w_(ad.relu(t[0])), [away]),
        "abs": (lambda t: w_(ad.absolute(t[0])), [away]),
        "square": (lambda t: w_(ad.square(t[0])), [a]),
        "sqrt": (lambda t: w_(ad.sqrt(t[0])), [pos]),
        "sum": (lambda t: ad.sum(t[0]), [a]),
        "mean": (lambda t: ad.mean(t[0]), [a]),
        "l2norm": (lambda t: ad.l2norm([t[0], t[1]]), [a, w]),
        "slice_cols": (lambda t: w_(ad.slice_cols(t[0], 1, 3)), [a]),
        "concat": (lambda t: w_(ad.concat([t[0], t[1]])), [a, b[:, :2].copy()]),
        "reshape": (lambda t: w_(ad.reshape(t[0], (3, 4))), [a]),
        "bspline basis": (lambda t: w_(bspline_basis(t[0], 5, 3)), [rng.uniform(-0.95, 0.95, (4, 3))]),
        "interval score": (lambda t: interval_score(t[0], box), [np.where(np.abs(np.abs(a) - 0.5) < 0.1, a * 1.5, a)]),
    }


def _network_case(kind: str, rng: np.random.Generator, **kw):
    spec = NetworkSpec(kind, 2, 1, (5, 4), **kw)
    params = init_network(spec, rng)
    names = list(params)
    x = rng.uniform(-0.9, 0.9, (6, 2))
    wt = rng.standard_normal((6, 1))

    def build(t):
        out = forward(spec, dict(zip(names, t[1:])), t[0])
        return ad.sum(ad.mul(out, Tensor(wt)))

    return build, [x] + [params[k].data.copy() for k in names]


def _loss_case(rng: np.random.Generator, encoding: str, tier: int):
    from .benchmarks import make_problem
    from .loss import LossWeights, total_loss
    from .mfmodel import build_mf_model
    from .sampling import DesignSpec, build_datasets, fit_normalizers
    from .training import prepare

    problem = make_problem("K4")
    seed = int(rng.integers(0, 2**31))
    ds = build_datasets(problem, DesignSpec(6, lf_ratio=2, seed=seed))
    nz = fit_normalizers(ds, problem)
    model = build_mf_model(problem, "mlp", tier, encoding, nz, seed)
    groups = model.trainable_parameters().all()
    names = list(groups)
    learned = [i for i, s in enumerate(model.sources) if not s.is_exact]
    data = prepare(ds, nz, learned)
    # perturb away from the init so every term (incl. encoder body) carries gradient
    for k in names:
        groups[k].data += 0.05 * rng.standard_normal(groups[k].shape)
    start = [groups[k].data.copy() for k in names]
    weights = LossWeights(1e-3, 1e-3, 1.0, 1.0)

    def build(t):
        _rebind(model, dict(zip(names, t)))
        return total_loss(model, data.x_hf, data.y_hf, data.lf, weights, data.lf_boxes)

    return build, start


def _rebind(model, flat: dict[str, Tensor]) -> None:
    """Point the model's parameter dicts at ``flat`` (prefixes as in ParameterGroups.all)."""
    for key, t in flat.items():
        if key.startswith("lf"):
            i, name = key[2:].split(".", 1)
            model.sources[int(i)].params[name] = t
        elif key.startswith("enc"):
            i, name = key[3:].split(".", 1)
            model.enc_params[int(i)][name] = t
        elif key.startswith("lin."):
            model.lin_params[key[4:]] = t
        elif key.startswith("nl."):
            model.nl_params[key[3:]] = t


def gradcheck_report(seeds: int = 1, base_seed: int = 0) -> list[Check]:
    """Worst relative error per case over ``seeds`` random draws."""
    worst: dict[str, float] = {}
    for s in range(seeds):
        rng = stream(base_seed, "gradcheck", s)
        cases = primitive_cases(rng)
        cases["mlp forward"] = _network_case("mlp", rng)
        cases["siren forward"] = _network_case("siren", rng)
        cases["kan forward (spline path)"] = _network_case("kan", rng)
        cases["loss: linear encoder, exact LF"] = _loss_case(rng, "linear", 2)
        cases["loss: nonlinear encoder, learned LF"] = _loss_case(rng, "nonlinear", 3)
        for name, (build, inputs) in cases.items():
            worst[name] = max(worst.get(name, 0.0), check_gradient(build, inputs))
    return [Check(name, err, GRAD_TOL, err < GRAD_TOL) for name, err in worst.items()]
