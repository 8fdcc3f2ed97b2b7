"""Adam training, normalised-MSE evaluation, the experiment grid and random search."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .benchmarks import BenchmarkProblem, make_problem
from .box import HyperRectangle
from .loss import LAMBDA_CHOICES, LossWeights, loss_err, loss_enc, loss_reg
from .mfmodel import (
    TIERS,
    MultiFidelityModel,
    SingleFidelityModel,
    build_mf_model,
    build_sf_model,
)
from .sampling import Datasets, DesignSpec, Normalizers, build_datasets, fit_normalizers, stream

log = logging.getLogger(__name__)

ARCHITECTURES = ("mlp", "siren", "kan")
ENCODINGS = ("none", "linear", "nonlinear")
LR_RANGE = (1e-5, 1e-3)
DIVERGENCE_LIMIT = 1e12


class TrialFailed(RuntimeError):
    pass


# ------------------------------------------------------------------- Adam

@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray] | None, state: OptimizerState) -> None:
    """One bias-corrected Adam update, in place.

    ``grads`` defaults to each tensor's ``.grad``; missing gradients count as zero.
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    for name in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise TrialFailed(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ----------------------------------------------------------- containers

@dataclass(frozen=True)
class HyperParams:
    lr: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def to_dict(self) -> dict:
        return {"lr": self.lr, **self.weights.to_dict()}


@dataclass(frozen=True)
class Schedule:
    epochs: int = 20_000
    trace_every: int = 100
    # >0 switches to pre-train-then-freeze: LF surrogates are fitted alone
    # for this many epochs and then held fixed
    lf_pretrain_epochs: int = 0


@dataclass(frozen=True)
class TrialConfig:
    problem: str
    architecture: str
    tier: int
    encoding: str  # 'none' | 'linear' | 'nonlinear' | 'sf'
    n_hf: int

    @property
    def is_sf(self) -> bool:
        return self.encoding == "sf"

    @property
    def config_id(self) -> str:
        return f"{self.problem}/{self.architecture}/t{self.tier}/{self.encoding}/n{self.n_hf}"


@dataclass
class TrialResult:
    config_id: str
    repetition: int
    mse: float = math.nan
    normalized_mse: float = math.nan
    normalized: bool = True
    wall_time: float = 0.0
    status: str = "ok"
    message: str = ""
    loss_trace: list[float] = field(default_factory=list)
    hyperparams: dict = field(default_factory=dict)
    params: dict[str, np.ndarray] | None = None

    @property
    def failed(self) -> bool:
        return self.status != "ok"


# ------------------------------------------------------------ data prep

@dataclass
class PreparedData:
    x_hf: np.ndarray
    y_hf: np.ndarray
    lf: dict[int, tuple[np.ndarray, np.ndarray]]
    lf_boxes: list[HyperRectangle]
    normalizers: Normalizers


def prepare(datasets: Datasets, normalizers: Normalizers, learned: Iterable[int]) -> PreparedData:
    nz = normalizers
    lf = {i: (nz.x_lf[i].forward(datasets.lf_train[i].x), nz.y_lf[i].forward(datasets.lf_train[i].y)) for i in learned}
    boxes = [HyperRectangle.bounding(nz.x_lf[i].forward(d.x)) for i, d in enumerate(datasets.lf_train)]
    return PreparedData(
        nz.x_hf.forward(datasets.hf_train.x), nz.y_hf.forward(datasets.hf_train.y), lf, boxes, nz
    )


def _objective(model, data: PreparedData, weights: LossWeights, frozen_lf: bool) -> Tensor:
    if isinstance(model, SingleFidelityModel):
        pred = model.predict_hf(data.x_hf)
        err = ad.mean(ad.square(ad.sub(pred, Tensor(data.y_hf[:, None]))))
        return ad.add(err, loss_reg(model.trainable_parameters(), weights))
    pred = model.predict_hf(data.x_hf)
    lf = {} if frozen_lf else data.lf
    if frozen_lf:
        # pre-trained surrogates contribute no LF misfit once frozen
        err = ad.mean(ad.square(ad.sub(pred.y, Tensor(data.y_hf[:, None]))))
    else:
        err = loss_err(model, data.x_hf, data.y_hf, lf, prediction=pred)
    groups = model.trainable_parameters()
    if frozen_lf:
        groups = replace(groups, lf={})
    total = ad.add(err, loss_reg(groups, weights))
    if model.encoded:
        total = ad.add(total, loss_enc(model, data.x_hf, data.lf_boxes, weights, prediction=pred))
    return total


def _optimise(params: dict[str, Tensor], objective: Callable[[], Tensor], lr: float, epochs: int,
              trace_every: int, trace: list[float]) -> None:
    state = OptimizerState(lr)
    leaves = list(params.values())
    for epoch in range(epochs):
        for p in leaves:
            p.grad = None
        loss = objective()
        value = loss.item()
        if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
            raise TrialFailed(f"loss diverged ({value!r}) at epoch {epoch}")
        if trace_every and epoch % trace_every == 0:
            trace.append(value)
        ad.backward(loss, leaves)
        adam_step(params, None, state)


def train(model, data: PreparedData, hp: HyperParams, schedule: Schedule = Schedule()) -> list[float]:
    """Full-batch Adam on the composite loss. Returns the sampled loss trace.

    Raises :class:`TrialFailed` on divergence or non-finite gradients.
    """
    trace: list[float] = []
    frozen = False
    if isinstance(model, MultiFidelityModel) and schedule.lf_pretrain_epochs > 0 and data.lf:
        lf_params = {f"lf{i}.{k}": v for i, p in model.trainable_parameters().lf.items() for k, v in p.items()}

        def lf_only():
            total = Tensor(np.array(0.0))
            for i, (x, y) in data.lf.items():
                pred = model.predict_lf(i, x)
                total = ad.add(total, ad.mean(ad.square(ad.sub(pred, Tensor(y[:, None])))))
            return ad.add(total, loss_reg(replace(model.trainable_parameters(), nl={}), hp.weights))

        _optimise(lf_params, lf_only, hp.lr, schedule.lf_pretrain_epochs, schedule.trace_every, trace)
        frozen = True
    params = model.trainable_parameters().all()
    if frozen:
        for k in [k for k in params if k.startswith("lf")]:
            params.pop(k)
    _optimise(params, lambda: _objective(model, data, hp.weights, frozen), hp.lr, schedule.epochs,
              schedule.trace_every, trace)
    return trace


def evaluate_normalized_mse(model, hf_test, problem: BenchmarkProblem | None = None) -> tuple[float, float, bool]:
    """Test MSE in original units, and MSE divided by the sample mean of ``y_H^2``.

    Returns ``(mse, normalized_mse, normalized)``; when the HF values are all
    zero the MSE is returned unnormalised with ``normalized=False``.
    """
    pred = model.predict(hf_test.x)
    mse = float(np.mean((pred - hf_test.y) ** 2))
    const = float(np.mean(np.asarray(hf_test.y) ** 2))
    if const == 0.0:
        return mse, mse, False
    return mse, mse / const, True


# ---------------------------------------------------------------- trials

def trial_seeds(master_seed: int, cfg: TrialConfig, repetition: int) -> tuple[int, int]:
    """(data seed, model seed). SF and MF runs of one cell share both."""
    data_seed = int(stream(master_seed, "data", cfg.problem, cfg.n_hf).integers(0, 2**31))
    model_seed = int(stream(master_seed, "model", cfg.problem, cfg.architecture, cfg.tier, cfg.n_hf, repetition)
                     .integers(0, 2**31))
    return data_seed, model_seed


def build_model(problem: BenchmarkProblem, cfg: TrialConfig, normalizers: Normalizers, model_seed: int, network_kw=None):
    if cfg.is_sf:
        return build_sf_model(problem, cfg.architecture, cfg.tier, normalizers, model_seed, network_kw=network_kw)
    return build_mf_model(problem, cfg.architecture, cfg.tier, cfg.encoding, normalizers, model_seed,
                          network_kw=network_kw)


def run_trial(
    problem: BenchmarkProblem,
    cfg: TrialConfig,
    repetition: int,
    hp: HyperParams,
    schedule: Schedule,
    master_seed: int = 0,
    *,
    score_on: str = "test",
    keep_params: bool = False,
    network_kw: dict | None = None,
) -> TrialResult:
    """Build data and model for one repetition, train, evaluate."""
    data_seed, model_seed = trial_seeds(master_seed, cfg, repetition)
    design = DesignSpec(cfg.n_hf, seed=data_seed, repetition_index=repetition)
    datasets = build_datasets(problem, design, validation=(score_on == "validation"))
    normalizers = fit_normalizers(datasets, problem)
    model = build_model(problem, cfg, normalizers, model_seed, network_kw)
    learned = [] if cfg.is_sf else [i for i, s in enumerate(model.sources) if not s.is_exact]
    data = prepare(datasets, normalizers, learned)
    result = TrialResult(cfg.config_id, repetition, hyperparams=hp.to_dict())
    t0 = time.perf_counter()
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            result.loss_trace = train(model, data, hp, schedule)
        target = datasets.hf_validation if score_on == "validation" else datasets.hf_test
        result.mse, result.normalized_mse, result.normalized = evaluate_normalized_mse(model, target, problem)
        if not math.isfinite(result.normalized_mse):
            raise TrialFailed("non-finite test error")
    except TrialFailed as exc:
        result.status, result.message = "failed", str(exc)
        log.warning("%s rep %d failed: %s", cfg.config_id, repetition, exc)
    result.wall_time = time.perf_counter() - t0
    if keep_params and not result.failed:
        params = model.params if cfg.is_sf else model.trainable_parameters().all()
        result.params = {k: v.data.copy() for k, v in params.items()}
    return result


def restore_model(problem: BenchmarkProblem, cfg: TrialConfig, repetition: int, params: dict[str, np.ndarray],
                  master_seed: int = 0, network_kw=None):
    """Rebuild a trained model from a TrialResult's parameter snapshot."""
    data_seed, model_seed = trial_seeds(master_seed, cfg, repetition)
    datasets = build_datasets(problem, DesignSpec(cfg.n_hf, seed=data_seed, repetition_index=repetition))
    model = build_model(problem, cfg, fit_normalizers(datasets, problem), model_seed, network_kw)
    live = model.params if cfg.is_sf else model.trainable_parameters().all()
    for k, v in params.items():
        live[k].data[...] = v
    return model, datasets


# ------------------------------------------------------------ hyper search

def sample_hyperparams(rng: np.random.Generator) -> HyperParams:
    lr = float(np.exp(rng.uniform(np.log(LR_RANGE[0]), np.log(LR_RANGE[1]))))
    lam = [float(LAMBDA_CHOICES[i]) for i in rng.integers(0, len(LAMBDA_CHOICES), size=4)]
    return HyperParams(lr, LossWeights(*lam))


@dataclass
class SearchResult:
    best: HyperParams
    trials: list[tuple[HyperParams, TrialResult]]


def hyper_search(
    problem: BenchmarkProblem,
    cfg: TrialConfig,
    budget: int,
    schedule: Schedule,
    master_seed: int = 0,
    *,
    sampler: Callable[[np.random.Generator], HyperParams] = sample_hyperparams,
    network_kw: dict | None = None,
) -> SearchResult:
    """Random search over the hyperparameter space, scored on repetition 0's validation set."""
    if budget < 1:
        raise ValueError("search budget must be at least 1")
    rng = stream(master_seed, "search", cfg.config_id)
    trials = []
    for _ in range(budget):
        hp = sampler(rng)
        trials.append((hp, run_trial(problem, cfg, 0, hp, schedule, master_seed, score_on="validation",
                                     network_kw=network_kw)))
    ok = [(hp, r) for hp, r in trials if not r.failed]
    if not ok:
        raise TrialFailed(f"all {budget} search trials failed for {cfg.config_id}: "
                          + "; ".join(r.message for _, r in trials))
    best = min(ok, key=lambda t: t[1].normalized_mse)[0]
    return SearchResult(best, trials)


# ------------------------------------------------------------------ grid

@dataclass(frozen=True)
class GridSpec:
    architectures: tuple[str, ...] = ("mlp",)
    tiers: tuple[int, ...] = (1, 2, 3)
    sizes: tuple[int, ...] | None = None  # None -> the problem's default sizes
    encodings: tuple[str, ...] = ENCODINGS
    repetitions: int = 4
    include_sf: bool = True
    master_seed: int = 0
    schedule: Schedule = Schedule()
    search_budget: int = 0
    default_hp: HyperParams = HyperParams()
    network_kw: dict = field(default_factory=dict)

    def __post_init__(self):
        for a in self.architectures:
            if a not in ARCHITECTURES:
                raise ValueError(f"unknown architecture {a!r}")
        for t in self.tiers:
            if t not in TIERS:
                raise ValueError(f"unknown tier {t!r}")
        for e in self.encodings:
            if e not in ENCODINGS:
                raise ValueError(f"unknown encoding {e!r}")
        if self.repetitions < 1:
            raise ValueError("need at least one repetition")


def grid_configs(problem: BenchmarkProblem, grid: GridSpec) -> list[TrialConfig]:
    """Configurations in output order; encodings impossible for the problem are skipped."""
    sizes = grid.sizes or problem.sizes
    same_dims = all(fn.dim == problem.hf_dim for fn in problem.lf)
    out = []
    for arch in grid.architectures:
        for tier in grid.tiers:
            for enc in grid.encodings:
                if enc == "none" and not same_dims:
                    continue
                for n in sizes:
                    out.append(TrialConfig(problem.name, arch, tier, enc, n))
        if grid.include_sf:
            for tier in grid.tiers:
                for n in sizes:
                    out.append(TrialConfig(problem.name, arch, tier, "sf", n))
    return out


@dataclass
class AggregateRow:
    problem: str
    architecture: str
    tier: int
    encoding: str
    n_hf: int
    mean_normalized_mse: float
    cov: float
    failed_count: int
    median_normalized_mse: float = math.nan

    CSV_FIELDS = ("problem", "architecture", "tier", "encoding", "n_hf", "mean_normalized_mse", "cov", "failed_count")


def aggregate(cfg: TrialConfig, results: Sequence[TrialResult]) -> AggregateRow:
    """Mean and coefficient of variation (population std / mean) over successful repetitions."""
    vals = np.array([r.normalized_mse for r in results if not r.failed])
    failed = sum(r.failed for r in results)
    if len(vals) == 0:
        mean = cov = med = math.nan
    else:
        mean = float(np.mean(vals))
        med = float(np.median(vals))
        cov = float(np.std(vals) / mean) if mean != 0 else 0.0
    return AggregateRow(cfg.problem, cfg.architecture, cfg.tier, cfg.encoding, cfg.n_hf, mean, cov, failed, med)


@dataclass
class GridOutcome:
    rows: list[AggregateRow]
    trials: dict[TrialConfig, list[TrialResult]]
    hyperparams: dict[TrialConfig, HyperParams]


def _job(args):
    problem_name, rd_table, cfg, rep, hp, schedule, seed, network_kw = args
    problem = make_problem(problem_name, rd_table=rd_table)
    return run_trial(problem, cfg, rep, hp, schedule, seed, keep_params=True, network_kw=network_kw)


def run_grid(
    problem: BenchmarkProblem,
    grid: GridSpec,
    *,
    threads: int = 1,
    rd_table: str | None = None,
    progress: Callable[[str], None] | None = None,
) -> GridOutcome:
    """Run every configuration of ``grid`` for ``grid.repetitions`` repetitions and aggregate."""
    configs = grid_configs(problem, grid)
    hps: dict[TrialConfig, HyperParams] = {}
    for cfg in configs:
        if grid.search_budget > 0:
            try:
                hps[cfg] = hyper_search(problem, cfg, grid.search_budget, grid.schedule, grid.master_seed,
                                        network_kw=grid.network_kw).best
            except TrialFailed as exc:
                log.warning("%s", exc)
                hps[cfg] = grid.default_hp
        else:
            hps[cfg] = grid.default_hp
    jobs = [(cfg, rep) for cfg in configs for rep in range(grid.repetitions)]
    if threads > 1:
        args = [(problem.name, rd_table, cfg, rep, hps[cfg], grid.schedule, grid.master_seed, grid.network_kw)
                for cfg, rep in jobs]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_job, args))
    else:
        results = []
        for cfg, rep in jobs:
            results.append(run_trial(problem, cfg, rep, hps[cfg], grid.schedule, grid.master_seed,
                                     keep_params=True, network_kw=grid.network_kw))
            if progress:
                r = results[-1]
                progress(f"{cfg.config_id} rep {rep}: nmse={r.normalized_mse:.3e} ({r.wall_time:.1f}s)")
    by_cfg: dict[TrialConfig, list[TrialResult]] = {cfg: [] for cfg in configs}
    for (cfg, _), r in zip(jobs, results):
        by_cfg[cfg].append(r)
    rows = [aggregate(cfg, by_cfg[cfg]) for cfg in configs]
    return GridOutcome(rows, by_cfg, hps)
