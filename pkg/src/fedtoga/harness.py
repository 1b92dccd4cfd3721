"""Experiment orchestration: round loop, evaluation, sharpness probe, metrics."""
import hashlib
import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import client as cl
from . import rng as rngmod
from . import server as sv
from .data import (Dataset, PartitionSpec, gen_synthetic_classification, load_csv,
                   partition, train_test_split)
from .errors import ConfigError, ContractError, DivergenceError, FedOptError
from .numerics import (Batch, LogisticModel, MLPModel, QuadraticModel, init_params, logits,
                       loss, loss_and_grad)

ALGORITHMS = ("fedavg", "fedsam", "feddyn", "fedspeed", "fedtoga", "fedsmoo", "fedlesam_d")
METRIC_FIELDS = ("round", "train_loss", "test_loss", "test_accuracy", "sharpness",
                 "grad_norm", "delta_norm", "h_norm")


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "fedtoga"
    # "quadratic-random(d=5,seed=1)", "logistic" or "mlp(16)" / "mlp(32,16)"
    model: str = "mlp(16)"
    # "synthetic" or a CSV path
    dataset: str = "synthetic"
    n_samples: int = 2000
    feature_dim: int = 10
    num_classes: int = 4
    class_sep: float = 2.0
    partition: str = "dirichlet"
    dirichlet_u: float = 0.1
    pathological_c: int = 2
    N: int = 10
    M: int = 10
    T: int = 100
    K: int = 5
    batch_size: int = 50
    eta_l: float = 0.1
    lr_decay: float = 0.998
    rho: float = 0.1
    alpha: float = 0.1
    beta: float = 0.9
    kappa: float = 1.0
    perturbation_mode: str = "toga"
    dual_divisor: Optional[str] = None
    # ablation switches
    sam: bool = True
    dyn_reg: bool = True
    dual_correction: bool = True
    perturbation_correction: bool = True
    seed: int = 0
    eval_every: int = 10
    sharpness: bool = False
    rho_probe: float = 0.1
    n_directions: int = 16

    def __post_init__(self):
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(self.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        need(self.N >= 1, "N must be >= 1")
        need(self.M >= 1, "M must be >= 1")
        need(self.M <= self.N, "M exceeds N")
        need(self.T >= 1, "T must be >= 1")
        need(self.eval_every >= 1, "eval_every must be >= 1")
        need(self.n_directions >= 1, "n_directions must be >= 1")
        need(self.rho_probe >= 0, "rho_probe must be >= 0")
        need(self.partition in ("dirichlet", "pathological"),
             f"partition must be 'dirichlet' or 'pathological', got {self.partition!r}")
        need(self.dirichlet_u > 0, "dirichlet_u must be > 0")
        need(self.pathological_c >= 1, "pathological_c must be >= 1")
        need(self.dual_divisor in (None, "participants", "all_clients"),
             "dual_divisor must be 'participants' or 'all_clients'")
        if self.dataset == "synthetic":
            need(self.num_classes >= 2, "num_classes must be >= 2")
            need(self.n_samples >= self.num_classes, "n_samples must be >= num_classes")
            need(self.feature_dim >= 1, "feature_dim must be >= 1")
            need(self.class_sep > 0, "class_sep must be > 0")
        try:
            self.hp
        except ContractError as exc:
            raise ConfigError(str(exc)) from None
        parse_model(self.model)

    @property
    def hp(self):
        return cl.HyperParams(
            eta_l=self.eta_l, lr_decay=self.lr_decay,
            rho=self.rho if self.sam else 0.0,
            alpha=self.alpha,
            beta=self.beta if self.dual_correction else 0.0,
            kappa=self.kappa if self.perturbation_correction else 0.0,
            K=self.K, batch_size=self.batch_size,
            perturbation_mode=self.perturbation_mode, prox_enabled=self.dyn_reg)

    def to_dict(self):
        return asdict(self)

    def run_id(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


_MODEL_RE = re.compile(r"^\s*([a-z_-]+)\s*(?:\((.*)\))?\s*$")


def parse_model(text):
    """Parse a model string into ``(kind, args)``."""
    m = _MODEL_RE.match(str(text))
    if not m:
        raise ConfigError(f"model: cannot parse {text!r}")
    kind, inner = m.group(1), (m.group(2) or "").strip()
    if kind == "quadratic-random":
        kw = {}
        for part in filter(None, (p.strip() for p in inner.split(","))):
            k, _, v = part.partition("=")
            kw[k.strip()] = v.strip()
        unknown = set(kw) - {"d", "seed"}
        if unknown:
            raise ConfigError(f"model: unknown quadratic-random argument {sorted(unknown)[0]!r}")
        try:
            d = int(kw.get("d", 5))
            seed = int(kw.get("seed", 0))
        except ValueError:
            raise ConfigError("model: quadratic-random arguments must be integers") from None
        if d < 1:
            raise ConfigError("model: quadratic-random d must be >= 1")
        return kind, {"d": d, "seed": seed}
    if kind == "logistic":
        return kind, {}
    if kind == "mlp":
        try:
            hidden = tuple(int(x) for x in inner.split(",")) if inner else (16,)
        except ValueError:
            raise ConfigError(f"model: bad mlp widths {inner!r}") from None
        if not hidden or min(hidden) < 1:
            raise ConfigError("model: mlp hidden widths must be >= 1")
        return kind, {"hidden": hidden}
    raise ConfigError(f"model: unknown kind {kind!r}")


def random_quadratic_federation(N, d, seed):
    """Per-client quadratics with eigenvalues in [0.5, 2] and scattered centres."""
    models = []
    for i in range(N):
        g = rngmod.stream(seed, rngmod.MODEL, i)
        q, _ = np.linalg.qr(g.standard_normal((d, d)))
        lam = g.uniform(0.5, 2.0, size=d)
        A = (q * lam) @ q.T
        A = 0.5 * (A + A.T)
        c = g.normal(0.0, 2.0, size=d)
        models.append(QuadraticModel(A, c))
    return models


def quadratic_optimum(models):
    """Minimiser of the average quadratic via the normal equations."""
    A = sum(m.A for m in models)
    b = sum(m.A @ m.c for m in models)
    return np.linalg.solve(A, b)


class Federation:
    """Per-client objectives plus the global train/test objectives."""

    def __init__(self, client_models, client_data, model, train=None, test=None):
        self.client_models = client_models
        self.client_data = client_data
        self.model = model
        self.train = train
        self.test = test

    @property
    def is_quadratic(self):
        return self.train is None

    def global_loss(self, theta):
        if self.is_quadratic:
            return _mean_over(loss(m, theta) for m in self.client_models)
        return loss(self.model, theta, self.train.batch())

    def global_loss_and_grad(self, theta):
        if self.is_quadratic:
            vals = [loss_and_grad(m, theta) for m in self.client_models]
            return _mean_over(v for v, _ in vals), sv._sum_rows(np.stack([g for _, g in vals])) / len(vals)
        return loss_and_grad(self.model, theta, self.train.batch())


def _mean_over(values):
    vals = list(values)
    return math.fsum(vals) / len(vals)


def build_federation(config):
    kind, args = parse_model(config.model)
    if kind == "quadratic-random":
        models = random_quadratic_federation(config.N, args["d"], args["seed"])
        empty = Batch.empty()
        return Federation(models, [empty] * config.N, None)
    if config.dataset == "synthetic":
        full = gen_synthetic_classification(config.seed, config.n_samples, config.feature_dim,
                                            config.num_classes, config.class_sep)
    else:
        full = load_csv(config.dataset)
    train, test = train_test_split(full, config.seed)
    spec = PartitionSpec(config.partition, config.N, config.seed,
                         u=config.dirichlet_u, c=config.pathological_c)
    shards = partition(train, spec)
    if kind == "logistic":
        model = LogisticModel(full.feature_dim, full.num_classes)
    else:
        model = MLPModel((full.feature_dim, *args["hidden"], full.num_classes))
    data = [train.batch(s.indices) for s in shards]
    return Federation([model] * config.N, data, model, train, test)


def evaluate(model, params, dataset):
    """Full-dataset ``(loss, accuracy)``; quadratics report accuracy 0."""
    if isinstance(model, QuadraticModel):
        return loss(model, params), 0.0
    if dataset is None or len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    batch = dataset.batch() if isinstance(dataset, Dataset) else dataset
    scores = logits(model, params, batch.inputs)
    acc = float(np.mean(np.argmax(scores, axis=1) == batch.labels))
    return loss(model, params, batch), acc


def probe_objective(fn, params, rho_probe, n_directions, seed):
    """Mean of ``fn(params + rho u) - fn(params)`` over random unit ``u``, clamped at 0.

    Directions come in antithetic pairs ``+u, -u``; an odd count adds one
    unpaired direction.
    """
    if n_directions < 1:
        raise ContractError("n_directions must be >= 1")
    params = np.asarray(params, dtype=np.float64)
    g = rngmod.stream(seed, rngmod.PROBE)
    base = fn(params)
    n_pairs, odd = divmod(n_directions, 2)
    total = 0.0
    for _ in range(n_pairs + odd):
        u = g.standard_normal(params.shape[0])
        u /= np.linalg.norm(u)
        up = fn(params + rho_probe * u) - base
        if n_pairs:
            total += up + (fn(params - rho_probe * u) - base)
            n_pairs -= 1
        else:
            total += up
    return max(0.0, total / n_directions)


def sharpness_probe(model, params, dataset, rho_probe, n_directions, seed):
    batch = None
    if dataset is not None:
        batch = dataset.batch() if isinstance(dataset, Dataset) else dataset
    return probe_objective(lambda p: loss(model, p, batch), params, rho_probe, n_directions, seed)


@dataclass
class MetricsRow:
    round: int
    train_loss: float
    test_loss: float
    test_accuracy: float
    sharpness: Optional[float]
    grad_norm: float
    delta_norm: float
    h_norm: float


@dataclass
class MetricsLog:
    rows: list
    config: dict
    run_id: str
    final_theta: Optional[np.ndarray] = None

    @property
    def rounds(self):
        return [r.round for r in self.rows]

    def column(self, name):
        return [getattr(r, name) for r in self.rows]


def rounds_to_target(log, target_accuracy):
    """First logged round whose test accuracy reaches the target, else None."""
    if not 0 < target_accuracy <= 1:
        raise ContractError("target accuracy must lie in (0, 1]")
    for row in log.rows:
        if row.test_accuracy >= target_accuracy:
            return row.round
    return None


def worker_count():
    raw = os.environ.get("FEDOPT_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FEDOPT_THREADS must be an integer, got {raw!r}") from None
    return max(0, n)


def _client_step(alg, i, fed, gstate, cstate, hp, seed, t):
    r = rngmod.stream(seed, rngmod.TRAIN, t, i)
    data, model = fed.client_data[i], fed.client_models[i]
    if alg == "fedavg":
        return cl.fedavg_local_update(gstate.theta, data, model, hp, r, i), cstate
    if alg == "fedsam":
        return cl.fedsam_local_update(gstate.theta, data, model, hp, r, i), cstate
    if alg == "feddyn":
        return cl.feddyn_local_update(gstate.theta, cstate, data, model, hp, r, i)
    if alg == "fedspeed":
        return cl.fedspeed_local_update(gstate.theta, cstate, data, model, hp, r, i)
    if alg == "fedtoga":
        return cl.fedtoga_local_update(gstate.theta, gstate.delta, cstate, data, model, hp, r, i)
    if alg == "fedsmoo":
        return cl.fedsmoo_local_update(gstate.theta, gstate.s, cstate, data, model, hp, r, i)
    return cl.fedlesam_d_local_update(gstate.theta, cstate, data, model, hp, r, i)


def _server_step(alg, gstate, reports, hp, config):
    if alg in ("fedavg", "fedsam"):
        return sv.fedavg_server_step(gstate, reports, hp)
    if alg == "fedtoga":
        return sv.fedtoga_server_step(gstate, reports, hp, config.N, config.dual_divisor)
    if alg == "fedsmoo":
        return sv.fedsmoo_server_step(gstate, reports, hp, config.N, config.dual_divisor)
    return sv.feddyn_server_step(gstate, reports, hp, config.N, config.dual_divisor)


def _evaluate_row(fed, config, gstate, t, with_sharpness):
    theta = gstate.theta
    train_loss, g = fed.global_loss_and_grad(theta)
    if fed.is_quadratic:
        test_loss, acc = train_loss, 0.0
    else:
        test_loss, acc = evaluate(fed.model, theta, fed.test)
    sharp = None
    if with_sharpness:
        sharp = probe_objective(fed.global_loss, theta, config.rho_probe,
                                config.n_directions, config.seed)
    row = MetricsRow(t, float(train_loss), float(test_loss), float(acc), sharp,
                     float(np.linalg.norm(g)), float(np.linalg.norm(gstate.delta)),
                     float(np.linalg.norm(gstate.h)))
    for name in METRIC_FIELDS:
        v = getattr(row, name)
        if v is not None and not math.isfinite(v):
            raise DivergenceError(f"non-finite {name} in evaluation", round=t)
    return row


def run_experiment(config, workers=None, on_round=None):
    """Run ``config.T`` rounds and return the metrics log.

    ``workers`` overrides ``FEDOPT_THREADS`` (0 = sequential). ``on_round`` is
    called as ``on_round(t, before, reports, old_states, after, new_states)``
    after every server step; tests use it to check per-round identities.
    """
    fed = build_federation(config)
    hp = config.hp
    alg = config.algorithm
    d = fed.client_models[0].num_params
    if fed.is_quadratic:
        theta0 = init_params(fed.client_models[0], None)
    else:
        theta0 = init_params(fed.model, rngmod.stream(config.seed, rngmod.INIT))
    gstate = sv.GlobalState.initial(theta0, with_s=(alg == "fedsmoo"))
    cstates = {}
    n_workers = worker_count() if workers is None else workers
    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 0 else None
    rows = [_evaluate_row(fed, config, gstate, 0, config.sharpness)]
    try:
        for t in range(config.T):
            plan = sv.sample_clients(config.N, config.M, config.seed, t)
            hp_t = hp.at_round(t)
            olds = {i: cstates.get(i) or cl.ClientState.zeros(d) for i in plan.selected}

            def work(i, gstate=gstate, t=t, hp_t=hp_t, olds=olds):
                try:
                    return _client_step(alg, i, fed, gstate, olds[i], hp_t, config.seed, t)
                except DivergenceError as exc:
                    raise DivergenceError("local parameters diverged", step=exc.step,
                                          round=t, client=i) from exc

            if pool is None:
                results = [work(i) for i in plan.selected]
            else:
                results = list(pool.map(work, plan.selected))
            reports = [r for r, _ in results]
            news = {i: s for i, (_, s) in zip(plan.selected, results)}
            before = gstate
            gstate = _server_step(alg, gstate, reports, hp_t, config)
            if not np.all(np.isfinite(gstate.theta)) or np.abs(gstate.theta).max() > cl.DIVERGENCE_LIMIT:
                raise DivergenceError("global model diverged", round=t)
            cstates.update(news)
            if on_round is not None:
                on_round(t, before, reports, olds, gstate, news)
            r = t + 1
            if r % config.eval_every == 0 or r == config.T:
                rows.append(_evaluate_row(fed, config, gstate, r, config.sharpness))
    finally:
        if pool is not None:
            pool.shutdown()
    return MetricsLog(rows, config.to_dict(), config.run_id(), final_theta=gstate.theta)
