"""Local training loops for FedTOGA and the baselines it is compared with.

Each update is a pure function of the incoming global state, the client's
own data and persistent state, and a private random stream. Nothing is
mutated in place; new client state is returned.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import BatchSampler
from .errors import ContractError, DivergenceError
from .numerics import NORMALIZE_EPS, grad, normalize_to_radius

PERTURBATION_MODES = ("plain", "toga", "neighborhood", "fusion")
DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class HyperParams:
    eta_l: float = 0.1
    lr_decay: float = 0.998
    rho: float = 0.1
    alpha: float = 0.1
    beta: float = 0.9
    kappa: float = 1.0
    K: int = 5
    batch_size: int = 50
    perturbation_mode: str = "toga"
    # False removes the proximal term and freezes h_i (the alpha -> inf limit)
    prox_enabled: bool = True

    def __post_init__(self):
        checks = [
            ("eta_l", self.eta_l > 0, "> 0"),
            ("lr_decay", 0 < self.lr_decay <= 1, "in (0, 1]"),
            ("rho", self.rho >= 0, ">= 0"),
            ("alpha", self.alpha > 0, "> 0"),
            ("beta", self.beta >= 0, ">= 0"),
            ("kappa", self.kappa >= 0, ">= 0"),
            ("K", self.K >= 1, ">= 1"),
            ("batch_size", self.batch_size >= 1, ">= 1"),
        ]
        for name, ok, rule in checks:
            if not ok:
                raise ContractError(f"{name} must be {rule}")
        if self.perturbation_mode not in PERTURBATION_MODES:
            raise ContractError(
                f"perturbation_mode must be one of {PERTURBATION_MODES}, got {self.perturbation_mode!r}")

    def at_round(self, t):
        """Hyperparameters with the local learning rate decayed to round ``t``."""
        return replace(self, eta_l=self.eta_l * self.lr_decay ** t)


@dataclass(frozen=True, eq=False)
class ClientState:
    h: np.ndarray
    cached_sam_grad: Optional[np.ndarray] = None
    theta_old: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None  # FedSMOO only

    @classmethod
    def zeros(cls, d):
        return cls(h=np.zeros(d))


@dataclass(frozen=True, eq=False)
class ClientReport:
    theta_out: np.ndarray
    extra: Optional[np.ndarray] = None
    client_id: int = 0


def compute_perturbation(g, cached, delta_global, hp, mode=None):
    """Ascent step of radius ``hp.rho`` for the given perturbation mode.

    plain: g; toga: g + kappa*Delta; neighborhood: cached + kappa*Delta
    (falls back to toga while the cache is empty); fusion: g + cached +
    kappa*Delta with an empty cache counting as zero.
    """
    mode = hp.perturbation_mode if mode is None else mode
    vecs = [v for v in (g, cached, delta_global) if v is not None]
    if any(v.shape != vecs[0].shape for v in vecs):
        raise ContractError("perturbation inputs have different lengths")
    if mode == "plain":
        num = g
    elif mode == "toga" or (mode == "neighborhood" and cached is None):
        num = g + hp.kappa * delta_global
    elif mode == "neighborhood":
        num = cached + hp.kappa * delta_global
    elif mode == "fusion":
        num = (g if cached is None else g + cached) + hp.kappa * delta_global
    else:
        raise ContractError(f"unknown perturbation mode {mode!r}")
    return normalize_to_radius(num, hp.rho, NORMALIZE_EPS)


def _guard(theta, step):
    if not np.all(np.isfinite(theta)) or np.abs(theta).max() > DIVERGENCE_LIMIT:
        raise DivergenceError("local parameters diverged", step=step)


def _dyn_step(theta, theta0, g, h, hp, correction=None):
    """One step on the (optionally corrected) augmented Lagrangian."""
    d = g - h
    if hp.prox_enabled:
        d = d + (theta - theta0) / hp.alpha
    if correction is not None:
        d = d + correction
    return theta - hp.eta_l * d


def _dual_update(h, theta, theta0, hp):
    return h - (theta - theta0) / hp.alpha


def _start(theta_global, data, hp, rng):
    theta0 = np.array(theta_global, dtype=np.float64)
    return theta0, theta0.copy(), BatchSampler(data, hp.batch_size, rng)


def fedavg_local_update(theta_global, data, model, hp, rng, client_id=0):
    _, theta, sampler = _start(theta_global, data, hp, rng)
    for k in range(hp.K):
        theta = theta - hp.eta_l * grad(model, theta, sampler.next())
        _guard(theta, k)
    return ClientReport(theta, client_id=client_id)


def fedsam_local_update(theta_global, data, model, hp, rng, client_id=0):
    _, theta, sampler = _start(theta_global, data, hp, rng)
    for k in range(hp.K):
        batch = sampler.next()
        delta = compute_perturbation(grad(model, theta, batch), None, None, hp, mode="plain")
        theta = theta - hp.eta_l * grad(model, theta + delta, batch)
        _guard(theta, k)
    return ClientReport(theta, client_id=client_id)


def feddyn_local_update(theta_global, state, data, model, hp, rng, client_id=0):
    theta0, theta, sampler = _start(theta_global, data, hp, rng)
    for k in range(hp.K):
        theta = _dyn_step(theta, theta0, grad(model, theta, sampler.next()), state.h, hp)
        _guard(theta, k)
    new_state = replace(state, h=_dual_update(state.h, theta, theta0, hp))
    return ClientReport(theta, client_id=client_id), new_state


def fedspeed_local_update(theta_global, state, data, model, hp, rng, client_id=0):
    """FedDyn with a plain local SAM ascent step."""
    theta0, theta, sampler = _start(theta_global, data, hp, rng)
    for k in range(hp.K):
        batch = sampler.next()
        delta = compute_perturbation(grad(model, theta, batch), None, None, hp, mode="plain")
        theta = _dyn_step(theta, theta0, grad(model, theta + delta, batch), state.h, hp)
        _guard(theta, k)
    new_state = replace(state, h=_dual_update(state.h, theta, theta0, hp))
    return ClientReport(theta, client_id=client_id), new_state


def fedtoga_local_update(theta_global, delta_global, state, data, model, hp, rng, client_id=0):
    """K steps of Delta-corrected SAM on the Delta-corrected dual objective.

    ``delta_global`` enters twice: ``kappa * Delta`` is added to the ascent
    direction, ``beta * Delta`` to every descent step. The cached SAM
    gradient (neighborhood/fusion modes) starts empty each round.
    """
    theta0, theta, sampler = _start(theta_global, data, hp, rng)
    delta_global = np.asarray(delta_global, dtype=np.float64)
    if delta_global.shape != theta.shape:
        raise ContractError("global update and parameters have different lengths")
    correction = hp.beta * delta_global
    cached = None
    for k in range(hp.K):
        batch = sampler.next()
        if hp.perturbation_mode == "neighborhood" and cached is not None:
            g = None
        else:
            g = grad(model, theta, batch)
        delta = compute_perturbation(g, cached, delta_global, hp)
        g_sam = grad(model, theta + delta, batch)
        theta = _dyn_step(theta, theta0, g_sam, state.h, hp, correction)
        cached = g_sam
        _guard(theta, k)
    h = _dual_update(state.h, theta, theta0, hp) if hp.prox_enabled else state.h
    return ClientReport(theta, client_id=client_id), replace(state, h=h, cached_sam_grad=cached)


def fedsmoo_local_update(theta_global, s_global, state, data, model, hp, rng, client_id=0):
    theta0, theta, sampler = _start(theta_global, data, hp, rng)
    s = np.asarray(s_global, dtype=np.float64)
    mu = np.zeros_like(theta) if state.mu is None else state.mu
    s_hat = np.zeros_like(theta)
    for k in range(hp.K):
        batch = sampler.next()
        s_hat = normalize_to_radius(grad(model, theta, batch) - mu - s, hp.rho)
        mu = mu + (s_hat - s)
        theta = _dyn_step(theta, theta0, grad(model, theta + s_hat, batch), state.h, hp)
        _guard(theta, k)
    s_tilde = mu - s_hat
    new_state = replace(state, h=_dual_update(state.h, theta, theta0, hp), mu=mu)
    return ClientReport(theta, extra=s_tilde, client_id=client_id), new_state


def fedlesam_d_local_update(theta_global, state, data, model, hp, rng, client_id=0):
    theta0, theta, sampler = _start(theta_global, data, hp, rng)
    if state.theta_old is None:
        delta = np.zeros_like(theta)
    else:
        delta = normalize_to_radius(state.theta_old - theta0, hp.rho)
    for k in range(hp.K):
        theta = _dyn_step(theta, theta0, grad(model, theta + delta, sampler.next()), state.h, hp)
        _guard(theta, k)
    new_state = replace(state, h=_dual_update(state.h, theta, theta0, hp), theta_old=theta0)
    return ClientReport(theta, client_id=client_id), new_state
