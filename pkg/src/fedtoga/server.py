"""Client sampling and per-algorithm aggregation.

Reports are always summed in ascending client-id order, so every server step
is bitwise invariant to the order in which reports arrive.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, ProtocolError
from .numerics import normalize_to_radius


@dataclass(frozen=True, eq=False)
class GlobalState:
    theta: np.ndarray
    h: np.ndarray
    delta: np.ndarray
    s: Optional[np.ndarray] = None
    round: int = 0

    @classmethod
    def initial(cls, theta0, with_s=False):
        theta0 = np.array(theta0, dtype=np.float64)
        z = np.zeros_like(theta0)
        return cls(theta=theta0, h=z, delta=z.copy(), s=z.copy() if with_s else None)


@dataclass(frozen=True)
class RoundPlan:
    selected: tuple


def sample_clients(N, M, seed, round):
    if not 1 <= M <= N:
        raise ConfigError(f"M exceeds N" if M > N else "M must be >= 1")
    if M == N:
        return RoundPlan(tuple(range(N)))
    g = rngmod.stream(seed, rngmod.SAMPLE_CLIENTS, round)
    chosen = g.choice(N, size=M, replace=False)
    return RoundPlan(tuple(int(i) for i in np.sort(chosen)))


def _stack(reports, theta):
    if not reports:
        raise ProtocolError("server step received no client reports")
    ordered = sorted(reports, key=lambda r: r.client_id)
    thetas = np.stack([r.theta_out for r in ordered])
    if thetas.shape[1:] != theta.shape:
        raise ProtocolError("report length does not match the global model")
    return ordered, thetas


def _sum_rows(a):
    # sequential accumulation: the order is fixed by the sort above
    acc = a[0].copy()
    for row in a[1:]:
        acc = acc + row
    return acc


def global_update(state, thetas, K):
    """``-(1/(M K)) * sum_i (theta_i - theta)``."""
    M = thetas.shape[0]
    return -_sum_rows(thetas - state.theta) / (M * K)


def fedavg_server_step(state, reports, hp=None):
    """Plain averaging. Delta is still computed, as a diagnostic only."""
    _, thetas = _stack(reports, state.theta)
    M = thetas.shape[0]
    K = hp.K if hp is not None else 1
    return replace(state, theta=_sum_rows(thetas) / M,
                   delta=global_update(state, thetas, K), round=state.round + 1)


def _dyn_aggregate(state, thetas, hp, divisor):
    M = thetas.shape[0]
    h = state.h - _sum_rows(thetas - state.theta) / (hp.alpha * divisor)
    delta = global_update(state, thetas, hp.K)
    theta = _sum_rows(thetas) / M - hp.alpha * h
    return h, delta, theta


def _divisor(dual_divisor, default, M, N):
    which = dual_divisor or default
    if which == "participants":
        return M
    if which == "all_clients":
        if N is None:
            raise ConfigError("dual_divisor 'all_clients' needs the total client count N")
        return N
    raise ConfigError(f"unknown dual_divisor {which!r}")


def fedtoga_server_step(state, reports, hp, N=None, dual_divisor=None):
    """Dual update, global-update estimate, then the corrected average, in that order."""
    _, thetas = _stack(reports, state.theta)
    div = _divisor(dual_divisor, "participants", thetas.shape[0], N)
    h, delta, theta = _dyn_aggregate(state, thetas, hp, div)
    return replace(state, theta=theta, h=h, delta=delta, round=state.round + 1)


def feddyn_server_step(state, reports, hp, N, dual_divisor=None):
    _, thetas = _stack(reports, state.theta)
    div = _divisor(dual_divisor, "all_clients", thetas.shape[0], N)
    h, delta, theta = _dyn_aggregate(state, thetas, hp, div)
    return replace(state, theta=theta, h=h, delta=delta, round=state.round + 1)


fedlesam_d_server_step = feddyn_server_step


def fedsmoo_server_step(state, reports, hp, N, dual_divisor=None):
    ordered, thetas = _stack(reports, state.theta)
    if any(r.extra is None for r in ordered):
        raise ProtocolError("FedSMOO report is missing its perturbation estimate")
    s_mean = _sum_rows(np.stack([r.extra for r in ordered])) / len(ordered)
    s = normalize_to_radius(s_mean, hp.rho)
    div = _divisor(dual_divisor, "all_clients", thetas.shape[0], N)
    h, delta, theta = _dyn_aggregate(state, thetas, hp, div)
    return replace(state, theta=theta, h=h, delta=delta, s=s, round=state.round + 1)
