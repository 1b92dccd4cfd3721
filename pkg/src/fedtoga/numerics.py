"""Parameter-vector arithmetic and the three differentiable model kinds.

Parameters are plain 1-D float64 numpy arrays. Models are small frozen
dataclasses; ``loss``/``grad`` dispatch on the model type.
"""
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import kernels
from .errors import ContractError

NORMALIZE_EPS = 1e-12


def as_params(values):
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 1:
        raise ContractError(f"parameter vector must be 1-D and non-empty, got shape {v.shape}")
    return v


def normalize_to_radius(v, rho, eps=NORMALIZE_EPS):
    """Rescale ``v`` to Euclidean norm ``rho``; zero vector if ``||v|| <= eps``."""
    if rho < 0 or eps < 0:
        raise ContractError("rho and eps must be non-negative")
    n = float(np.linalg.norm(v))
    if n <= eps or rho == 0:
        return np.zeros_like(v, dtype=np.float64)
    return v * (rho / n)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ContractError(
                f"batch has {len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @classmethod
    def empty(cls, dim=0):
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class QuadraticModel:
    """``f(theta) = 1/2 (theta - c)^T A (theta - c)``; ignores the batch."""

    A: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        c = np.array(self.c, dtype=np.float64).ravel()
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != c.shape[0] or c.shape[0] < 1:
            raise ContractError(f"quadratic needs A (d, d) and c (d,), got {A.shape} and {c.shape}")
        scale = max(1.0, float(np.abs(A).max()))
        if np.abs(A - A.T).max() > 1e-12 * scale:
            raise ContractError("quadratic A must be symmetric")
        if np.linalg.eigvalsh(A).min() < -1e-10 * scale:
            raise ContractError("quadratic A must be positive semidefinite")
        A.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @property
    def num_params(self):
        return self.c.shape[0]

    num_classes = 0


@dataclass(frozen=True)
class LogisticModel:
    """Linear classifier without intercept.

    Two classes: ``p(y=1|x) = sigmoid(w . x)`` with ``w`` of length ``dim``.
    More classes: softmax over ``W x`` with ``W`` stored row-major ``(C, dim)``.
    """

    dim: int
    num_classes: int = 2

    def __post_init__(self):
        if self.dim < 1 or self.num_classes < 2:
            raise ContractError("logistic model needs dim >= 1 and num_classes >= 2")

    @property
    def num_params(self):
        return self.dim if self.num_classes == 2 else self.dim * self.num_classes

    @property
    def widths(self):
        return np.array([self.dim, self.num_classes], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class MLPModel:
    """tanh MLP with a softmax cross-entropy head. ``widths`` = (in, hidden..., classes)."""

    widths: tuple

    def __post_init__(self):
        w = tuple(int(x) for x in self.widths)
        if len(w) < 3:
            raise ContractError("mlp needs at least one hidden layer")
        if min(w) < 1:
            raise ContractError("mlp layer widths must be >= 1")
        if w[-1] < 2:
            raise ContractError("mlp needs at least 2 output classes")
        object.__setattr__(self, "widths", w)
        object.__setattr__(self, "_w", np.array(w, dtype=np.int64))

    def __eq__(self, other):
        return isinstance(other, MLPModel) and self.widths == other.widths

    def __hash__(self):
        return hash(self.widths)

    @property
    def num_params(self):
        return kernels.mlp_param_count(self.widths)

    @property
    def num_classes(self):
        return self.widths[-1]


ModelSpec = Union[QuadraticModel, LogisticModel, MLPModel]


def _check(model, params, batch):
    if params.shape != (model.num_params,):
        raise ContractError(
            f"params have shape {params.shape}, model expects ({model.num_params},)")
    if not isinstance(model, QuadraticModel):
        if len(batch) == 0:
            raise ContractError("classification loss needs a non-empty batch")
        if batch.inputs.ndim != 2 or batch.inputs.shape[1] != _input_dim(model):
            raise ContractError(
                f"batch inputs have shape {batch.inputs.shape}, model input dim is {_input_dim(model)}")


def _input_dim(model):
    return model.dim if isinstance(model, LogisticModel) else model.widths[0]


def loss(model, params, batch=None):
    """Mean loss of ``model`` at ``params`` over ``batch``."""
    params = np.asarray(params, dtype=np.float64)
    if isinstance(model, QuadraticModel):
        _check(model, params, batch)
        r = params - model.c
        return 0.5 * float(r @ (model.A @ r))
    _check(model, params, batch)
    X, y = batch.inputs, batch.labels
    if isinstance(model, LogisticModel):
        if model.num_classes == 2:
            return kernels.logistic_loss(params, X, y)
        return kernels.mlp_loss(params, X, y, model.widths, False)
    return kernels.mlp_loss(params, X, y, model._w, True)


def loss_and_grad(model, params, batch=None):
    params = np.asarray(params, dtype=np.float64)
    if isinstance(model, QuadraticModel):
        _check(model, params, batch)
        r = params - model.c
        Ar = model.A @ r
        return 0.5 * float(r @ Ar), Ar
    _check(model, params, batch)
    X, y = batch.inputs, batch.labels
    if isinstance(model, LogisticModel):
        if model.num_classes == 2:
            return kernels.logistic_loss_grad(params, X, y)
        return kernels.mlp_loss_grad(params, X, y, model.widths, False)
    return kernels.mlp_loss_grad(params, X, y, model._w, True)


def grad(model, params, batch=None):
    return loss_and_grad(model, params, batch)[1]


def finite_diff_grad(model, params, batch=None, h=1e-5):
    """Central-difference gradient, one coordinate at a time."""
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    params = np.asarray(params, dtype=np.float64)
    out = np.empty_like(params)
    for j in range(params.shape[0]):
        e = np.zeros_like(params)
        e[j] = h
        out[j] = (loss(model, params + e, batch) - loss(model, params - e, batch)) / (2 * h)
    return out


def logits(model, params, inputs):
    """Class scores, shape ``(n, num_classes)``; not defined for quadratics."""
    if isinstance(model, QuadraticModel):
        raise ContractError("quadratic model has no class scores")
    X = np.asarray(inputs, dtype=np.float64)
    if isinstance(model, LogisticModel):
        if model.num_classes == 2:
            z = X @ params
            return np.stack([np.zeros_like(z), z], axis=1)
        return kernels.mlp_logits(params, X, model.widths, False)
    return kernels.mlp_logits(params, X, model._w, True)


def init_params(model, rng):
    """Initial parameters: zeros for quadratics, U(-1/sqrt(fan_in), +) otherwise."""
    if isinstance(model, QuadraticModel):
        return np.zeros(model.num_params)
    if isinstance(model, LogisticModel):
        bound = 1.0 / np.sqrt(model.dim)
        return rng.uniform(-bound, bound, size=model.num_params)
    chunks = []
    for n_in, n_out in zip(model.widths[:-1], model.widths[1:]):
        bound = 1.0 / np.sqrt(n_in)
        chunks.append(rng.uniform(-bound, bound, size=n_out * n_in))
        chunks.append(rng.uniform(-bound, bound, size=n_out))
    return np.concatenate(chunks)
