"""Fast invariant checks runnable without pytest (``fedtoga selftest``)."""
import numpy as np

from . import client as cl
from . import server as sv
from .harness import ExperimentConfig, build_federation, quadratic_optimum, run_experiment
from .numerics import Batch, MLPModel, QuadraticModel, finite_diff_grad, grad, normalize_to_radius


def _perturbation_norms():
    g = np.random.default_rng(0)
    for _ in range(500):
        v = g.standard_normal(6) * 10 ** g.uniform(-3, 3)
        rho = g.uniform(0.01, 1.0)
        if abs(np.linalg.norm(normalize_to_radius(v, rho)) - rho) > 1e-10 * rho:
            return False
    return True


def _gradient_check():
    g = np.random.default_rng(1)
    model = MLPModel((3, 5, 3))
    batch = Batch(g.standard_normal((8, 3)), g.integers(0, 3, 8))
    for _ in range(5):
        p = g.uniform(-1, 1, model.num_params)
        a, b = grad(model, p, batch), finite_diff_grad(model, p, batch)
        if np.abs(a - b).max() / (1 + np.abs(a).max()) > 1e-4:
            return False
    return True


def _reductions():
    q = QuadraticModel(np.diag([2.0, 1.0]), np.array([1.0, -1.0]))
    theta, data = np.array([0.3, 0.2]), Batch.empty()
    st = cl.ClientState(h=np.array([0.1, -0.2]))
    hp = cl.HyperParams(rho=0.0, kappa=0.0, beta=0.0, K=4, alpha=0.5)
    rng = lambda: np.random.default_rng(3)
    a, sa = cl.fedtoga_local_update(theta, np.array([0.4, 0.1]), st, data, q, hp, rng())
    b, sb = cl.feddyn_local_update(theta, st, data, q, hp, rng())
    return np.array_equal(a.theta_out, b.theta_out) and np.array_equal(sa.h, sb.h)


def _server_identity():
    g = np.random.default_rng(2)
    hp = cl.HyperParams(alpha=0.3, K=4)
    state = sv.GlobalState(g.standard_normal(4), g.standard_normal(4), np.zeros(4))
    reports = [cl.ClientReport(g.standard_normal(4), client_id=i) for i in range(4)]
    new = sv.fedtoga_server_step(state, reports, hp)
    mean = sum(r.theta_out for r in reports) / 4
    return np.abs(new.theta - mean + hp.alpha * new.h).max() <= 1e-12


def _feddyn_converges():
    cfg = ExperimentConfig(algorithm="feddyn", model="quadratic-random(d=3,seed=0)",
                           N=4, M=4, T=200, K=5, eval_every=200)
    log = run_experiment(cfg)
    target = quadratic_optimum(build_federation(cfg).client_models)
    return np.abs(log.final_theta - target).max() <= 1e-6


CHECKS = [
    ("perturbation norm equals rho", _perturbation_norms),
    ("analytic vs finite-difference gradient (mlp)", _gradient_check),
    ("FedTOGA(rho=kappa=beta=0) == FedDyn bitwise", _reductions),
    ("server identity theta' - mean + alpha h' = 0", _server_identity),
    ("FedDyn reaches the quadratic optimum", _feddyn_converges),
]


def run_selftest():
    ok = True
    for name, check in CHECKS:
        passed = bool(check())
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return 0 if ok else 1
