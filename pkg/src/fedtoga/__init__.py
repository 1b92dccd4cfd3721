"""Deterministic federated-optimisation simulator: FedTOGA and baselines."""
from .client import (ClientReport, ClientState, HyperParams, compute_perturbation,
                     fedavg_local_update, feddyn_local_update, fedlesam_d_local_update,
                     fedsam_local_update, fedsmoo_local_update, fedspeed_local_update,
                     fedtoga_local_update)
from .data import (ClientShard, Dataset, PartitionSpec, dirichlet_partition,
                   gen_synthetic_classification, load_csv, pathological_partition)
from .errors import (ConfigError, ContractError, DivergenceError, FedOptError, ParseError,
                     ProtocolError)
from .harness import (ExperimentConfig, MetricsLog, evaluate, rounds_to_target, run_experiment,
                      sharpness_probe)
from .numerics import (Batch, LogisticModel, MLPModel, QuadraticModel, finite_diff_grad, grad,
                       loss, normalize_to_radius)
from .server import (GlobalState, RoundPlan, fedavg_server_step, feddyn_server_step,
                     fedsmoo_server_step, fedtoga_server_step, sample_clients)

__version__ = "0.1.0"
