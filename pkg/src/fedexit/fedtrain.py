"""Round loop: exit sampling, local SGD, weighted pseudo-gradient aggregation.

Each round the server samples one exit per client, broadcasts the global
model, lets every client run a few local SGD steps on its sampled exit, and
folds the parameter deltas back with weights that combine the exit's
aggregation weight, the client's share of that exit's data pool, and the
inverse sampling probability. The result is projected onto an
origin-centered ball. All randomness comes from streams keyed by
(seed, round, client), so runs are bit-reproducible regardless of execution
order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import EmptyPoolError, ZeroProbabilityError
from .objective import weighted_objective
from .strategies import ExitPools, ExitWeights, SamplingMatrix, exit_pools
from .topology import Topology

SCHEDULES = ("constant", "theory", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the round loop.

    The ``theory`` schedule needs the curvature constants ``mu`` and
    ``smoothness``; its offset defaults to ``max(8 * smoothness / mu,
    local_steps) - 1``. ``constant`` and ``cosine`` schedules use
    ``base_lr``. Momentum is an engineering option outside the convergence
    analysis; the bounds assume it is 0.
    """

    rounds: int
    local_steps: int
    batch_size: int = 32
    server_lr: float = 1.0
    lr_schedule: str = "constant"
    base_lr: float = 0.1
    mu: float = 0.0
    smoothness: float = 0.0
    gamma: float | None = None
    projection_radius: float = 1e6
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.server_lr <= 0:
            raise ValueError("server_lr must be positive")
        if self.projection_radius <= 0:
            raise ValueError("projection_radius must be positive")
        if self.lr_schedule not in SCHEDULES:
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.lr_schedule == "theory":
            if self.mu <= 0 or self.smoothness < self.mu:
                raise ValueError("theory schedule needs 0 < mu <= smoothness")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    @property
    def gamma_value(self) -> float:
        if self.gamma is not None:
            return self.gamma
        kappa = self.smoothness / self.mu if self.mu > 0 else 1.0
        return max(8.0 * kappa, float(self.local_steps)) - 1.0


def learning_rate(cfg: TrainConfig, t: int, j: int) -> float:
    """Local step size at round ``t`` (1-based) and local step ``j`` (0-based)."""
    if cfg.lr_schedule == "theory":
        step = (t - 1) * cfg.local_steps + j
        return 2.0 / (cfg.mu * (cfg.gamma_value + step + 1.0))
    if cfg.lr_schedule == "cosine":
        step = (t - 1) * cfg.local_steps + j
        horizon = cfg.rounds * cfg.local_steps
        return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * step / horizon))
    return cfg.base_lr


@dataclass(frozen=True)
class RoundSample:
    """One (client, exit) pair per client for a single round."""

    pairs: tuple[tuple[str, int], ...]


def sample_round(sampling: SamplingMatrix, rng: np.random.Generator) -> RoundSample:
    """Draw every client's exit independently from its categorical row."""
    u = rng.random(len(sampling.clients))
    cumulative = sampling.row_cumsum
    pairs = []
    for i, client in enumerate(sampling.clients):
        exit_idx = int(np.searchsorted(cumulative[i], u[i], side="right"))
        exit_idx = min(exit_idx, sampling.num_exits - 1)
        pairs.append((client, exit_idx + 1))
    return RoundSample(pairs=tuple(pairs))


def local_update(
    task,
    w_start: np.ndarray,
    client: str,
    exit: int,
    cfg: TrainConfig,
    t: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run the local mini-batch SGD steps for one sampled (client, exit) pair.

    Coordinates outside the exit's active set carry zero gradient and come
    back bit-identical to the broadcast model.
    """
    w = w_start.copy()
    velocity = np.zeros_like(w) if cfg.momentum > 0 else None
    for j in range(cfg.local_steps):
        grad = task.stochastic_gradient(w, client, exit, cfg.batch_size, rng)
        eta = learning_rate(cfg, t, j)
        if velocity is not None:
            velocity = cfg.momentum * velocity + grad
            w = w - eta * velocity
        else:
            w = w - eta * grad
    return w


def project_ball(v: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm <= radius:
        return v
    return v * (radius / norm)


def aggregate_preprojection(
    w_t: np.ndarray,
    updates: list[tuple[str, int, np.ndarray]],
    weights: ExitWeights,
    sampling: SamplingMatrix,
    pools: ExitPools,
    sizes: dict[str, int],
    server_lr: float,
) -> np.ndarray:
    """Weighted pseudo-gradient sum, reduced in ascending client order."""
    delta = np.zeros_like(w_t)
    for client, exit, w_end in sorted(updates, key=lambda u: u[0]):
        prob = sampling.prob(client, exit)
        if prob <= 0:
            raise ZeroProbabilityError(f"update from ({client}, exit {exit}) with p=0")
        coef = (
            weights.weights[exit - 1]
            * (sizes[client] / pools.sizes[exit - 1])
            / prob
        )
        delta += coef * (w_end - w_t)
    return w_t + server_lr * delta


def aggregate(
    w_t: np.ndarray,
    updates: list[tuple[str, int, np.ndarray]],
    weights: ExitWeights,
    sampling: SamplingMatrix,
    pools: ExitPools,
    sizes: dict[str, int],
    server_lr: float,
    radius: float,
) -> np.ndarray:
    raw = aggregate_preprojection(w_t, updates, weights, sampling, pools, sizes, server_lr)
    return project_ball(raw, radius)


@dataclass
class Trajectory:
    """Per-round summary of a run; index 0 is the initial model."""

    objective: np.ndarray
    dist_to_opt: np.ndarray | None = None
    snapshots: list[np.ndarray] = field(default_factory=list)


def run(
    topology: Topology,
    task,
    weights: ExitWeights,
    sampling: SamplingMatrix,
    cfg: TrainConfig,
    w_init: np.ndarray | None = None,
    w_star: np.ndarray | None = None,
    record_snapshots: bool = False,
) -> tuple[np.ndarray, Trajectory]:
    """Train for ``cfg.rounds`` rounds and return the last iterate.

    Raises:
        EmptyPoolError: some exit has no client able to train it.
        ValueError: task and topology disagree on client dataset sizes.
    """
    pools = exit_pools(topology, sampling)
    for client in sampling.clients:
        if task.sizes[client] != topology.by_id[client].dataset_size:
            raise ValueError(
                f"client {client}: task holds {task.sizes[client]} samples but "
                f"topology declares {topology.by_id[client].dataset_size}"
            )
    for e in range(1, weights.num_exits + 1):
        if weights.weights[e - 1] > 0 and pools.sizes[e - 1] <= 0:
            raise EmptyPoolError(f"exit {e} is weighted but has no pooled data")

    if w_init is None:
        w = task.init_params(rngmod.stream(cfg.seed, rngmod.INIT))
    else:
        w = np.asarray(w_init, dtype=float).copy()
    sizes = dict(task.sizes)

    objective = np.zeros(cfg.rounds + 1)
    dist = np.zeros(cfg.rounds + 1) if w_star is not None else None
    snapshots: list[np.ndarray] = []

    def record(index: int, vec: np.ndarray) -> None:
        objective[index] = weighted_objective(task, vec, weights, pools)
        if dist is not None:
            dist[index] = float(np.linalg.norm(vec - w_star))
        if record_snapshots:
            snapshots.append(vec.copy())

    record(0, w)
    client_order = {c: i for i, c in enumerate(sampling.clients)}
    for t in range(1, cfg.rounds + 1):
        round_rng = rngmod.stream(cfg.seed, rngmod.ROUND_SAMPLE, t)
        chosen = sample_round(sampling, round_rng)
        updates = []
        for client, exit in chosen.pairs:
            local_rng = rngmod.stream(cfg.seed, rngmod.LOCAL, t, client_order[client])
            updates.append((client, exit, local_update(task, w, client, exit, cfg, t, local_rng)))
        w = aggregate(
            w, updates, weights, sampling, pools, sizes, cfg.server_lr, cfg.projection_radius
        )
        record(t, w)

    return w, Trajectory(objective=objective, dist_to_opt=dist, snapshots=snapshots)
