"""Adam optimizer and the training loop for both model families."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import network
from .diffcore import ParamVector, Tape, backward, seed_inputs
from .physics import (
    CharacteristicCrossingError,
    CollocationSet,
    LossNodes,
    LossWeights,
    PdeSpec,
    loss_lpinn,
    loss_pinn,
    residual_eulerian,
    residual_lagrangian,
)


logger = logging.getLogger("lpinn.training")


class TrainingDivergedError(Exception):
    """Loss or gradient became non-finite (or the moving grid crossed)."""

    def __init__(self, iteration: int, reason: str, history: Optional[list] = None):
        super().__init__(f"training diverged at iteration {iteration}: {reason}")
        self.iteration = iteration
        self.reason = reason
        self.history = history if history is not None else []


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 0.01

    @classmethod
    def init(cls, n_params: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
             eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, beta1, beta2, eps, lr)


def adam_step(state: AdamState, theta: ParamVector, grad: np.ndarray) -> tuple[AdamState, ParamVector]:
    """One Adam update with bias correction; purely functional in (state, theta, grad)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.values.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {theta.values.shape}")
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergedError(state.step + 1, "non-finite gradient entries")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_values = theta.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, step, state.beta1, state.beta2, state.eps, state.lr)
    return new_state, theta.with_values(new_values)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    lr: float = 0.01
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    log_every: int = 100
    batch: Optional[int] = None
    model_kind: str = "pinn"
    pde: PdeSpec = field(default_factory=lambda: PdeSpec.convection(0.0))

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")


@dataclass
class TrainReport:
    history: list[dict]
    theta: ParamVector
    wall_clock: float
    config: TrainConfig
    seed: int
    status: str = "trained"
    diverged_at: Optional[int] = None

    def final_loss(self) -> float:
        return self.history[-1]["total"] if self.history else float("nan")

    def history_columns(self) -> list[str]:
        cols = ["iter", "total", "loss_r", "loss_ic"]
        if self.history and "loss_rx" in self.history[0]:
            cols += ["loss_rx", "loss_rw"]
        return cols


# A loss builder maps (theta, interior subset) to the tape and its loss nodes.
LossBuilder = Callable[[ParamVector, Optional[np.ndarray]], tuple[Tape, LossNodes]]


def _interior_residuals(model, pde, theta, tape, x, t):
    """Forward the model on interior points and return named residual nodes."""
    x_jet, t_jet = seed_inputs(tape, x, t)
    if isinstance(model, network.LpinnModel):
        xj, wj = network.lpinn_forward(model, x_jet, t_jet, theta, tape)
        r_x, r_w = residual_lagrangian(pde, xj, wj)
        return [("loss_rx", r_x), ("loss_rw", r_w)]
    wj = network.mlp_forward(model, x_jet, t_jet, theta, tape)
    return [("loss_r", residual_eulerian(pde, wj))]


def _initial_mismatches(model, theta, tape, collocation):
    """Mismatch nodes at t = 0: state for both families, grid for the moving one."""
    x_ic, t_ic = seed_inputs(tape, collocation.x_ic, np.zeros_like(collocation.x_ic))
    targets = tape.const(collocation.w0_ic.reshape(1, -1))
    if isinstance(model, network.LpinnModel):
        xj, wj = network.lpinn_forward(model, x_ic, t_ic, theta, tape)
        ic_x = tape.sub(xj.value, tape.const(collocation.x_ic.reshape(1, -1)))
        ic_w = tape.sub(wj.value, targets)
        return [ic_x, ic_w]
    wj = network.mlp_forward(model, x_ic, t_ic, theta, tape)
    return [tape.sub(wj.value, targets)]


def make_loss_builder(model, pde: PdeSpec, collocation: CollocationSet,
                      weights: LossWeights) -> LossBuilder:
    """Assemble the full physics loss for either model family.

    For the stationary model the interior batch feeds the frame residual and
    the t = 0 points feed the state mismatch.  For the moving-frame model the
    interior coordinates are interpreted as labels x0, and the initial loss
    constrains both the grid (x(x0,0) = x0) and the state (w(x0,0) = w0(x0)).
    """
    if collocation.n_r == 0 or collocation.n_ic == 0:
        raise ValueError("collocation sets must be nonempty")
    is_lagrangian = isinstance(model, network.LpinnModel)

    def build(theta: ParamVector, idx: Optional[np.ndarray] = None) -> tuple[Tape, LossNodes]:
        pts = collocation if idx is None else collocation.subsample(idx)
        tape = Tape(theta)
        residuals = _interior_residuals(model, pde, theta, tape, pts.x_r, pts.t_r)
        mismatches = _initial_mismatches(model, theta, tape, pts)
        if is_lagrangian:
            nodes = loss_lpinn(tape, residuals[0][1], residuals[1][1],
                               mismatches[0], mismatches[1], weights)
        else:
            nodes = loss_pinn(tape, residuals[0][1], mismatches[0], weights)
        return tape, nodes

    return build


def _chunk_tape(model, pde, collocation, weights, theta, lo, hi, with_ic):
    """Tape whose scalar sums to the full loss when accumulated over all chunks:
    residual squares are normalized by the full interior count."""
    tape = Tape(theta)
    residuals = _interior_residuals(
        model, pde, theta, tape, collocation.x_r[lo:hi], collocation.t_r[lo:hi]
    )
    total = None
    for _, node in residuals:
        term = tape.scale(tape.sum(tape.square(node)), weights.lam_r / collocation.n_r)
        total = term if total is None else tape.add(total, term)
    if with_ic:
        for node in _initial_mismatches(model, theta, tape, collocation):
            term = tape.scale(tape.sum(tape.square(node)), weights.lam_ic / collocation.n_ic)
            total = tape.add(total, term)
    return tape, total


def chunked_scalar_loss(model, pde: PdeSpec, collocation: CollocationSet,
                        weights: LossWeights, chunk: int = 2048) -> Callable[[ParamVector], float]:
    """Full-collocation loss evaluated chunk by chunk to bound memory."""

    def evaluate(theta: ParamVector) -> float:
        total = 0.0
        for lo in range(0, collocation.n_r, chunk):
            hi = min(lo + chunk, collocation.n_r)
            tape, node = _chunk_tape(model, pde, collocation, weights, theta, lo, hi, lo == 0)
            total += float(tape.vals[node])
        return total

    return evaluate


def chunked_gradient(model, pde: PdeSpec, collocation: CollocationSet,
                     weights: LossWeights, chunk: int = 2048) -> Callable[[ParamVector], np.ndarray]:
    """Exact full-collocation loss gradient, accumulated over chunk tapes."""

    def evaluate(theta: ParamVector) -> np.ndarray:
        grad = np.zeros(len(theta))
        for lo in range(0, collocation.n_r, chunk):
            hi = min(lo + chunk, collocation.n_r)
            tape, node = _chunk_tape(model, pde, collocation, weights, theta, lo, hi, lo == 0)
            grad += backward(tape, node).values
        return grad

    return evaluate


def train(config: TrainConfig, model, collocation: CollocationSet,
          theta: Optional[ParamVector] = None) -> TrainReport:
    """Run Adam on the physics loss; deterministic for a fixed seed.

    Divergence (non-finite loss or gradient, or a crossed moving grid) raises
    ``TrainingDivergedError`` carrying the iteration; it is never reported as
    a silent NaN in the history.
    """
    if theta is None:
        theta = network.init_params(model, config.seed)
    build = make_loss_builder(model, config.pde, collocation, config.weights)
    batch_rng = np.random.default_rng(config.seed)
    use_batch = config.batch is not None and config.batch < collocation.n_r

    state = AdamState.init(len(theta), config.lr)
    history: list[dict] = []
    started = time.perf_counter()
    for it in range(1, config.iterations + 1):
        idx = None
        if use_batch:
            idx = batch_rng.choice(collocation.n_r, size=config.batch, replace=False)
        try:
            # divergence is detected explicitly, so silence transient overflows
            with np.errstate(over="ignore", invalid="ignore"):
                tape, nodes = build(theta, idx)
        except CharacteristicCrossingError as exc:
            raise TrainingDivergedError(it, str(exc), history) from exc
        total = float(tape.vals[nodes.total])
        if not np.isfinite(total):
            raise TrainingDivergedError(it, f"loss = {total}", history)
        if it == 1 or it == config.iterations or it % config.log_every == 0:
            row = {"iter": it, "total": total}
            for name, node in nodes.parts.items():
                row[name] = float(tape.vals[node])
            history.append(row)
            logger.info("iter %d  loss %.6e", it, total)
        with np.errstate(over="ignore", invalid="ignore"):
            grad = backward(tape, nodes.total)
        try:
            state, theta = adam_step(state, theta, grad.values)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(it, exc.reason, history) from exc
    wall = time.perf_counter() - started
    return TrainReport(history, theta, wall, config, config.seed)


# -- serialization --------------------------------------------------------------

def report_to_json_dict(report: TrainReport) -> dict:
    cfg = report.config
    return {
        "status": report.status,
        "diverged_at": report.diverged_at,
        "seed": report.seed,
        "wall_clock_seconds": report.wall_clock,
        "final_loss": report.final_loss(),
        "config": {
            "iterations": cfg.iterations,
            "lr": cfg.lr,
            "weights": {"lam_r": cfg.weights.lam_r, "lam_bc": cfg.weights.lam_bc,
                        "lam_ic": cfg.weights.lam_ic},
            "seed": cfg.seed,
            "log_every": cfg.log_every,
            "batch": cfg.batch,
            "model_kind": cfg.model_kind,
            "pde": {"kind": cfg.pde.kind, "c": cfg.pde.c, "nu": cfg.pde.nu},
        },
        "history": report.history,
    }


def write_loss_csv(report: TrainReport, path, header_lines: Optional[list[str]] = None) -> None:
    cols = report.history_columns()
    with open(path, "w") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        fh.write(",".join(cols) + "\n")
        for row in report.history:
            cells = [str(row["iter"])] + [f"{row[c]:.17g}" for c in cols[1:]]
            fh.write(",".join(cells) + "\n")
