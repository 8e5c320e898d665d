"""Experiment runner: plain-text configs, train/evaluate/landscape/nwidth/
reference/sweep subcommands, and all artifact files.

Every numeric artifact carries the config hash and seed; runs with equal
hash and seed are bit-identical in single-threaded mode.  Floats in CSV
output use 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, network, physics, reference, training
from .analysis import ConvergenceFailure, lagrangian_to_eulerian, modes_for_energy
from .diffcore import ParamVector, Tape, seed_inputs
from .physics import CharacteristicCrossingError, LossWeights, PdeSpec
from .reference import Field
from .training import TrainConfig, TrainingDivergedError

logger = logging.getLogger("lpinn")

EVAL_CHUNK = 2048


class ConfigError(Exception):
    """Invalid configuration; message is anchored to the offending line."""


# --------------------------------------------------------------------------
# config schema
# --------------------------------------------------------------------------

# section -> key -> (type tag, default); order fixes the canonical layout
SCHEMA = {
    "pde": {
        "kind": ("str", "convection"),
        "c": ("float", 0.0),
        "nu": ("float", 0.0),
    },
    "model": {
        "kind": ("str", "lpinn"),
        "width": ("int", 50),
        "depth": ("int", 4),
        "xbranch_width": ("int", 50),
        "xbranch_depth": ("int", 2),
        "periodic_embedding": ("bool", True),
        "predict_displacement": ("bool", True),
    },
    "grid": {
        "nx": ("int", 256),
        "nt": ("int", 100),
        "t_final": ("float", 1.0),
        "ic": ("str", ""),
    },
    "training": {
        "iterations": ("int", 20000),
        "lr": ("float", 0.01),
        "lambda_r": ("float", 10.0),
        "lambda_bc": ("float", 0.0),
        "lambda_ic": ("float", 1000.0),
        "seed": ("int", 0),
        "log_every": ("int", 100),
        "batch": ("batch", 2048),
    },
    "outputs": {
        "dir": ("str", "runs/out"),
        "field_format": ("str", "csv"),
    },
}

_FIELD_NAMES = {
    ("pde", "kind"): "pde_kind",
    ("model", "kind"): "model_kind",
    ("outputs", "dir"): "out_dir",
}


def _field_name(section: str, key: str) -> str:
    return _FIELD_NAMES.get((section, key), key)


@dataclass(frozen=True)
class ExperimentConfig:
    pde_kind: str = "convection"
    c: float = 0.0
    nu: float = 0.0
    model_kind: str = "lpinn"
    width: int = 50
    depth: int = 4
    xbranch_width: int = 50
    xbranch_depth: int = 2
    periodic_embedding: bool = True
    predict_displacement: bool = True
    nx: int = 256
    nt: int = 100
    t_final: float = 1.0
    ic: str = ""
    iterations: int = 20000
    lr: float = 0.01
    lambda_r: float = 10.0
    lambda_bc: float = 0.0
    lambda_ic: float = 1000.0
    seed: int = 0
    log_every: int = 100
    batch: Optional[int] = 2048
    out_dir: str = "runs/out"
    field_format: str = "csv"


def _parse_value(tag: str, raw: str, where: str):
    try:
        if tag == "str":
            return raw
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if tag == "batch":
            if raw.lower() == "full":
                return None
            return int(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {tag}") from None
    raise ConfigError(f"{where}: unknown value type {tag}")  # pragma: no cover


def _format_value(tag: str, value) -> str:
    if tag == "bool":
        return "true" if value else "false"
    if tag == "batch":
        return "full" if value is None else str(value)
    if tag == "float":
        return repr(float(value))
    return str(value)


def parse_config_text(text: str, path: str = "<config>") -> ExperimentConfig:
    """Parse the sectioned key-value format, rejecting unknown keys with
    messages anchored to their line."""
    values = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        where = f"{path}:{lineno}"
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigError(f"{where}: key outside any [section]")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
        field = _field_name(section, key)
        if field in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        tag, _ = SCHEMA[section][key]
        values[field] = _parse_value(tag, raw, where)
    cfg = ExperimentConfig(**values)
    return validate_config(cfg, path)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{path}: no such config file")
    return parse_config_text(p.read_text(), str(path))


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (tag, _) in keys.items():
            value = getattr(cfg, _field_name(section, key))
            lines.append(f"{key} = {_format_value(tag, value)}")
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(config_to_text(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the canonical serialization minus [outputs]: identifies the
    experiment, not where its files land."""
    text = config_to_text(cfg)
    head, _, _ = text.partition("[outputs]")
    return hashlib.sha256(head.encode()).hexdigest()


def default_ic_expression(pde_kind: str) -> str:
    return "sin(x) + c" if pde_kind == "burgers" else "sin(x)"


def make_initial_condition(expr: str, c: float, nu: float):
    """Compile a restricted arithmetic expression of x (and the constants
    c, nu, pi) into a vectorized initial-condition function."""
    allowed = {
        "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "exp": np.exp,
        "sqrt": np.sqrt, "abs": np.abs, "pi": np.pi, "c": c, "nu": nu,
    }
    try:
        code = compile(expr, "<ic>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"initial condition {expr!r}: {exc.msg}") from None
    for name in code.co_names:
        if name not in allowed and name != "x":
            raise ConfigError(f"initial condition {expr!r}: unknown name {name!r}")

    def w0(x):
        x = np.asarray(x, dtype=np.float64)
        out = eval(code, {"__builtins__": {}}, {**allowed, "x": x})  # noqa: S307
        return np.broadcast_to(np.asarray(out, dtype=np.float64), x.shape).copy()

    return w0


def validate_config(cfg: ExperimentConfig, path: str = "<config>") -> ExperimentConfig:
    def bad(msg):
        raise ConfigError(f"{path}: {msg}")

    if cfg.pde_kind not in ("convection", "convection_diffusion", "burgers"):
        bad(f"pde kind must be convection|convection_diffusion|burgers, got {cfg.pde_kind!r}")
    if cfg.nu < 0:
        bad("nu must be nonnegative")
    if cfg.pde_kind == "burgers" and cfg.nu <= 0:
        bad("burgers needs nu > 0")
    if cfg.pde_kind == "convection" and cfg.nu != 0:
        bad("convection must have nu = 0")
    if cfg.model_kind not in ("pinn", "lpinn"):
        bad(f"model kind must be pinn|lpinn, got {cfg.model_kind!r}")
    if min(cfg.width, cfg.depth, cfg.xbranch_width, cfg.xbranch_depth) < 1:
        bad("model widths and depths must be >= 1")
    if cfg.nx < 2 or cfg.nt < 2:
        bad("grid needs nx, nt >= 2")
    if cfg.t_final <= 0:
        bad("t_final must be positive")
    if cfg.iterations < 1:
        bad("iterations must be >= 1")
    if cfg.lr <= 0:
        bad("lr must be positive")
    if min(cfg.lambda_r, cfg.lambda_bc, cfg.lambda_ic) < 0:
        bad("loss weights must be nonnegative")
    if cfg.lambda_bc != 0 and cfg.periodic_embedding:
        bad("lambda_bc must be 0 while periodicity is strictly enforced")
    if cfg.log_every < 1:
        bad("log_every must be >= 1")
    if cfg.batch is not None and cfg.batch < 1:
        bad("batch must be >= 1 or 'full'")
    if cfg.field_format not in ("csv", "binary", "both"):
        bad(f"field_format must be csv|binary|both, got {cfg.field_format!r}")
    ic = cfg.ic or default_ic_expression(cfg.pde_kind)
    try:
        w0 = make_initial_condition(ic, cfg.c, cfg.nu)
        probe = w0(np.linspace(0.0, 2 * np.pi, 7))
    except ConfigError as exc:
        bad(str(exc))
    if not np.all(np.isfinite(probe)):
        bad(f"initial condition {ic!r} produced non-finite values")
    return dataclasses.replace(cfg, ic=ic)


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------

def build_pde(cfg: ExperimentConfig) -> PdeSpec:
    if cfg.pde_kind == "convection":
        return PdeSpec.convection(cfg.c)
    if cfg.pde_kind == "convection_diffusion":
        return PdeSpec.convection_diffusion(cfg.c, cfg.nu)
    return PdeSpec.burgers(cfg.nu)


def build_model(cfg: ExperimentConfig):
    if cfg.model_kind == "pinn":
        return network.PinnModel(
            trunk=network.MlpConfig(hidden_layers=cfg.depth, width=cfg.width),
            embeds_periodic=cfg.periodic_embedding,
        )
    return network.LpinnModel(
        branch_x=network.MlpConfig(hidden_layers=cfg.xbranch_depth, width=cfg.xbranch_width),
        branch_w=network.MlpConfig(hidden_layers=cfg.depth, width=cfg.width),
        embeds_periodic=cfg.periodic_embedding,
        predict_displacement=cfg.predict_displacement,
    )


def build_w0(cfg: ExperimentConfig):
    return make_initial_condition(cfg.ic, cfg.c, cfg.nu)


def build_collocation(cfg: ExperimentConfig):
    return physics.make_collocation(cfg.nx, cfg.nt, build_w0(cfg), t_final=cfg.t_final)


def build_weights(cfg: ExperimentConfig) -> LossWeights:
    return LossWeights(lam_r=cfg.lambda_r, lam_bc=cfg.lambda_bc, lam_ic=cfg.lambda_ic)


def build_train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        iterations=cfg.iterations,
        lr=cfg.lr,
        weights=build_weights(cfg),
        seed=cfg.seed,
        log_every=cfg.log_every,
        batch=cfg.batch,
        model_kind=cfg.model_kind,
        pde=build_pde(cfg),
    )


def build_grid(cfg: ExperimentConfig):
    return reference.eulerian_grid(cfg.nx, cfg.nt, cfg.t_final)


def truth_field(cfg: ExperimentConfig) -> Field:
    grid = build_grid(cfg)
    w0 = build_w0(cfg)
    if cfg.pde_kind == "convection":
        return reference.exact_convection(w0, cfg.c, grid)
    if cfg.pde_kind == "convection_diffusion":
        return reference.exact_convdiff_spectral(w0, cfg.c, cfg.nu, grid)
    return reference.burgers_spectral(w0, cfg.nu, grid)


def predict_field(cfg: ExperimentConfig, model, theta: ParamVector,
                  chunk: int = EVAL_CHUNK) -> tuple[Field, Optional[Field]]:
    """Evaluate the trained network on the experiment grid.

    Returns (stationary-grid field, raw moving field or None).  The moving
    model's output is interpolated onto the fixed grid per time slice.
    """
    x_grid, t_grid = build_grid(cfg)
    xs = np.tile(x_grid, t_grid.size)
    ts = np.repeat(t_grid, x_grid.size)
    values = np.empty(xs.size)
    positions = np.empty(xs.size) if cfg.model_kind == "lpinn" else None
    for lo in range(0, xs.size, chunk):
        hi = min(lo + chunk, xs.size)
        tape = Tape(theta)
        xj, tj = seed_inputs(tape, xs[lo:hi], ts[lo:hi])
        if cfg.model_kind == "lpinn":
            x_out, w_out = network.lpinn_forward(model, xj, tj, theta, tape)
            positions[lo:hi] = tape.vals[x_out.value].ravel()
        else:
            w_out = network.mlp_forward(model, xj, tj, theta, tape)
        values[lo:hi] = tape.vals[w_out.value].ravel()
    shape = (t_grid.size, x_grid.size)
    if cfg.model_kind == "lpinn":
        raw = Field(values.reshape(shape), x_grid, t_grid, frame="lagrangian",
                    moving_x=positions.reshape(shape))
        return lagrangian_to_eulerian(raw, x_grid), raw
    return Field(values.reshape(shape), x_grid, t_grid), None


# --------------------------------------------------------------------------
# artifacts
# --------------------------------------------------------------------------

def _header_lines(cfg: ExperimentConfig) -> list[str]:
    return [f"config_hash={config_hash(cfg)}", f"seed={cfg.seed}"]


def _write_json(path, payload: dict, cfg: ExperimentConfig) -> None:
    doc = {"config_hash": config_hash(cfg), "seed": cfg.seed}
    doc.update(payload)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def save_checkpoint(path, theta: ParamVector, cfg: ExperimentConfig) -> None:
    network.save_params_json(
        path, theta, extra={"config_hash": config_hash(cfg), "seed": cfg.seed}
    )


def load_checkpoint(path, cfg: ExperimentConfig) -> ParamVector:
    if not Path(path).exists():
        raise ConfigError(f"{path}: no such checkpoint file")
    theta, meta = network.load_params_json(path, build_model(cfg))
    expected = config_hash(cfg)
    if meta.get("config_hash") != expected:
        raise ConfigError(
            f"{path}: checkpoint hash {meta.get('config_hash')!r} does not match "
            f"config hash {expected!r}"
        )
    return theta


def _write_prediction(cfg, outdir, predicted: Field, raw: Optional[Field]) -> None:
    header = _header_lines(cfg)
    if cfg.field_format in ("csv", "both"):
        reference.write_field_csv(predicted, outdir / "predicted.csv", header)
    if cfg.field_format in ("binary", "both"):
        reference.write_field_binary(
            predicted, outdir / "predicted.bin",
            meta={"config_hash": config_hash(cfg), "seed": cfg.seed},
        )
    if raw is not None and cfg.field_format in ("csv", "both"):
        moving = Field(raw.moving_x, raw.x_grid, raw.t_grid)
        reference.write_field_csv(moving, outdir / "moving_positions.csv", header)
        state = Field(raw.values, raw.x_grid, raw.t_grid)
        reference.write_field_csv(state, outdir / "moving_state.csv", header)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Train, persist all artifacts, and score against the reference truth.

    A diverged run is a *result*, not a crash: it produces a report with
    status ``failed_to_train`` and the divergence iteration.
    """
    outdir = Path(cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, outdir / "config.txt")
    model = build_model(cfg)
    collocation = build_collocation(cfg)
    tconf = build_train_config(cfg)

    try:
        report = training.train(tconf, model, collocation)
    except TrainingDivergedError as exc:
        logger.warning("training failed at iteration %d: %s", exc.iteration, exc.reason)
        payload = {
            "status": "failed_to_train",
            "diverged_at": exc.iteration,
            "reason": exc.reason,
            "history": exc.history,
        }
        _write_json(outdir / "report.json", payload, cfg)
        return {"status": "failed_to_train", "diverged_at": exc.iteration,
                "rel_error": None, "out_dir": str(outdir)}

    _write_json(outdir / "report.json", training.report_to_json_dict(report), cfg)
    training.write_loss_csv(report, outdir / "loss.csv", _header_lines(cfg))
    save_checkpoint(outdir / "checkpoint.json", report.theta, cfg)

    try:
        predicted, raw = predict_field(cfg, model, report.theta)
    except CharacteristicCrossingError as exc:
        logger.warning("prediction failed: %s", exc)
        _write_json(outdir / "error.json", {"status": "failed_to_evaluate",
                                            "reason": str(exc)}, cfg)
        return {"status": "failed_to_evaluate", "rel_error": None,
                "out_dir": str(outdir)}
    _write_prediction(cfg, outdir, predicted, raw)

    truth = truth_field(cfg)
    err = analysis.rel_error(truth, predicted)
    _write_json(outdir / "error.json", {
        "status": "trained",
        "rel_error": err.rel_error,
        "interpolation": err.interpolation,
        "excluded": err.excluded,
        "final_loss": report.final_loss(),
        "wall_clock_seconds": report.wall_clock,
    }, cfg)
    logger.info("relative error: %.6f", err.rel_error)
    return {"status": "trained", "rel_error": err.rel_error, "out_dir": str(outdir)}


def run_evaluate(cfg: ExperimentConfig, checkpoint_path) -> dict:
    theta = load_checkpoint(checkpoint_path, cfg)
    model = build_model(cfg)
    predicted, raw = predict_field(cfg, model, theta)
    err = analysis.rel_error(truth_field(cfg), predicted)
    outdir = Path(cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_prediction(cfg, outdir, predicted, raw)
    _write_json(outdir / "error.json", {
        "status": "evaluated",
        "rel_error": err.rel_error,
        "interpolation": err.interpolation,
        "excluded": err.excluded,
    }, cfg)
    return {"rel_error": err.rel_error, "out_dir": str(outdir)}


def run_landscape(cfg: ExperimentConfig, checkpoint_path, alpha0: float,
                  beta0: float, n_grid: int) -> dict:
    theta = load_checkpoint(checkpoint_path, cfg)
    model = build_model(cfg)
    collocation = build_collocation(cfg)
    weights = build_weights(cfg)
    pde = build_pde(cfg)
    raw_scalar = training.chunked_scalar_loss(model, pde, collocation, weights, EVAL_CHUNK)

    def scalar(th):
        # a crossed moving grid at a perturbed point is a blown-up cell, not an abort
        try:
            return raw_scalar(th)
        except CharacteristicCrossingError:
            return float("inf")

    grad_fn = training.chunked_gradient(model, pde, collocation, weights, EVAL_CHUNK)
    try:
        top2 = analysis.hessian_top2(None, theta, seed=cfg.seed, grad_fn=grad_fn)
    except ConvergenceFailure as exc:
        logger.warning("eigenpair iteration hit the cap; using last iterates")
        top2 = exc.result
    grid = analysis.loss_landscape(
        scalar, theta, top2.vec1, top2.vec2, alpha0, beta0, n_grid,
        eigvals=(top2.lam1, top2.lam2),
    )
    # soft sanity: a converged run should sit near the landscape minimum
    mid = (n_grid - 1) // 2
    imin, jmin = np.unravel_index(int(np.argmin(grid.log_loss)), grid.log_loss.shape)
    argmin_offset = [int(imin - mid), int(jmin - mid)]
    if max(abs(argmin_offset[0]), abs(argmin_offset[1])) > 2:
        logger.info("landscape minimum is %s cells from the center", argmin_offset)
    outdir = Path(cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "landscape.csv", "w") as fh:
        for line in _header_lines(cfg):
            fh.write(f"# {line}\n")
        fh.write("alpha,beta,log_loss\n")
        for i, a in enumerate(grid.alphas):
            for j, b in enumerate(grid.betas):
                fh.write(f"{a:.17g},{b:.17g},{grid.log_loss[i, j]:.17g}\n")
    _write_json(outdir / "landscape.json", {
        "eigenvalue_1": top2.lam1,
        "eigenvalue_2": top2.lam2,
        "power_iterations": [top2.iters1, top2.iters2],
        "converged": [top2.converged1, top2.converged2],
        "alpha0": alpha0,
        "beta0": beta0,
        "n_grid": n_grid,
        "ruggedness": grid.ruggedness,
        "argmin_offset_cells": argmin_offset,
    }, cfg)
    return {"ruggedness": grid.ruggedness, "eigvals": (top2.lam1, top2.lam2),
            "out_dir": str(outdir)}


def run_nwidth(cfg: ExperimentConfig) -> dict:
    field = truth_field(cfg)
    sigma = analysis.snapshot_svd(field)
    count99 = modes_for_energy(sigma, 0.99)
    outdir = Path(cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "singular_values.csv", "w") as fh:
        for line in _header_lines(cfg):
            fh.write(f"# {line}\n")
        fh.write("index,sigma\n")
        for i, s in enumerate(sigma):
            fh.write(f"{i},{s:.17g}\n")
    _write_json(outdir / "nwidth.json", {
        "modes_for_99_percent_energy": count99,
        "n_singular_values": int(sigma.size),
        "sigma_max": float(sigma[0]) if sigma.size else 0.0,
    }, cfg)
    return {"count99": count99, "out_dir": str(outdir)}


def run_reference(cfg: ExperimentConfig) -> dict:
    field = truth_field(cfg)
    outdir = Path(cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    if cfg.field_format in ("csv", "both"):
        reference.write_field_csv(field, outdir / "truth.csv", _header_lines(cfg))
    if cfg.field_format in ("binary", "both"):
        reference.write_field_binary(
            field, outdir / "truth.bin",
            meta={"config_hash": config_hash(cfg), "seed": cfg.seed},
        )
    _write_json(outdir / "reference.json", {
        "pde": cfg.pde_kind, "c": cfg.c, "nu": cfg.nu,
        "nx": cfg.nx, "nt": cfg.nt, "t_final": cfg.t_final, "ic": cfg.ic,
    }, cfg)
    return {"out_dir": str(outdir)}


def run_sweep(cfg: ExperimentConfig, c_values: list[float], models: list[str]) -> list[dict]:
    outdir = Path(cfg.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for model_kind in models:
        for c in c_values:
            sub = dataclasses.replace(
                cfg, model_kind=model_kind, c=c,
                out_dir=str(outdir / f"{model_kind}_c{c:g}"),
            )
            sub = validate_config(sub, "<sweep>")
            logger.info("sweep: model=%s c=%g", model_kind, c)
            result = run_experiment(sub)
            rows.append({"model": model_kind, "c": c,
                         "rel_error": result["rel_error"], "status": result["status"]})
    with open(outdir / "error_vs_c.csv", "w") as fh:
        for line in _header_lines(cfg):
            fh.write(f"# {line}\n")
        fh.write("model,c,rel_error,status\n")
        for row in rows:
            err = "nan" if row["rel_error"] is None else f"{row['rel_error']:.17g}"
            fh.write(f"{row['model']},{row['c']:.17g},{err},{row['status']}\n")
    return rows


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------

_THREAD_LIMITER = None


def _configure_threads(n: Optional[int]) -> None:
    global _THREAD_LIMITER
    if n is None:
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        logger.warning("threadpoolctl unavailable; --threads ignored")
        return
    _THREAD_LIMITER = threadpool_limits(limits=n)


def _load_with_overrides(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = validate_config(ExperimentConfig(), "<defaults>")
    updates = {}
    for attr, field in (
        ("seed", "seed"), ("iterations", "iterations"), ("out", "out_dir"),
        ("pde", "pde_kind"), ("c", "c"), ("nu", "nu"), ("nx", "nx"), ("nt", "nt"),
        ("ic", "ic"), ("model", "model_kind"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            updates[field] = value
    batch = getattr(args, "batch", None)
    if batch is not None:
        updates["batch"] = None if batch.lower() == "full" else int(batch)
    if updates:
        cfg = validate_config(dataclasses.replace(cfg, **updates), "<flags>")
    return cfg


def _add_common(parser, needs_config=False):
    parser.add_argument("--config", required=needs_config, help="experiment config file")
    parser.add_argument("--seed", type=int, help="override the training seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--threads", type=int, help="cap BLAS threads (reproducibility)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpinn",
        description="Train and diagnose stationary- and moving-frame "
                    "physics-informed networks for 1-D transport problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and score it against the truth")
    _add_common(p, needs_config=True)
    p.add_argument("--iterations", type=int, help="override iteration count")
    p.add_argument("--batch", help="residual batch size per iteration, or 'full'")

    p = sub.add_parser("evaluate", help="recompute the error of a saved checkpoint")
    _add_common(p, needs_config=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("landscape", help="loss landscape along top Hessian eigenvectors")
    _add_common(p, needs_config=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--alpha0", type=float, default=0.5)
    p.add_argument("--beta0", type=float, default=0.5)
    p.add_argument("--n-grid", type=int, default=21)

    for name, help_text in (
        ("nwidth", "singular-value decay of the reference snapshot matrix"),
        ("reference", "write the ground-truth field"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.add_argument("--pde", choices=["convection", "convection_diffusion", "burgers"])
        p.add_argument("--c", type=float)
        p.add_argument("--nu", type=float)
        p.add_argument("--nx", type=int)
        p.add_argument("--nt", type=int)
        p.add_argument("--ic", help="initial condition expression in x")

    p = sub.add_parser("sweep", help="error-vs-speed comparison across models")
    _add_common(p, needs_config=True)
    p.add_argument("--c-values", required=True, help="comma-separated speeds")
    p.add_argument("--models", default="pinn,lpinn", help="comma-separated model kinds")
    p.add_argument("--iterations", type=int, help="override iteration count")
    p.add_argument("--batch", help="residual batch size per iteration, or 'full'")

    return parser


def main(argv=None) -> int:
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(
        os.environ.get("LPINN_LOG", "").lower(), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_threads(getattr(args, "threads", None))
    try:
        cfg = _load_with_overrides(args)
        if args.command == "train":
            result = run_experiment(cfg)
            print(f"status: {result['status']}")
            if result["rel_error"] is not None:
                print(f"relative error: {result['rel_error']:.17g}")
        elif args.command == "evaluate":
            result = run_evaluate(cfg, args.checkpoint)
            print(f"relative error: {result['rel_error']:.17g}")
        elif args.command == "landscape":
            result = run_landscape(cfg, args.checkpoint, args.alpha0, args.beta0, args.n_grid)
            print(f"ruggedness: {result['ruggedness']:.17g}")
        elif args.command == "nwidth":
            result = run_nwidth(cfg)
            print(f"modes for 99% energy: {result['count99']}")
        elif args.command == "reference":
            result = run_reference(cfg)
            print(f"wrote truth field to {result['out_dir']}")
        elif args.command == "sweep":
            c_values = [float(v) for v in args.c_values.split(",") if v.strip()]
            models = [m.strip() for m in args.models.split(",") if m.strip()]
            rows = run_sweep(cfg, c_values, models)
            for row in rows:
                err = "failed" if row["rel_error"] is None else f"{row['rel_error']:.4f}"
                print(f"{row['model']:>6} c={row['c']:<6g} error={err} ({row['status']})")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except reference.SolverError as exc:
        print(f"error: reference solver failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
