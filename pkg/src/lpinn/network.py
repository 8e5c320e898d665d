"""Network architectures: a single-trunk state network and a two-branch
characteristics + state network, both with strictly enforced periodicity.

Periodicity comes from a fixed embedding layer that maps the spatial
coordinate to (cos x, sin x) before the dense trunk, so the boundary-condition
loss weight can stay at zero.  The characteristics branch predicts a
displacement d with x = x0 + d, which keeps the map periodic-consistent and
makes the zero network the identity map at t = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .diffcore import (
    JetBatch,
    ParamVector,
    ShapeError,
    Tape,
    jet_add,
    jet_bias,
    jet_cos,
    jet_matmul,
    jet_rowmul,
    jet_sin,
    jet_tanh,
)


@dataclass(frozen=True)
class MlpConfig:
    """Dense trunk: ``hidden_layers`` tanh layers of ``width`` units, linear output."""

    hidden_layers: int
    width: int
    out_dim: int = 1
    activation: str = "tanh"
    final_activation: str = "identity"

    def __post_init__(self):
        if self.hidden_layers < 1 or self.width < 1 or self.out_dim < 1:
            raise ValueError("hidden_layers, width and out_dim must be >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.final_activation != "identity":
            raise ValueError(f"final layer must be linear, got {self.final_activation!r}")


def _branch_shapes(prefix: str, cfg: MlpConfig, in_dim: int):
    """(name, shape) list for one trunk.  The first-layer weight is stored with
    one contiguous row per input feature so rows can be bound as column leaves."""
    shapes = [(f"{prefix}.w1", (in_dim, cfg.width)), (f"{prefix}.b1", (cfg.width, 1))]
    for layer in range(2, cfg.hidden_layers + 1):
        shapes.append((f"{prefix}.w{layer}", (cfg.width, cfg.width)))
        shapes.append((f"{prefix}.b{layer}", (cfg.width, 1)))
    out = cfg.hidden_layers + 1
    shapes.append((f"{prefix}.w{out}", (cfg.out_dim, cfg.width)))
    shapes.append((f"{prefix}.b{out}", (cfg.out_dim, 1)))
    return shapes


@dataclass(frozen=True)
class PinnModel:
    """Single trunk mapping (x, t) -> state, the stationary-frame network."""

    trunk: MlpConfig
    embeds_periodic: bool = True

    @property
    def in_dim(self) -> int:
        return 3 if self.embeds_periodic else 2

    def param_shapes(self):
        return _branch_shapes("trunk", self.trunk, self.in_dim)

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())


@dataclass(frozen=True)
class LpinnModel:
    """Two parallel branches: characteristics position x(x0, t) and state w(x0, t)."""

    branch_x: MlpConfig
    branch_w: MlpConfig
    embeds_periodic: bool = True
    predict_displacement: bool = True

    @property
    def in_dim(self) -> int:
        return 3 if self.embeds_periodic else 2

    def param_shapes(self):
        return _branch_shapes("xbranch", self.branch_x, self.in_dim) + _branch_shapes(
            "wbranch", self.branch_w, self.in_dim
        )

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())


def default_pinn(width: int = 50, hidden_layers: int = 4) -> PinnModel:
    return PinnModel(trunk=MlpConfig(hidden_layers=hidden_layers, width=width))


def default_lpinn(width: int = 50, w_hidden: int = 4, x_hidden: int = 2) -> LpinnModel:
    return LpinnModel(
        branch_x=MlpConfig(hidden_layers=x_hidden, width=width),
        branch_w=MlpConfig(hidden_layers=w_hidden, width=width),
    )


def embed_periodic(x: JetBatch) -> tuple[JetBatch, JetBatch]:
    """Map the spatial coordinate to the unit circle: (cos x, sin x)."""
    return jet_cos(x), jet_sin(x)


def _branch_forward(cfg: MlpConfig, prefix: str, rows: list[JetBatch], tape: Tape) -> JetBatch:
    # layer 1 as a sum of rank-1 row terms, one per input feature
    z = jet_rowmul(tape.param_row(f"{prefix}.w1", 0), rows[0])
    for i in range(1, len(rows)):
        z = jet_add(z, jet_rowmul(tape.param_row(f"{prefix}.w1", i), rows[i]))
    z = jet_bias(z, tape.param(f"{prefix}.b1"))
    a = jet_tanh(z)
    for layer in range(2, cfg.hidden_layers + 1):
        z = jet_bias(jet_matmul(tape.param(f"{prefix}.w{layer}"), a), tape.param(f"{prefix}.b{layer}"))
        a = jet_tanh(z)
    out = cfg.hidden_layers + 1
    return jet_bias(jet_matmul(tape.param(f"{prefix}.w{out}"), a), tape.param(f"{prefix}.b{out}"))


def _input_rows(model, x: JetBatch, t: JetBatch) -> list[JetBatch]:
    if x.n != t.n:
        raise ShapeError("x and t batches differ in length")
    if model.embeds_periodic:
        cos_x, sin_x = embed_periodic(x)
        return [cos_x, sin_x, t]
    return [x, t]


def mlp_forward(model: PinnModel, x: JetBatch, t: JetBatch, theta: ParamVector, tape: Tape) -> JetBatch:
    """Evaluate the trunk on a coordinate batch; all jet channels are populated
    and every primitive lands on the tape."""
    if tape.theta is not theta:
        raise ShapeError("tape is bound to a different ParamVector")
    return _branch_forward(model.trunk, "trunk", _input_rows(model, x, t), tape)


def lpinn_forward(
    model: LpinnModel, x0: JetBatch, t: JetBatch, theta: ParamVector, tape: Tape
) -> tuple[JetBatch, JetBatch]:
    """Evaluate both branches at Lagrangian labels x0 and times t.

    Returns (x, w): the characteristic positions and the state along them,
    both carrying jets with respect to (x0, t).
    """
    if tape.theta is not theta:
        raise ShapeError("tape is bound to a different ParamVector")
    rows = _input_rows(model, x0, t)
    x_out = _branch_forward(model.branch_x, "xbranch", rows, tape)
    if model.predict_displacement:
        x_out = jet_add(x_out, x0)
    w_out = _branch_forward(model.branch_w, "wbranch", rows, tape)
    return x_out, w_out


def init_params(model, seed: int) -> ParamVector:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    shapes = model.param_shapes()
    theta = ParamVector.from_shapes(shapes)
    for name, shape in shapes:
        if ".w" in name:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            theta.view(name)[:] = rng.uniform(-bound, bound, size=shape)
    return theta


# -- checkpoint payload ------------------------------------------------------

def params_to_payload(theta: ParamVector) -> list[dict]:
    """Flat (name, shape, row-major values) list, JSON-ready."""
    return [
        {
            "name": name,
            "shape": list(shape),
            "values": theta.values[off : off + int(np.prod(shape))].tolist(),
        }
        for name, off, shape in theta.layout
    ]


def params_from_payload(payload: list[dict], model) -> ParamVector:
    """Rebuild a ParamVector, validating names and shapes against the model."""
    expected = model.param_shapes()
    if len(payload) != len(expected):
        raise ShapeError(f"checkpoint has {len(payload)} tensors, model needs {len(expected)}")
    theta = ParamVector.from_shapes(expected)
    for item, (name, shape) in zip(payload, expected):
        if item["name"] != name or tuple(item["shape"]) != tuple(shape):
            raise ShapeError(
                f"checkpoint tensor {item['name']} {item['shape']} does not match "
                f"model tensor {name} {list(shape)}"
            )
        values = np.asarray(item["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise ShapeError(f"tensor {name} has {values.size} values, expected {np.prod(shape)}")
        theta.view(name)[:] = values.reshape(shape)
    return theta


def save_params_json(path, theta: ParamVector, extra: dict | None = None) -> None:
    doc = dict(extra or {})
    doc["params"] = params_to_payload(theta)
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_params_json(path, model) -> tuple[ParamVector, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    theta = params_from_payload(doc["params"], model)
    meta = {k: v for k, v in doc.items() if k != "params"}
    return theta, meta
