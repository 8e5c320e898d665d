"""PDE families, frame residuals, and the weighted collocation losses.

The stationary-frame residual of the scalar conservation model is

    R = w_t + f1(w) w_x - f2 w_xx,

with f1 = c (constant transport) or f1 = w (self-advection) and f2 = nu.
In the moving frame the same model splits into a characteristics equation
and a state equation,

    R_x = dx/dt - f1,      R_w = dw/dt - f2 * w_xx|_phys,

where dw/dt is the material derivative (label held fixed) and the physical
second derivative is recovered from the label derivatives by the chain rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .diffcore import ContractViolation, JetBatch, Tape

TWO_PI = 2.0 * np.pi

JACOBIAN_FLOOR = 1e-6


class CharacteristicCrossingError(Exception):
    """The moving-grid Jacobian dropped below the floor: characteristics crossed."""


@dataclass(frozen=True)
class PdeSpec:
    """One of convection(c), convection_diffusion(c, nu), burgers(nu)."""

    kind: str
    c: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if self.kind not in ("convection", "convection_diffusion", "burgers"):
            raise ValueError(f"unknown pde kind {self.kind!r}")
        if self.nu < 0.0:
            raise ValueError("nu must be nonnegative")
        if self.kind == "convection" and self.nu != 0.0:
            raise ValueError("convection has no diffusion; use convection_diffusion")

    @classmethod
    def convection(cls, c: float) -> "PdeSpec":
        return cls("convection", c=float(c))

    @classmethod
    def convection_diffusion(cls, c: float, nu: float) -> "PdeSpec":
        return cls("convection_diffusion", c=float(c), nu=float(nu))

    @classmethod
    def burgers(cls, nu: float) -> "PdeSpec":
        return cls("burgers", nu=float(nu))

    @property
    def self_advecting(self) -> bool:
        return self.kind == "burgers"


@dataclass(frozen=True)
class LossWeights:
    lam_r: float = 10.0
    lam_bc: float = 0.0
    lam_ic: float = 1000.0

    def __post_init__(self):
        if min(self.lam_r, self.lam_bc, self.lam_ic) < 0.0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class CollocationSet:
    """Interior residual points plus the t = 0 initial set with its targets."""

    x_r: np.ndarray
    t_r: np.ndarray
    x_ic: np.ndarray
    w0_ic: np.ndarray

    def __post_init__(self):
        if self.x_r.shape != self.t_r.shape:
            raise ValueError("interior x and t must align")
        if self.x_ic.shape != self.w0_ic.shape:
            raise ValueError("initial x and targets must align")

    @property
    def n_r(self) -> int:
        return self.x_r.size

    @property
    def n_ic(self) -> int:
        return self.x_ic.size

    def subsample(self, indices: np.ndarray) -> "CollocationSet":
        return CollocationSet(self.x_r[indices], self.t_r[indices], self.x_ic, self.w0_ic)


def make_collocation(
    n_x: int,
    n_t: int,
    w0: Callable[[np.ndarray], np.ndarray],
    domain: tuple[float, float] = (0.0, TWO_PI),
    t_final: float = 1.0,
) -> CollocationSet:
    """Tensor-product grid: n_x equispaced x (right endpoint excluded, periodic)
    by n_t equispaced t in [0, t_final]; the initial set is the t = 0 row."""
    if n_x < 2 or n_t < 2:
        raise ValueError("need n_x, n_t >= 2")
    lo, hi = domain
    x = lo + (hi - lo) * np.arange(n_x) / n_x
    t = np.linspace(0.0, t_final, n_t)
    x_r = np.tile(x, n_t)
    t_r = np.repeat(t, n_x)
    return CollocationSet(x_r, t_r, x, np.asarray(w0(x), dtype=np.float64))


# -- residuals ---------------------------------------------------------------

def residual_eulerian(pde: PdeSpec, w: JetBatch) -> int:
    """Tape node of R = w_t + f1 w_x - f2 w_xx at each sample."""
    tp = w.tape
    if pde.self_advecting:
        transport = tp.mul(w.value, w.d_dx)
    else:
        transport = tp.scale(w.d_dx, pde.c)
    r = tp.add(w.d_dt, transport)
    if pde.nu != 0.0:
        r = tp.sub(r, tp.scale(w.d_dxx, pde.nu))
    return r


def residual_lagrangian(
    pde: PdeSpec,
    x: JetBatch,
    w: JetBatch,
    jacobian_floor: float = JACOBIAN_FLOOR,
) -> tuple[int, int]:
    """Tape nodes of (R_x, R_w) for jets taken w.r.t. the label x0 and time.

    When diffusion is active the physical second derivative is

        w_xx|_phys = (w_x0x0 * x_x0 - w_x0 * x_x0x0) / x_x0^3,

    which requires the moving grid to stay monotone: any |x_x0| below
    ``jacobian_floor`` raises ``CharacteristicCrossingError`` instead of
    silently producing non-finite residuals.
    """
    tp = x.tape
    if tp is not w.tape:
        raise ContractViolation("x and w jets must share a tape")
    if pde.self_advecting:
        r_x = tp.sub(x.d_dt, w.value)
    else:
        r_x = tp.sub(x.d_dt, tp.const(np.full_like(tp.vals[x.d_dt], pde.c)))
    if pde.nu == 0.0:
        return r_x, w.d_dt
    jac = tp.vals[x.d_dx]
    if jac.size and float(np.min(np.abs(jac))) < jacobian_floor:
        raise CharacteristicCrossingError(
            f"moving-grid Jacobian fell below {jacobian_floor:g} "
            f"(min |dx/dx0| = {float(np.min(np.abs(jac))):.3e})"
        )
    numer = tp.sub(tp.mul(w.d_dxx, x.d_dx), tp.mul(w.d_dx, x.d_dxx))
    denom = tp.mul(tp.square(x.d_dx), x.d_dx)
    w_xx_phys = tp.div(numer, denom)
    r_w = tp.sub(w.d_dt, tp.scale(w_xx_phys, pde.nu))
    return r_x, r_w


# -- losses --------------------------------------------------------------------

@dataclass(frozen=True)
class LossNodes:
    """Scalar loss node plus its per-term nodes for logging."""

    total: int
    parts: dict


def _mean_square(tp: Tape, node: int, weight: float) -> int:
    n = tp.vals[node].size
    if n == 0:
        raise ContractViolation("empty collocation set")
    return tp.scale(tp.sum(tp.square(node)), weight / n)


def loss_pinn(
    tape: Tape,
    residual: int,
    ic_mismatch: int,
    weights: LossWeights,
    bc_mismatch: Optional[int] = None,
) -> LossNodes:
    """L = lam_r mean(R^2) + lam_ic mean(ic^2); the bc term only exists for
    non-periodic variants and must come with lam_bc > 0."""
    if bc_mismatch is None and weights.lam_bc != 0.0:
        raise ContractViolation("lam_bc > 0 requires boundary mismatches")
    loss_r = _mean_square(tape, residual, weights.lam_r)
    loss_ic = _mean_square(tape, ic_mismatch, weights.lam_ic)
    total = tape.add(loss_r, loss_ic)
    parts = {"loss_r": loss_r, "loss_ic": loss_ic}
    if bc_mismatch is not None and weights.lam_bc != 0.0:
        loss_bc = _mean_square(tape, bc_mismatch, weights.lam_bc)
        total = tape.add(total, loss_bc)
        parts["loss_bc"] = loss_bc
    return LossNodes(total, parts)


def loss_lpinn(
    tape: Tape,
    r_x: int,
    r_w: int,
    ic_x_mismatch: int,
    ic_w_mismatch: int,
    weights: LossWeights,
) -> LossNodes:
    """Both residual terms share lam_r and both initial terms share lam_ic."""
    loss_rx = _mean_square(tape, r_x, weights.lam_r)
    loss_rw = _mean_square(tape, r_w, weights.lam_r)
    loss_ic = tape.add(
        _mean_square(tape, ic_x_mismatch, weights.lam_ic),
        _mean_square(tape, ic_w_mismatch, weights.lam_ic),
    )
    loss_r = tape.add(loss_rx, loss_rw)
    total = tape.add(loss_r, loss_ic)
    return LossNodes(
        total,
        {"loss_r": loss_r, "loss_ic": loss_ic, "loss_rx": loss_rx, "loss_rw": loss_rw},
    )
