"""Error metric with moving-to-stationary interpolation, loss-landscape
computation, and the snapshot-SVD proxy for solution-manifold width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .diffcore import ContractViolation, LossFn, ParamVector, hvp
from .physics import TWO_PI, CharacteristicCrossingError
from .reference import Field


# -- interpolation -----------------------------------------------------------

def interp_quadratic(
    moving_x: np.ndarray,
    w_on_moving: np.ndarray,
    eulerian_x: np.ndarray,
    period: float = TWO_PI,
) -> np.ndarray:
    """Local 3-point Lagrange interpolation from a moving grid to fixed targets.

    ``moving_x`` must be strictly increasing (non-crossed characteristics);
    the stencil for each target is its 3 nearest nodes, with ghost nodes
    wrapped across the periodic seam.  Exact on quadratics and bit-exact when
    a target coincides with a node.
    """
    xm = np.asarray(moving_x, dtype=np.float64)
    wm = np.asarray(w_on_moving, dtype=np.float64)
    xt = np.asarray(eulerian_x, dtype=np.float64)
    if xm.size != wm.size:
        raise ValueError("positions and values must align")
    if xm.size < 3:
        raise ValueError("need at least 3 moving nodes")
    if np.any(np.diff(xm) <= 0.0):
        raise CharacteristicCrossingError("moving grid is not strictly increasing")
    if xm[-1] - xm[0] >= period:
        raise CharacteristicCrossingError("moving grid spans more than one period")

    # two ghost nodes on each side close the periodic seam
    xg = np.concatenate([xm[-2:] - period, xm, xm[:2] + period])
    wg = np.concatenate([wm[-2:], wm, wm[:2]])

    j = np.searchsorted(xg, xt)  # first node >= target; targets lie in [xm[0]-?, ...)
    j = np.clip(j, 2, xg.size - 2)
    # choose between stencils (j-2, j-1, j) and (j-1, j, j+1) by third-node distance
    use_right = np.abs(xg[j + 1] - xt) < np.abs(xt - xg[j - 2])
    s = np.where(use_right, j - 1, j - 2)

    x0, x1, x2 = xg[s], xg[s + 1], xg[s + 2]
    w0, w1, w2 = wg[s], wg[s + 1], wg[s + 2]
    l0 = (xt - x1) * (xt - x2) / ((x0 - x1) * (x0 - x2))
    l1 = (xt - x0) * (xt - x2) / ((x1 - x0) * (x1 - x2))
    l2 = (xt - x0) * (xt - x1) / ((x2 - x0) * (x2 - x1))
    return w0 * l0 + w1 * l1 + w2 * l2


def lagrangian_to_eulerian(field: Field, eulerian_x: np.ndarray,
                           period: float = TWO_PI) -> Field:
    """Wrap, order and interpolate each moving time slice onto a fixed grid."""
    if field.frame != "lagrangian":
        raise ValueError("field is already on a fixed grid")
    xt = np.asarray(eulerian_x, dtype=np.float64)
    values = np.empty((field.n_t, xt.size))
    for jj in range(field.n_t):
        pos = np.mod(field.moving_x[jj], period)
        order = np.argsort(pos, kind="stable")
        values[jj] = interp_quadratic(pos[order], field.values[jj][order], xt, period)
    return Field(values, xt, field.t_grid.copy())


# -- relative error ------------------------------------------------------------

@dataclass(frozen=True)
class ErrorReport:
    rel_error: float
    interpolation: str = "lagrange-quadratic-periodic"
    excluded: str = "t0-slice-and-x0-column"


class UndefinedErrorSignal(Exception):
    """Relative error is undefined because the retained truth has zero norm."""


def rel_error(truth: Field, predicted: Field) -> ErrorReport:
    """||truth - predicted||_2 / ||truth||_2 over the retained grid points.

    Both fields must share the grid (the prediction already interpolated).
    The retained set drops the t = 0 slice and the x = 0 column, the points
    pinned by the initial condition and the periodic identification.
    """
    if not (np.array_equal(truth.x_grid, predicted.x_grid)
            and np.array_equal(truth.t_grid, predicted.t_grid)):
        raise ValueError("truth and prediction live on different grids")
    a = truth.values[1:, 1:].ravel()
    b = predicted.values[1:, 1:].ravel()
    denom = float(np.linalg.norm(a))
    if denom == 0.0:
        raise UndefinedErrorSignal("retained truth has zero norm")
    return ErrorReport(float(np.linalg.norm(a - b) / denom))


# -- Hessian eigenpairs ----------------------------------------------------------

@dataclass(frozen=True)
class HessianTop2:
    lam1: float
    vec1: np.ndarray
    lam2: float
    vec2: np.ndarray
    iters1: int
    iters2: int
    converged1: bool
    converged2: bool


class ConvergenceFailure(Exception):
    """Power iteration did not settle; ``result`` carries the last iterates."""

    def __init__(self, result: HessianTop2):
        super().__init__(
            f"eigenpair iteration did not converge "
            f"(converged1={result.converged1}, converged2={result.converged2})"
        )
        self.result = result


# in-loop eigenpair certificate: tight enough that the deflation leakage of
# the first pair keeps the second pair's residual under 1e-4 on small spectra
CERT_ABS = 2e-5
CERT_REL = 2e-5


def _power_iteration(apply_h, v0, tol, max_iters):
    """Returns (lam, v, iters, converged) for the dominant-magnitude eigenpair.

    Convergence needs the Rayleigh quotient to settle AND the eigenpair
    residual ||Hv - lam v|| <= max(CERT_ABS, CERT_REL |lam|), which rules out
    settling on a non-eigenvector (e.g. when the two dominant eigenvalues
    cancel) and guarantees the certificate on converged output.
    """
    v = v0 / np.linalg.norm(v0)
    lam = 0.0
    for it in range(1, max_iters + 1):
        hv = apply_h(v)
        lam_new = float(v @ hv)
        residual = float(np.linalg.norm(hv - lam_new * v))
        settled = it > 1 and abs(lam_new - lam) <= tol * max(1.0, abs(lam_new))
        certified = residual <= max(CERT_ABS, CERT_REL * abs(lam_new))
        if settled and certified:
            return lam_new, v, it, True
        nv = float(np.linalg.norm(hv))
        if nv == 0.0:
            return 0.0, v, it, True  # zero operator on this subspace
        v = hv / nv
        lam = lam_new
    return lam, v, max_iters, False


def hessian_top2(
    loss_fn: Optional[LossFn],
    theta: ParamVector,
    tol: float = 1e-6,
    max_iters: int = 200,
    seed: int = 0,
    grad_fn: Optional[Callable[[ParamVector], np.ndarray]] = None,
) -> HessianTop2:
    """Dominant two Hessian eigenpairs by (deflated) power iteration on
    finite-difference Hessian-vector products.

    Convergence is declared when successive Rayleigh quotients change by less
    than ``tol`` relative; otherwise ``ConvergenceFailure`` is raised with the
    last iterates attached.
    """
    rng = np.random.default_rng(seed)
    n = len(theta)

    def apply_h(v):
        return hvp(loss_fn, theta, v, grad_fn=grad_fn)

    lam1, v1, it1, ok1 = _power_iteration(apply_h, rng.standard_normal(n), tol, max_iters)

    def apply_deflated(v):
        v = v - (v1 @ v) * v1
        hv = apply_h(v)
        return hv - (v1 @ hv) * v1

    v0 = rng.standard_normal(n)
    v0 = v0 - (v1 @ v0) * v1
    lam2, v2, it2, ok2 = _power_iteration(apply_deflated, v0, tol, max_iters)
    v2 = v2 - (v1 @ v2) * v1
    v2 = v2 / np.linalg.norm(v2)

    result = HessianTop2(lam1, v1, lam2, v2, it1, it2, ok1, ok2)
    if not (ok1 and ok2):
        raise ConvergenceFailure(result)
    return result


# -- loss landscape ----------------------------------------------------------------

@dataclass(frozen=True)
class LandscapeGrid:
    alphas: np.ndarray
    betas: np.ndarray
    log_loss: np.ndarray          # shape (len(alphas), len(betas)); +inf marks blow-ups
    eigvals: tuple[float, float]
    delta: np.ndarray
    eta: np.ndarray
    ruggedness: float


def landscape_ruggedness(log_loss: np.ndarray, h: float) -> float:
    """Mean |discrete Laplacian| of log-loss over interior points with finite stencils."""
    f = log_loss
    with np.errstate(invalid="ignore"):
        lap = (f[2:, 1:-1] + f[:-2, 1:-1] + f[1:-1, 2:] + f[1:-1, :-2]
               - 4.0 * f[1:-1, 1:-1]) / (h * h)
    finite = np.isfinite(lap)
    if not np.any(finite):
        return float("inf")
    return float(np.mean(np.abs(lap[finite])))


def loss_landscape(
    loss_scalar: Callable[[ParamVector], float],
    theta: ParamVector,
    delta: np.ndarray,
    eta: np.ndarray,
    alpha0: float = 0.5,
    beta0: float = 0.5,
    n_grid: int = 21,
    eigvals: tuple[float, float] = (float("nan"), float("nan")),
) -> LandscapeGrid:
    """log L(theta + alpha*delta + beta*eta) on a symmetric grid; the center
    cell is evaluated exactly at the unperturbed parameters."""
    for name, v in (("delta", delta), ("eta", eta)):
        if abs(float(np.linalg.norm(v)) - 1.0) > 1e-6:
            raise ContractViolation(f"{name} must be unit norm")
    if n_grid < 3:
        raise ValueError("need n_grid >= 3")
    mid = (n_grid - 1) / 2.0
    alphas = (np.arange(n_grid) - mid) * (2.0 * alpha0 / (n_grid - 1))
    betas = (np.arange(n_grid) - mid) * (2.0 * beta0 / (n_grid - 1))
    log_loss = np.empty((n_grid, n_grid))
    base = theta.values
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            val = loss_scalar(theta.with_values(base + a * delta + b * eta))
            if not np.isfinite(val):
                log_loss[i, j] = np.inf
            else:
                with np.errstate(divide="ignore"):
                    log_loss[i, j] = np.log(val)
    h = float(alphas[1] - alphas[0])
    return LandscapeGrid(alphas, betas, log_loss, eigvals, np.asarray(delta),
                         np.asarray(eta), landscape_ruggedness(log_loss, h))


# -- snapshot SVD ---------------------------------------------------------------------

def _one_sided_jacobi_singular_values(m: np.ndarray, max_sweeps: int = 30) -> np.ndarray:
    """Orthogonalize column pairs by Jacobi rotations; column norms converge to
    the singular values with high relative accuracy even for tiny ones (a Gram
    eigendecomposition would floor them at sqrt(machine eps) * sigma_1)."""
    a = np.array(m, dtype=np.float64, copy=True)
    n = a.shape[1]
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = float(a[:, p] @ a[:, q])
                app = float(a[:, p] @ a[:, p])
                aqq = float(a[:, q] @ a[:, q])
                if app == 0.0 or aqq == 0.0 or abs(apq) <= 1e-15 * np.sqrt(app * aqq):
                    continue
                off = max(off, abs(apq) / np.sqrt(app * aqq))
                tau = (aqq - app) / (2.0 * apq)
                # tau = 0 (equal column norms) still needs the 45-degree rotation
                t = (1.0 if tau >= 0.0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                col_p = a[:, p].copy()
                a[:, p] = c * col_p - s * a[:, q]
                a[:, q] = s * col_p + c * a[:, q]
        if off < 1e-14:
            break
    sigma = np.linalg.norm(a, axis=0)
    return np.sort(sigma)[::-1]


def snapshot_svd(field: Field) -> np.ndarray:
    """Singular values (descending) of the space-by-time snapshot matrix."""
    if field.frame != "eulerian":
        raise ValueError("snapshots must be sampled on a fixed grid")
    m = field.values.T  # (n_x, n_t)
    if m.shape[1] > m.shape[0]:
        m = m.T  # rotate the smaller side into the columns
    return _one_sided_jacobi_singular_values(m)


def modes_for_energy(sigma: np.ndarray, energy: float = 0.99) -> int:
    """Smallest n with the leading n squared singular values holding ``energy``."""
    power = sigma * sigma
    total = float(power.sum())
    if total == 0.0:
        return 0
    cum = np.cumsum(power)
    return int(np.searchsorted(cum, energy * total) + 1)
