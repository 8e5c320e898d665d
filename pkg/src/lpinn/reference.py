"""Ground-truth generators: closed-form transport solutions and a Fourier
pseudo-spectral time stepper for the viscous self-advecting case.

The spectral solver works in a frame moving with the (conserved) spatial mean
of the initial state, which removes the stiff bulk-advection phase rotation
from the time integration and makes the solver exactly Galilean consistent:
adding a constant to the initial state only shifts the sampling frame.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .diffcore import ContractViolation

TWO_PI = 2.0 * np.pi


class SolverError(Exception):
    """Base class for truth-solver failures."""


class UnderResolvedError(SolverError):
    """Spectral tail carries too much energy for the requested resolution."""


class BlowUpError(SolverError):
    """The state became non-finite during time stepping."""


@dataclass(frozen=True)
class Field:
    """State samples on a space-time grid, stationary or moving.

    ``values[j][i]`` is the state at time ``t_grid[j]``; for a stationary
    frame the position is ``x_grid[i]``, for a moving frame it is
    ``moving_x[j][i]``.
    """

    values: np.ndarray
    x_grid: np.ndarray
    t_grid: np.ndarray
    frame: str = "eulerian"
    moving_x: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.frame not in ("eulerian", "lagrangian"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.values.shape != (self.t_grid.size, self.x_grid.size):
            raise ValueError(
                f"values shape {self.values.shape} != (n_t, n_x) = "
                f"({self.t_grid.size}, {self.x_grid.size})"
            )
        for g in (self.x_grid, self.t_grid):
            if g.size > 1 and not np.all(np.diff(g) > 0):
                raise ValueError("grids must be strictly increasing")
        if self.frame == "lagrangian":
            if self.moving_x is None or self.moving_x.shape != self.values.shape:
                raise ValueError("lagrangian fields need per-time positions")

    @property
    def n_x(self) -> int:
        return self.x_grid.size

    @property
    def n_t(self) -> int:
        return self.t_grid.size


def eulerian_grid(n_x: int, n_t: int, t_final: float = 1.0,
                  domain: tuple[float, float] = (0.0, TWO_PI)) -> tuple[np.ndarray, np.ndarray]:
    """Equispaced x in [lo, hi) (periodic, right endpoint excluded) and t in [0, t_final]."""
    lo, hi = domain
    x = lo + (hi - lo) * np.arange(n_x) / n_x
    t = np.linspace(0.0, t_final, n_t)
    return x, t


def wrap_periodic(y: np.ndarray, domain: tuple[float, float] = (0.0, TWO_PI)) -> np.ndarray:
    lo, hi = domain
    return lo + np.mod(y - lo, hi - lo)


def exact_convection(w0: Callable[[np.ndarray], np.ndarray], c: float,
                     grid: tuple[np.ndarray, np.ndarray],
                     domain: tuple[float, float] = (0.0, TWO_PI)) -> Field:
    """Constant along characteristics dx/dt = c: values[j][i] = w0(wrap(x_i - c t_j))."""
    x, t = grid
    values = np.empty((t.size, x.size))
    for j, tj in enumerate(t):
        values[j] = w0(wrap_periodic(x - c * tj, domain))
    return Field(values, np.asarray(x, float), np.asarray(t, float))


def exact_convdiff(k: int, c: float, nu: float,
                   grid: tuple[np.ndarray, np.ndarray]) -> Field:
    """Single-mode closed form for IC sin(kx): e^(-nu k^2 t) sin(k (x - c t))."""
    x, t = grid
    values = np.exp(-nu * k * k * t)[:, None] * np.sin(k * (x[None, :] - c * t[:, None]))
    return Field(values, np.asarray(x, float), np.asarray(t, float))


def exact_convdiff_spectral(w0: Callable[[np.ndarray], np.ndarray], c: float, nu: float,
                            grid: tuple[np.ndarray, np.ndarray],
                            n_modes: int = 1024) -> Field:
    """Modal solution of the linear transport-diffusion equation for any
    periodic initial profile: mode k advects with speed c and decays at nu k^2."""
    x, t = grid
    xs = TWO_PI * np.arange(n_modes) / n_modes
    spec = fft(np.asarray(w0(xs), dtype=np.float64))
    k = wavenumbers(n_modes)
    values = np.empty((t.size, x.size))
    for j, tj in enumerate(t):
        phases = np.exp(1j * np.outer(np.asarray(x, float) - c * tj, k))
        values[j] = (phases @ (spec * np.exp(-nu * k * k * tj))).real / n_modes
    return Field(values, np.asarray(x, float), np.asarray(t, float))


# -- radix-2 FFT ---------------------------------------------------------------

def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for i in range(n):
        r = 0
        v = i
        for _ in range(bits):
            r = (r << 1) | (v & 1)
            v >>= 1
        rev[i] = r
    return rev


_REV_CACHE: dict[int, np.ndarray] = {}


def fft(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time transform, X_m = sum_n x_n e^(-2pi i mn/N)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.size
    if n == 0 or n & (n - 1):
        raise ContractViolation(f"fft length must be a power of two, got {n}")
    if n == 1:
        return x.copy()
    if n not in _REV_CACHE:
        _REV_CACHE[n] = _bit_reverse_indices(n)
    out = x[_REV_CACHE[n]].copy()
    m = 2
    while m <= n:
        half = m // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = out.reshape(-1, m)
        upper = blocks[:, :half].copy()
        lower = blocks[:, half:] * twiddle
        blocks[:, :half] = upper + lower
        blocks[:, half:] = upper - lower
        m <<= 1
    return out


def ifft(spectrum) -> np.ndarray:
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    return np.conj(fft(np.conj(spectrum))) / spectrum.size


def wavenumbers(n: int) -> np.ndarray:
    """Integer wavenumbers in transform order: 0..n/2-1, -n/2..-1."""
    return np.concatenate([np.arange(0, n // 2), np.arange(-n // 2, 0)])


# -- pseudo-spectral Burgers ------------------------------------------------------

DEFAULT_N_MODES = 512
TAIL_BAND = 0.9          # tail = retained modes with |k| >= TAIL_BAND * k_keep
TAIL_LIMIT = 1e-6


@dataclass(frozen=True)
class SpectralSolution:
    """Spectra of the mean-removed state at the sampling times.

    The physical state is w(x, t) = mean + v(x - mean*t, t) where v is the
    inverse transform of ``spectra[j]``; ``eval`` samples it exactly at
    arbitrary positions.
    """

    t_grid: np.ndarray
    spectra: np.ndarray          # (n_t, n_modes) complex
    mean: float
    n_modes: int
    dt: float

    def eval(self, x_points: np.ndarray, j: int) -> np.ndarray:
        k = wavenumbers(self.n_modes)
        shift = x_points - self.mean * self.t_grid[j]
        phases = np.exp(1j * np.outer(shift, k))
        return (phases @ self.spectra[j]).real / self.n_modes + self.mean

    def field(self, grid: tuple[np.ndarray, np.ndarray]) -> Field:
        x, t = grid
        if t.size != self.t_grid.size or not np.allclose(t, self.t_grid):
            raise ValueError("requested t grid differs from the solved one")
        values = np.empty((t.size, x.size))
        for j in range(t.size):
            values[j] = self.eval(np.asarray(x, float), j)
        return Field(values, np.asarray(x, float), np.asarray(t, float))


def _check_tail(spectrum: np.ndarray, keep: np.ndarray, k: np.ndarray, t: float) -> None:
    energy = np.abs(spectrum) ** 2
    total = float(energy[k != 0].sum())
    if total == 0.0:
        return
    k_keep = int(np.max(np.abs(k[keep])))
    tail = keep & (np.abs(k) >= TAIL_BAND * k_keep)
    frac = float(energy[tail].sum()) / total
    if frac > TAIL_LIMIT:
        raise UnderResolvedError(
            f"tail energy fraction {frac:.3e} > {TAIL_LIMIT:g} at t = {t:.4f}; "
            "increase n_modes"
        )


def burgers_solution(
    w0: Callable[[np.ndarray], np.ndarray],
    nu: float,
    t_grid: np.ndarray,
    dt_solver: Optional[float] = None,
    n_modes: int = DEFAULT_N_MODES,
    nonlinear: bool = True,
) -> SpectralSolution:
    """March w_t + w w_x = nu w_xx with spectral derivatives, 2/3-rule dealiasing
    and classical RK4 substeps that land exactly on the sampling times.

    ``nonlinear=False`` drops the advection term (pure heat), which the scheme
    integrates to near machine precision -- a verification hook.
    """
    if nu <= 0.0:
        raise ValueError("needs nu > 0")
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid[0] != 0.0:
        raise ValueError("t grid must start at 0")
    n = int(n_modes)
    if n & (n - 1):
        raise ContractViolation("n_modes must be a power of two")
    xs = TWO_PI * np.arange(n) / n
    u0 = np.asarray(w0(xs), dtype=np.float64)
    mean = float(u0.mean()) if nonlinear else 0.0
    v = fft(u0 - mean)

    k = wavenumbers(n)
    keep = np.abs(k) <= n // 3
    ik = 1j * k
    ksq = (k * k).astype(np.float64)
    dx = TWO_PI / n

    if dt_solver is None:
        dt = 0.25 * dx * dx / nu
        vmax = float(np.max(np.abs(u0 - mean)))
        if nonlinear and vmax > 0.0:
            dt = min(dt, 0.5 * dx / vmax)
    else:
        dt = float(dt_solver)
    if dt <= 0.0:
        raise ValueError("dt_solver must be positive")

    def rhs(spec: np.ndarray) -> np.ndarray:
        out = -nu * ksq * spec
        if nonlinear:
            phys = np.conj(fft(np.conj(spec))) / n
            dphys = np.conj(fft(np.conj(ik * spec))) / n
            nl = fft((phys * dphys).real)
            nl[~keep] = 0.0
            out = out - nl
        return out

    spectra = np.empty((t_grid.size, n), dtype=np.complex128)
    spectra[0] = v
    # overflow is detected explicitly below, so silence the transient warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, t_grid.size):
            span = t_grid[j] - t_grid[j - 1]
            steps = max(1, int(np.ceil(span / dt - 1e-12)))
            h = span / steps
            for _ in range(steps):
                k1 = rhs(v)
                k2 = rhs(v + 0.5 * h * k1)
                k3 = rhs(v + 0.5 * h * k2)
                k4 = rhs(v + h * k3)
                v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(v.view(np.float64))):
                raise BlowUpError(f"non-finite state at t = {t_grid[j]:.4f}")
            _check_tail(v, keep, k, float(t_grid[j]))
            spectra[j] = v
    return SpectralSolution(t_grid, spectra, mean, n, dt)


def burgers_spectral(
    w0: Callable[[np.ndarray], np.ndarray],
    nu: float,
    grid: tuple[np.ndarray, np.ndarray],
    dt_solver: Optional[float] = None,
    n_modes: int = DEFAULT_N_MODES,
) -> Field:
    """Truth field for the viscous self-advecting equation on the requested grid."""
    x, t = grid
    return burgers_solution(w0, nu, t, dt_solver, n_modes).field((x, t))


# -- field persistence -------------------------------------------------------------

_MAGIC = b"LPF1"


def write_field_csv(field: Field, path, header_lines: Optional[list[str]] = None) -> None:
    """One row per time slice: t followed by the state at each grid point."""
    with open(path, "w") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        fh.write("t," + ",".join(f"{x:.17g}" for x in field.x_grid) + "\n")
        for j, tj in enumerate(field.t_grid):
            fh.write(f"{tj:.17g}," + ",".join(f"{v:.17g}" for v in field.values[j]) + "\n")


def write_field_binary(field: Field, path, meta: Optional[dict] = None) -> None:
    """Compact layout: magic, n_x, n_t, JSON metadata, grids, row-major doubles."""
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", field.n_x, field.n_t, len(blob)))
        fh.write(blob)
        fh.write(field.x_grid.astype("<f8").tobytes())
        fh.write(field.t_grid.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field_binary(path) -> tuple[Field, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a field file")
        n_x, n_t, blob_len = struct.unpack("<III", fh.read(12))
        meta = json.loads(fh.read(blob_len).decode())
        x = np.frombuffer(fh.read(8 * n_x), dtype="<f8")
        t = np.frombuffer(fh.read(8 * n_t), dtype="<f8")
        values = np.frombuffer(fh.read(8 * n_x * n_t), dtype="<f8").reshape(n_t, n_x)
    return Field(values.copy(), x.copy(), t.copy()), meta
