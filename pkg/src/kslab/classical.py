"""Non-learned reconstructions: zero-filled baselines and a Tikhonov MAP solver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kslab.errors import InvalidArgumentError, NumericalDivergenceError
from kslab.fft import ifft2c
from kslab.forward import NllConfig, _decode, _encode, _likelihood_inputs, adjoint, check_sensitivities, rss

__all__ = ["CGResult", "MapObjective", "map_objective", "solve_map_cg", "zero_filled_rss", "zero_filled_sense"]


@dataclass(frozen=True)
class MapObjective:
    """Data term ``nll`` plus ``reg_lambda * ||x||^2``, and CG stopping rules."""

    data_term: NllConfig = field(default_factory=NllConfig)
    reg_lambda: float = 1e-3
    max_iters: int = 50
    tol: float = 1e-6

    def __post_init__(self):
        if not self.reg_lambda >= 0:
            raise InvalidArgumentError(f"reg_lambda must be nonnegative, got {self.reg_lambda}")
        if not self.tol > 0:
            raise InvalidArgumentError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be positive, got {self.max_iters}")


@dataclass(frozen=True, eq=False)
class CGResult:
    """Solution of the regularized normal equations and its convergence record.

    ``residuals[i]`` is the relative residual after ``i`` iterations and
    ``objectives[i]`` the MAP objective at that iterate.
    """

    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    residuals: tuple
    objectives: tuple


def zero_filled_rss(y):
    """RSS of the coil images obtained by inverse FFT of the zero-filled k-spaces."""
    return rss(ifft2c(y.coils))


def zero_filled_sense(y, maps):
    """Sensitivity-weighted coil combination of the zero-filled data (the adjoint)."""
    return adjoint(y, maps)


def map_objective(x, y, maps, mask, obj):
    """``(1/sigma^2) sum_k ||U F(S_k x) - y_k||^2 + lambda ||x||^2``."""
    x, maps, bits = _likelihood_inputs(x, y, maps, mask)
    residual = _encode(x, maps, bits) - y.coils
    data = np.sum(residual.real**2 + residual.imag**2) / obj.data_term.sigma_sq
    return float(data + obj.reg_lambda * np.sum(x.real**2 + x.imag**2))


def solve_map_cg(y, maps, mask, obj=MapObjective()):
    """Solve ``(A^H A / sigma^2 + lambda I) x = A^H y / sigma^2`` by conjugate residuals.

    Conjugate residuals is the conjugate-gradient variant that minimizes the
    residual norm over the Krylov space, so both the residual norm and the MAP
    objective decrease monotonically, at one operator application per iteration.
    Starts from the zero-filled SENSE image and stops once the residual norm
    relative to the right-hand side drops below ``obj.tol`` or after
    ``obj.max_iters`` iterations.

    Raises:
        NumericalDivergenceError: a non-finite iterate or residual appears.
    """
    maps = check_sensitivities(maps, y.shape)
    x0 = zero_filled_sense(y, maps)
    x, maps, bits = _likelihood_inputs(x0, y, maps, mask)
    sigma_sq = obj.data_term.sigma_sq
    lam = obj.reg_lambda

    def normal_op(v):
        return _decode(_encode(v, maps, bits), maps, bits) / sigma_sq + lam * v

    b = _decode(y.coils, maps, bits) / sigma_sq
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        zero = np.zeros_like(x)
        return CGResult(zero, 0, 0.0, True, (0.0,), (map_objective(zero, y, maps, mask, obj),))

    r = b - normal_op(x)
    ar = normal_op(r)
    p, ap = r.copy(), ar.copy()
    rar = float(np.vdot(r, ar).real)
    residuals = [float(np.linalg.norm(r)) / b_norm]
    objectives = [map_objective(x, y, maps, mask, obj)]
    iterations = 0
    while residuals[-1] >= obj.tol and iterations < obj.max_iters:
        apap = float(np.vdot(ap, ap).real)
        if apap <= 0.0 or rar <= 0.0:
            break
        alpha = rar / apap
        x = x + alpha * p
        r = r - alpha * ap
        iterations += 1
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(x))):
            raise NumericalDivergenceError(f"CG produced non-finite values at iteration {iterations}", iterations - 1)
        ar = normal_op(r)
        rar_new = float(np.vdot(r, ar).real)
        beta = rar_new / rar
        p = r + beta * p
        ap = ar + beta * ap
        rar = rar_new
        residuals.append(float(np.linalg.norm(r)) / b_norm)
        objectives.append(map_objective(x, y, maps, mask, obj))
    return CGResult(
        x=x,
        iterations=iterations,
        residual=float(residuals[-1]),
        converged=bool(residuals[-1] < obj.tol),
        residuals=tuple(float(v) for v in residuals),
        objectives=tuple(objectives),
    )
