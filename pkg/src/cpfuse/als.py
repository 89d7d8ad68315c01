"""Unconstrained coupled alternating least squares baseline.

Each sweep updates the three factor matrices in turn by solving the exact
coupled normal equations, so the objective is nonincreasing per sweep.  The
per-factor system is a generalized Sylvester equation

    L @ X @ G_s + X @ G_p = rhs

with a symmetric left operator ``L`` (a projected Gram or the identity) and
two R x R Gram products on the right.  It is solved exactly by
eigendecomposing ``L`` once and solving an R x R system per row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .solver import FusionProblem
from .tensors import CpdModel, cpd_reconstruct, mttkrp

__all__ = ["AlsTrace", "random_init", "solve_als"]


@dataclass(frozen=True)
class AlsTrace:
    """Objective value per sweep (index 0 is the init) plus the exit status."""

    objectives: tuple[float, ...]
    converged: bool
    sweeps: int


def random_init(dims: tuple[int, int, int], rank: int, rng_seed: int) -> CpdModel:
    """Standard normal factor init for the unconstrained baseline."""
    if rank < 1:
        raise ValueError(f"rank must be positive, got {rank}")
    rng = np.random.default_rng(rng_seed)
    return CpdModel(tuple(rng.standard_normal((int(d), rank)) for d in dims))


def _sylvester_rows(evals, evecs, gamma_scaled, gamma_plain, rhs):
    """Solve  evecs diag(evals) evecs^T X gamma_scaled + X gamma_plain = rhs."""
    rank = gamma_plain.shape[0]
    rt = evecs.T @ rhs
    systems = evals[:, None, None] * gamma_scaled + gamma_plain
    try:
        xt = np.linalg.solve(systems, rt[:, :, None])[:, :, 0]
        if not np.all(np.isfinite(xt)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        # Singular normal equations: trace-scaled ridge per row system.
        ridged = systems + (
            1e-10 * np.trace(systems, axis1=1, axis2=2)[:, None, None] + 1e-300
        ) * np.eye(rank)
        xt = np.linalg.solve(ridged, rt[:, :, None])[:, :, 0]
    return evecs @ xt


def _coupled_objective(a, b, c, prob: FusionProblem) -> float:
    ops = prob.operators
    res_h = prob.hsi - cpd_reconstruct(ops.spatial_1 @ a, ops.spatial_2 @ b, c)
    res_m = prob.msi - cpd_reconstruct(a, b, ops.spectral @ c)
    return float(np.sum(res_h * res_h) + np.sum(res_m * res_m))


def solve_als(
    prob: FusionProblem,
    init: CpdModel,
    max_iters: int = 200,
    rel_f_tol: float = 1e-8,
) -> tuple[CpdModel, AlsTrace]:
    """Coupled ALS on the unconstrained objective.

    Returns the factor model after the last sweep together with the sweep
    trace; ``converged`` is set when the relative objective decrease of a
    sweep falls below ``rel_f_tol``.
    """
    prob.validate()
    if init.dims != prob.sri_dims or init.rank != prob.rank:
        raise ValueError(
            f"init has dims {init.dims} rank {init.rank}, problem needs "
            f"{prob.sri_dims} rank {prob.rank}"
        )
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    ops = prob.operators
    p1, p2, pm = ops.spatial_1, ops.spatial_2, ops.spectral
    ev1, vecs1 = eigh(p1.T @ p1)
    ev2, vecs2 = eigh(p2.T @ p2)
    evm, vecsm = eigh(pm.T @ pm)

    a, b, c = (f.copy() for f in init.factors)
    objectives = [_coupled_objective(a, b, c, prob)]
    converged = False
    sweeps = 0
    for _ in range(max_iters):
        u2, u3 = p2 @ b, c
        v2, v3 = b, pm @ c
        rhs = p1.T @ mttkrp(prob.hsi, [a, u2, u3], 1) + mttkrp(prob.msi, [a, v2, v3], 1)
        a = _sylvester_rows(
            ev1, vecs1, (u2.T @ u2) * (u3.T @ u3), (v2.T @ v2) * (v3.T @ v3), rhs
        )

        u1, u3 = p1 @ a, c
        v1, v3 = a, pm @ c
        rhs = p2.T @ mttkrp(prob.hsi, [u1, b, u3], 2) + mttkrp(prob.msi, [v1, b, v3], 2)
        b = _sylvester_rows(
            ev2, vecs2, (u1.T @ u1) * (u3.T @ u3), (v1.T @ v1) * (v3.T @ v3), rhs
        )

        u1, u2 = p1 @ a, p2 @ b
        v1, v2 = a, b
        rhs = mttkrp(prob.hsi, [u1, u2, c], 3) + pm.T @ mttkrp(prob.msi, [v1, v2, c], 3)
        # Spectral projection sits on the MSI side, so its Gram scales that term.
        c = _sylvester_rows(
            evm, vecsm, (v1.T @ v1) * (v2.T @ v2), (u1.T @ u1) * (u2.T @ u2), rhs
        )

        sweeps += 1
        objectives.append(_coupled_objective(a, b, c, prob))
        previous, current = objectives[-2], objectives[-1]
        if previous <= 0.0 or (previous - current) / previous < rel_f_tol:
            converged = True
            break
    return CpdModel((a, b, c)), AlsTrace(tuple(objectives), converged, sweeps)
