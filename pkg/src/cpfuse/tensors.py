"""Dense third-order tensor kernels.

Tensors are float64 ``numpy.ndarray`` objects of shape ``(I, J, K)`` and
factor matrices are ``(dim, R)`` arrays.  The matricization convention is
fixed once for the whole package: linearization of the non-target modes runs
with the lower mode fastest (column-major), so a rank-R CP model obeys::

    unfold(t, 1) == factors[0] @ khatri_rao([factors[2], factors[1]]).T
    unfold(t, 2) == factors[1] @ khatri_rao([factors[2], factors[0]]).T
    unfold(t, 3) == factors[2] @ khatri_rao([factors[1], factors[0]]).T

Every routine validates shapes and raises ``ValueError`` on mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CpdModel",
    "unfold",
    "fold",
    "mode_n_product",
    "khatri_rao",
    "mttkrp",
    "cpd_reconstruct",
    "frobenius_norm",
]


def _check_mode(mode: int) -> None:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def _as_tensor(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got ndim={t.ndim}")
    return t


@dataclass(eq=False)
class CpdModel:
    """A rank-R CP model held as three factor matrices with a shared column count."""

    factors: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self) -> None:
        factors = tuple(np.asarray(f, dtype=np.float64) for f in self.factors)
        if len(factors) != 3:
            raise ValueError(f"expected 3 factor matrices, got {len(factors)}")
        for f in factors:
            if f.ndim != 2:
                raise ValueError("factor matrices must be two-dimensional")
        ranks = {f.shape[1] for f in factors}
        if len(ranks) != 1:
            raise ValueError(f"factors disagree on column count: {sorted(ranks)}")
        self.factors = factors

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(f.shape[0] for f in self.factors)  # type: ignore[return-value]

    def reconstruct(self) -> np.ndarray:
        return cpd_reconstruct(*self.factors)


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Matricize ``t`` along ``mode``.

    Parameters
    ----------
    t : ndarray, shape (I, J, K)
    mode : int
        Target mode, 1-based.

    Returns
    -------
    ndarray, shape (dims[mode-1], prod(other dims))
        Columns enumerate the non-target indices with the lower mode fastest.
    """
    _check_mode(mode)
    t = _as_tensor(t)
    return np.moveaxis(t, mode - 1, 0).reshape((t.shape[mode - 1], -1), order="F")


def fold(m: np.ndarray, mode: int, dims: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild the ``dims`` tensor from a matricization."""
    _check_mode(mode)
    m = np.asarray(m, dtype=np.float64)
    if len(dims) != 3 or any(int(d) <= 0 for d in dims):
        raise ValueError(f"dims must be three positive integers, got {dims!r}")
    rest = tuple(d for ax, d in enumerate(dims) if ax != mode - 1)
    expected = (dims[mode - 1], int(np.prod(rest)))
    if m.ndim != 2 or m.shape != expected:
        raise ValueError(f"matricization has shape {m.shape}, expected {expected}")
    return np.moveaxis(m.reshape((dims[mode - 1],) + rest, order="F"), 0, mode - 1)


def mode_n_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Contract matrix ``m`` against ``mode`` of ``t``: fold(m @ unfold(t, mode))."""
    _check_mode(mode)
    t = _as_tensor(t)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("mode product expects a matrix")
    if m.shape[1] != t.shape[mode - 1]:
        raise ValueError(
            f"matrix has {m.shape[1]} columns but tensor mode {mode} has "
            f"size {t.shape[mode - 1]}"
        )
    dims = list(t.shape)
    dims[mode - 1] = m.shape[0]
    return fold(m @ unfold(t, mode), mode, tuple(dims))


def khatri_rao(mats) -> np.ndarray:
    """Columnwise Kronecker product of the matrices in ``mats``.

    Column r of the result is the Kronecker product of the r-th columns in
    list order, so the row index of the first matrix varies slowest.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if not mats:
        raise ValueError("khatri_rao needs at least one matrix")
    for m in mats:
        if m.ndim != 2:
            raise ValueError("khatri_rao operands must be matrices")
    cols = {m.shape[1] for m in mats}
    if len(cols) != 1:
        raise ValueError(f"khatri_rao operands disagree on column count: {sorted(cols)}")
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, out.shape[1])
    return out


def _check_factor(f: np.ndarray, dim: int, rank: int, mode: int) -> None:
    if f.shape != (dim, rank):
        raise ValueError(
            f"factor for mode {mode} has shape {f.shape}, expected {(dim, rank)}"
        )


def mttkrp(t: np.ndarray, factors, mode: int) -> np.ndarray:
    """Matricized-tensor times Khatri-Rao product.

    Computes ``unfold(t, mode) @ W`` where ``W`` is the Khatri-Rao product of
    the two non-target factors in the unfolding convention (higher mode
    first).  Only the non-target factors are read; the target slot must still
    be present so ``factors`` always has length 3.
    """
    _check_mode(mode)
    t = _as_tensor(t)
    factors = [np.asarray(f, dtype=np.float64) for f in factors]
    if len(factors) != 3:
        raise ValueError(f"expected 3 factor matrices, got {len(factors)}")
    rank = factors[mode % 3].shape[1]
    for n in range(3):
        if n != mode - 1:
            _check_factor(factors[n], t.shape[n], rank, n + 1)
    a, b, c = factors
    if mode == 1:
        return np.einsum("ijk,jr,kr->ir", t, b, c, optimize=True)
    if mode == 2:
        return np.einsum("ijk,ir,kr->jr", t, a, c, optimize=True)
    return np.einsum("ijk,ir,jr->kr", t, a, b, optimize=True)


def cpd_reconstruct(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Evaluate the dense tensor of the CP model ``[[a, b, c]]``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    ranks = {a.shape[1], b.shape[1], c.shape[1]} if a.ndim == b.ndim == c.ndim == 2 else set()
    if a.ndim != 2 or b.ndim != 2 or c.ndim != 2 or len(ranks) != 1:
        raise ValueError("cpd_reconstruct expects three matrices sharing a column count")
    return np.einsum("ir,jr,kr->ijk", a, b, c, optimize=True)


def frobenius_norm(t: np.ndarray) -> float:
    """Frobenius norm of an array of any shape."""
    return float(np.linalg.norm(np.asarray(t, dtype=np.float64).ravel()))
