"""Spatial and spectral degradation operators.

The high-resolution scene is degraded along two paths: a hyperspectral image
obtained by blurring and downsampling both spatial modes, and a multispectral
image obtained by aggregating spectral bands.  Both paths are plain matrix
mode products, so they commute with CP structure: degrading a CP model equals
projecting its factor matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .tensors import frobenius_norm, mode_n_product

__all__ = [
    "DegradationConfig",
    "DegradationOperators",
    "blur_downsample_matrix",
    "band_aggregation_matrix",
    "build_operators",
    "degrade",
    "add_noise",
]


@dataclass(frozen=True)
class DegradationConfig:
    """Parameters of the degradation model.

    ``snr_hsi_db`` / ``snr_msi_db`` of ``math.inf`` disable noise on that path.
    """

    kernel_size: int = 9
    sigma: float = 2.0
    factor: int = 4
    num_msi_bands: int = 6
    snr_hsi_db: float = math.inf
    snr_msi_db: float = math.inf
    rng_seed: int = 0

    def validate(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.factor < 1:
            raise ValueError(f"downsampling factor must be >= 1, got {self.factor}")
        if self.num_msi_bands < 1:
            raise ValueError(f"num_msi_bands must be >= 1, got {self.num_msi_bands}")

    def with_snr(self, snr_hsi_db: float, snr_msi_db: float) -> "DegradationConfig":
        return replace(self, snr_hsi_db=snr_hsi_db, snr_msi_db=snr_msi_db)


@dataclass(eq=False)
class DegradationOperators:
    """The three degradation matrices applied as mode products.

    spatial_1 : (I_H, I) blur-downsample matrix for the first spatial mode
    spatial_2 : (J_H, J) blur-downsample matrix for the second spatial mode
    spectral  : (K_M, K) band aggregation matrix for the spectral mode
    """

    spatial_1: np.ndarray
    spatial_2: np.ndarray
    spectral: np.ndarray

    def __post_init__(self) -> None:
        for name in ("spatial_1", "spatial_2", "spectral"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.ndim != 2:
                raise ValueError(f"{name} must be a matrix")
            setattr(self, name, m)


def blur_downsample_matrix(full_dim: int, cfg: DegradationConfig) -> np.ndarray:
    """Composite blur-then-downsample matrix for one spatial dimension.

    The blur is a symmetric Toeplitz matrix built from a truncated Gaussian
    kernel (``kernel_size`` taps, weights proportional to exp(-i^2/(2 sigma^2))
    and normalized to sum 1) with zero padding at the boundary.  Downsampling
    keeps every ``factor``-th row starting near the half-phase offset, chosen
    so the result always has ceil(full_dim / factor) rows.
    """
    cfg.validate()
    if full_dim < 1:
        raise ValueError(f"full_dim must be positive, got {full_dim}")
    if cfg.kernel_size > full_dim:
        raise ValueError(
            f"kernel_size {cfg.kernel_size} exceeds dimension {full_dim}"
        )
    half = (cfg.kernel_size - 1) // 2
    offsets = np.arange(-half, half + 1)
    taps = np.exp(-(offsets.astype(np.float64) ** 2) / (2.0 * cfg.sigma**2))
    taps /= taps.sum()

    blur = np.zeros((full_dim, full_dim))
    for t, w in zip(offsets, taps):
        idx = np.arange(max(0, -t), min(full_dim, full_dim - t))
        blur[idx, idx + t] = w

    d = cfg.factor
    # Half-phase start, clamped so the row count always equals ceil(full_dim/d).
    start = min(d // 2, (full_dim - 1) % d)
    rows = np.arange(start, full_dim, d)
    return blur[rows, :]


def band_aggregation_matrix(k_full: int, k_m: int) -> np.ndarray:
    """Uniform aggregation of ``k_full`` bands into ``k_m`` contiguous groups.

    Group sizes differ by at most one (longer groups first); each row averages
    its group, so rows sum to one and have disjoint support.
    """
    if k_full < 1 or k_m < 1:
        raise ValueError("band counts must be positive")
    if k_m > k_full:
        raise ValueError(f"cannot aggregate {k_full} bands into {k_m} groups")
    base, extra = divmod(k_full, k_m)
    sizes = [base + 1] * extra + [base] * (k_m - extra)
    out = np.zeros((k_m, k_full))
    lo = 0
    for q, size in enumerate(sizes):
        out[q, lo : lo + size] = 1.0 / size
        lo += size
    return out


def build_operators(
    dims: tuple[int, int, int],
    cfg: DegradationConfig,
    spectral: np.ndarray | None = None,
) -> DegradationOperators:
    """Build the operator triple for a scene of shape ``dims``.

    A user-supplied spectral matrix replaces the uniform aggregation; it must
    have ``dims[2]`` columns, nonnegative entries and unit row sums.
    """
    cfg.validate()
    i_dim, j_dim, k_dim = dims
    if spectral is None:
        spectral = band_aggregation_matrix(k_dim, cfg.num_msi_bands)
    else:
        spectral = np.asarray(spectral, dtype=np.float64)
        if spectral.ndim != 2 or spectral.shape[1] != k_dim:
            raise ValueError(
                f"spectral operator must have {k_dim} columns, got shape {spectral.shape}"
            )
        if np.any(spectral < 0):
            raise ValueError("spectral operator must be entrywise nonnegative")
        row_sums = spectral.sum(axis=1)
        if not np.allclose(row_sums, 1.0, atol=1e-8):
            raise ValueError("spectral operator rows must sum to 1")
    return DegradationOperators(
        spatial_1=blur_downsample_matrix(i_dim, cfg),
        spatial_2=blur_downsample_matrix(j_dim, cfg),
        spectral=spectral,
    )


def degrade(sri: np.ndarray, ops: DegradationOperators) -> tuple[np.ndarray, np.ndarray]:
    """Apply both degradation paths to a scene.

    Returns ``(hsi, msi)`` where the HSI is the scene contracted with the two
    spatial operators and the MSI is the scene contracted with the spectral
    operator.
    """
    sri = np.asarray(sri, dtype=np.float64)
    if sri.ndim != 3:
        raise ValueError("degrade expects a third-order tensor")
    for name, mode in (("spatial_1", 1), ("spatial_2", 2), ("spectral", 3)):
        m = getattr(ops, name)
        if m.shape[1] != sri.shape[mode - 1]:
            raise ValueError(
                f"{name} has {m.shape[1]} columns but scene mode {mode} has "
                f"size {sri.shape[mode - 1]}"
            )
    hsi = mode_n_product(mode_n_product(sri, ops.spatial_1, 1), ops.spatial_2, 2)
    msi = mode_n_product(sri, ops.spectral, 3)
    return hsi, msi


def add_noise(t: np.ndarray, snr_db: float, rng_seed: int) -> np.ndarray:
    """Add white Gaussian noise rescaled to hit the requested Frobenius SNR exactly.

    A single standard normal draw is rescaled so that
    ``frobenius_norm(noise) == frobenius_norm(t) * 10**(-snr_db / 20)``.
    ``snr_db == math.inf`` disables the noise and returns a copy of ``t``.
    """
    t = np.asarray(t, dtype=np.float64)
    if math.isinf(snr_db) and snr_db > 0:
        return t.copy()
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    signal_norm = frobenius_norm(t)
    if signal_norm == 0.0:
        raise ValueError("cannot calibrate noise against an all-zero tensor")
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(t.shape)
    scale = signal_norm / (np.linalg.norm(noise.ravel()) * 10.0 ** (snr_db / 20.0))
    return t + scale * noise
