"""Dose corruption of unit-flux cubes: Poisson counting plus optional Gaussian read-out noise and offset."""

import math
import logging
from dataclasses import dataclass, replace

import numpy as np

from src.core.config import CorruptionConfig
from src.core.constants import DEFAULT_DOSE_MAX, UNIT_FLUX_TOLERANCE
from src.core.error_handler import ConfigError, DataError
from src.core.utils import derive_seed
from src.imaging.datacube import DataCube4D, Layout

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DoseSpec:
    """One corruption draw.

    dose is in e⁻/Å² (math.inf for noise-free counts); gaussian_sigma and bias
    are in counts. The infinite-dose sentinel scales patterns by the counts of
    `reference_dose`.
    """

    dose: float
    gaussian_sigma: float = 0.0
    bias: float = 0.0
    seed: int = 0
    reference_dose: float = DEFAULT_DOSE_MAX

    def __post_init__(self):
        if not (self.dose > 0):
            raise ConfigError(f"dose must be > 0 or inf, got {self.dose}")
        if not self.gaussian_sigma >= 0:
            raise ConfigError(f"gaussian_sigma must be >= 0, got {self.gaussian_sigma}")
        if not (self.reference_dose > 0 and math.isfinite(self.reference_dose)):
            raise ConfigError(f"reference_dose must be positive and finite, got {self.reference_dose}")

    @property
    def infinite(self) -> bool:
        return math.isinf(self.dose)

    def electrons_per_pattern(self, step_size: float) -> float:
        dose = self.reference_dose if self.infinite else self.dose
        return dose * step_size ** 2

    def to_dict(self) -> dict:
        return {"dose": self.dose, "gaussian_sigma": self.gaussian_sigma, "bias": self.bias,
                "seed": self.seed, "reference_dose": self.reference_dose}


def check_unit_flux(cube: DataCube4D, tolerance: float = UNIT_FLUX_TOLERANCE) -> None:
    if cube.layout is not Layout.REAL_MAJOR:
        raise DataError("dose application expects a REAL_MAJOR cube")
    totals = cube.values.sum(axis=(2, 3), dtype=np.float64)
    worst = float(np.max(np.abs(totals - 1.0))) if totals.size else 0.0
    if worst > tolerance:
        raise DataError(f"expected unit-flux cube (largest pattern total deviates by {worst:.3e})")


def apply_dose(cube: DataCube4D, spec: DoseSpec) -> DataCube4D:
    """
    Turn a clean unit-flux cube into a low-dose measurement.

    Each pattern receives n_e = dose·step² electrons as independent Poisson
    draws; read-out noise Normal(bias, sigma²) is added afterwards, or just the
    bias when sigma is 0.

    Args:
        cube (DataCube4D): Clean cube whose patterns sum to 1
        spec (DoseSpec): Dose, noise and seed

    Returns:
        DataCube4D: Counts, marked signed when the noise can go negative

    Raises:
        DataError: "expected unit-flux cube"
    """
    check_unit_flux(cube)
    n_e = spec.electrons_per_pattern(cube.calib.step_size)
    out_dtype = np.result_type(cube.values.dtype, np.float32)
    rng = np.random.default_rng(spec.seed)

    if spec.infinite:
        counts = cube.values.astype(out_dtype) * out_dtype.type(n_e)
    else:
        expected = np.maximum(cube.values.astype(np.float64) * n_e, 0.0)
        counts = rng.poisson(expected).astype(out_dtype)

    if spec.gaussian_sigma > 0:
        counts += rng.normal(spec.bias, spec.gaussian_sigma, size=counts.shape).astype(out_dtype)
    elif spec.bias != 0:
        counts += out_dtype.type(spec.bias)

    signed = spec.gaussian_sigma > 0 or spec.bias < 0
    logger.debug("Applied dose %.4g e/Å² (n_e %.1f, sigma %.3g, bias %.3g, seed %d)",
                 spec.dose, n_e, spec.gaussian_sigma, spec.bias, spec.seed)
    return replace(cube, values=counts, signed=signed)


def sample_corruption(epoch: int, cfg: CorruptionConfig, index: int = 0) -> DoseSpec:
    """Deterministic DoseSpec for (master seed, epoch, sample index)."""
    rng = np.random.default_rng(derive_seed(cfg.seed, epoch, index))
    # fixed draw order keeps every field reproducible whatever the ranges are
    u_dose, u_sigma, u_bias = rng.random(3)
    noise_seed = int(rng.integers(0, 2 ** 63 - 1))

    if cfg.dose_min == cfg.dose_max:
        dose = cfg.dose_min
    else:
        log_lo, log_hi = math.log(cfg.dose_min), math.log(cfg.dose_max)
        dose = math.exp(log_lo + u_dose * (log_hi - log_lo))
    sigma = cfg.sigma_min + u_sigma * (cfg.sigma_max - cfg.sigma_min)
    bias = cfg.bias_min + u_bias * (cfg.bias_max - cfg.bias_min)
    return DoseSpec(dose=dose, gaussian_sigma=sigma, bias=bias, seed=noise_seed)
