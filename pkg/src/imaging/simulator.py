"""
Synthetic 4D-STEM acquisitions from parametric weak-phase phantoms.

A single-slice forward model: for every probe position the exit wave is the
shifted probe times exp(i*phase), and the recorded pattern is |FFT(exit)|^2
binned onto the detector and normalized to unit total intensity.
"""

import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import constants, fft

from src.core.constants import DEFAULT_DETECTOR_OVERSAMPLE, DEFAULT_UPSCALE, MAX_WEAK_PHASE_RAD
from src.core.error_handler import ConfigError, DataError
from src.imaging.datacube import DataCube4D, Layout, ScanCalibration

logger = logging.getLogger(__name__)

_ATOM_BATCH = 4096
_GAUSSIAN_EXTENT = 4.0


class PhantomKind(str, Enum):
    CRYSTAL = "CRYSTAL"
    AMORPHOUS = "AMORPHOUS"
    BLOB = "BLOB"
    SINUSOID = "SINUSOID"
    POINT_ARRAY = "POINT_ARRAY"


_DEFAULT_PARAMS: Dict[PhantomKind, Dict[str, Any]] = {
    PhantomKind.CRYSTAL: {
        "lattice": "square", "a": 4.0, "vectors": None, "rotation": 0.0, "offset": (0.0, 0.0),
        "basis": None, "amplitude": 0.3, "sigma": 0.5,
    },
    PhantomKind.AMORPHOUS: {
        "n_atoms": None, "density": 0.02, "min_spacing": 2.0, "amplitude": 0.3, "sigma": 0.5,
        "max_retries": 1000,
    },
    PhantomKind.BLOB: {
        "center": None, "outer_radius": 40.0, "thickness": 8.0, "amplitude": 0.5,
    },
    PhantomKind.SINUSOID: {
        "amplitude": 0.5, "period": 32.0, "angle": 0.0, "phase_offset": 0.0,
    },
    PhantomKind.POINT_ARRAY: {
        "spacing": 16.0, "jitter": 2.0, "sigma": 2.5, "amplitude": 0.5,
    },
}


# ----------------------------------------------------------------------
# probe
# ----------------------------------------------------------------------
def electron_wavelength(energy: float) -> float:
    """Relativistic electron wavelength in Å for a beam energy in keV."""
    if not energy > 0:
        raise ConfigError(f"energy must be > 0 keV, got {energy}")
    volts = energy * 1e3
    m0, e, c, h = constants.m_e, constants.e, constants.c, constants.h
    momentum = math.sqrt(2.0 * m0 * e * volts * (1.0 + e * volts / (2.0 * m0 * c ** 2)))
    return h / momentum * 1e10


@dataclass(frozen=True)
class ProbeSpec:
    wavelength: float
    aperture_cutoff: float
    defocus: float
    grid: Tuple[int, int]
    sampling: float

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(n) for n in self.grid))
        if self.wavelength <= 0 or self.sampling <= 0 or self.aperture_cutoff <= 0:
            raise ConfigError("probe wavelength, sampling and aperture cutoff must be positive")
        nyquist = 1.0 / (2.0 * self.sampling)
        if self.aperture_cutoff >= nyquist:
            raise ConfigError(
                f"undersampled probe: aperture cutoff {self.aperture_cutoff:.4f} 1/Å "
                f"is not below the grid Nyquist frequency {nyquist:.4f} 1/Å"
            )

    @classmethod
    def from_calibration(cls, calib: ScanCalibration,
                         detector_oversample: int = DEFAULT_DETECTOR_OVERSAMPLE) -> "ProbeSpec":
        geometry = simulation_geometry(calib, detector_oversample)
        return cls(
            wavelength=geometry.wavelength,
            aperture_cutoff=calib.convergence * 1e-3 / geometry.wavelength,
            defocus=calib.defocus,
            grid=(geometry.window, geometry.window),
            sampling=geometry.sampling,
        )


def _frequencies(spec: ProbeSpec) -> Tuple[np.ndarray, np.ndarray]:
    return fft.fftfreq(spec.grid[0], d=spec.sampling), fft.fftfreq(spec.grid[1], d=spec.sampling)


def aperture_function(spec: ProbeSpec) -> np.ndarray:
    """Reciprocal-space probe A(k) in FFT order: top-hat aperture times the defocus phase."""
    kx, ky = _frequencies(spec)
    k2 = kx[:, None] ** 2 + ky[None, :] ** 2
    aperture = (np.sqrt(k2) <= spec.aperture_cutoff).astype(np.float64)
    return aperture * np.exp(-1j * math.pi * spec.wavelength * spec.defocus * k2)


def build_probe(spec: ProbeSpec, center: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Real-space probe with Σ|ψ|² = 1.

    Args:
        spec (ProbeSpec): Probe parameters
        center (Optional[Sequence[float]]): Probe position in (fractional) window pixels, default the window middle

    Returns:
        np.ndarray: complex128 array of shape spec.grid
    """
    if center is None:
        center = (spec.grid[0] // 2, spec.grid[1] // 2)
    kx, ky = _frequencies(spec)
    ramp = np.exp(-2j * math.pi * (kx[:, None] * center[0] + ky[None, :] * center[1]) * spec.sampling)
    psi = fft.ifft2(aperture_function(spec) * ramp)
    return psi / math.sqrt(float(np.sum(np.abs(psi) ** 2)))


@dataclass(frozen=True)
class SimulationGeometry:
    """Sampling of the simulation grid implied by the detector calibration."""

    wavelength: float
    sampling: float
    window: int
    oversample: int
    detector_size: int

    @property
    def margin(self) -> float:
        """Distance (Å) the object grid extends beyond the scanned area."""
        return (self.window // 2 + 2) * self.sampling

    @property
    def zero_index(self) -> int:
        # zero frequency lands in the middle sub-pixel of detector pixel K//2
        return (self.detector_size // 2) * self.oversample + (self.oversample - 1) // 2


def simulation_geometry(calib: ScanCalibration,
                        detector_oversample: int = DEFAULT_DETECTOR_OVERSAMPLE) -> SimulationGeometry:
    kx, ky = calib.detector_shape
    if kx != ky:
        raise ConfigError(f"simulation needs a square detector, got {calib.detector_shape}")
    if detector_oversample < 1 or detector_oversample % 2 == 0:
        raise ConfigError(f"detector_oversample must be a positive odd integer, got {detector_oversample}")
    wavelength = electron_wavelength(calib.energy)
    sampling = wavelength / (kx * calib.detector_pixel * 1e-3)
    return SimulationGeometry(
        wavelength=wavelength,
        sampling=sampling,
        window=detector_oversample * kx,
        oversample=detector_oversample,
        detector_size=kx,
    )


# ----------------------------------------------------------------------
# phantoms
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Phantom:
    """Projected specimen phase (radians).

    `phase` is rendered at `pixel_size` over the field of view; `render`
    evaluates the same specimen on any other grid.
    """

    kind: PhantomKind
    params: Dict[str, Any]
    seed: int
    field_of_view: Tuple[float, float]
    pixel_size: float
    margin: float
    atoms: Optional[np.ndarray] = None
    phase: np.ndarray = field(default=None, repr=False)

    @property
    def bounds(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        if self.kind in (PhantomKind.SINUSOID, PhantomKind.BLOB):
            return (-math.inf, math.inf), (-math.inf, math.inf)
        return ((-self.margin, self.field_of_view[0] + self.margin),
                (-self.margin, self.field_of_view[1] + self.margin))

    def render(self, shape: Sequence[int], pixel_size: float,
               origin: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
        """Phase at coordinates origin + index * pixel_size on a grid of the given shape."""
        shape = (int(shape[0]), int(shape[1]))
        if self.kind is PhantomKind.SINUSOID:
            return _render_sinusoid(self.params, shape, pixel_size, origin)
        if self.kind is PhantomKind.BLOB:
            return _render_blob(self.params, self.field_of_view, shape, pixel_size, origin)
        return _render_atoms(self.atoms, shape, pixel_size, origin)


def _grid_coordinates(shape: Tuple[int, int], pixel_size: float, origin: Sequence[float]):
    x = origin[0] + np.arange(shape[0]) * pixel_size
    y = origin[1] + np.arange(shape[1]) * pixel_size
    return np.meshgrid(x, y, indexing="ij")


def _render_sinusoid(params, shape, pixel_size, origin) -> np.ndarray:
    x, y = _grid_coordinates(shape, pixel_size, origin)
    angle = math.radians(params["angle"])
    along = x * math.cos(angle) + y * math.sin(angle)
    return params["amplitude"] * np.sin(2 * math.pi * along / params["period"] + params["phase_offset"])


def _render_blob(params, field_of_view, shape, pixel_size, origin) -> np.ndarray:
    x, y = _grid_coordinates(shape, pixel_size, origin)
    center = params["center"] or (field_of_view[0] / 2, field_of_view[1] / 2)
    outer = params["outer_radius"]
    inner = outer - params["thickness"]
    rho2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
    # projected thickness of a hollow sphere, largest at rho = inner radius
    chord = 2.0 * (np.sqrt(np.clip(outer ** 2 - rho2, 0, None)) - np.sqrt(np.clip(inner ** 2 - rho2, 0, None)))
    return params["amplitude"] * chord / (2.0 * math.sqrt(outer ** 2 - inner ** 2))


def _render_atoms(atoms: np.ndarray, shape, pixel_size, origin) -> np.ndarray:
    """Sum of isotropic Gaussians (x, y, peak amplitude, sigma per row) on a regular grid."""
    phase = np.zeros(shape, dtype=np.float64)
    if atoms is None or len(atoms) == 0:
        return phase
    radius = int(math.ceil(_GAUSSIAN_EXTENT * atoms[:, 3].max() / pixel_size))
    offsets = np.arange(-radius, radius + 1)
    for start in range(0, len(atoms), _ATOM_BATCH):
        chunk = atoms[start:start + _ATOM_BATCH]
        cx = np.rint((chunk[:, 0] - origin[0]) / pixel_size).astype(np.int64)
        cy = np.rint((chunk[:, 1] - origin[1]) / pixel_size).astype(np.int64)
        ix = cx[:, None, None] + offsets[None, :, None]
        iy = cy[:, None, None] + offsets[None, None, :]
        dx = origin[0] + ix * pixel_size - chunk[:, 0, None, None]
        dy = origin[1] + iy * pixel_size - chunk[:, 1, None, None]
        sigma = chunk[:, 3, None, None]
        values = chunk[:, 2, None, None] * np.exp(-(dx ** 2 + dy ** 2) / (2.0 * sigma ** 2))
        ix, iy, values = np.broadcast_arrays(ix, iy, values)
        inside = (ix >= 0) & (ix < shape[0]) & (iy >= 0) & (iy < shape[1])
        np.add.at(phase, (ix[inside], iy[inside]), values[inside])
    return phase


def _lattice_vectors(params) -> np.ndarray:
    a = float(params["a"])
    if params["vectors"] is not None:
        vectors = np.asarray(params["vectors"], dtype=np.float64)
        if vectors.shape != (2, 2) or abs(np.linalg.det(vectors)) < 1e-9:
            raise ConfigError(f"crystal vectors must be two independent 2-D vectors, got {params['vectors']}")
    elif params["lattice"] == "square":
        vectors = np.array([[a, 0.0], [0.0, a]])
    elif params["lattice"] == "hexagonal":
        vectors = np.array([[a, 0.0], [a / 2, a * math.sqrt(3) / 2]])
    else:
        raise ConfigError(f"crystal lattice must be 'square', 'hexagonal' or explicit vectors, got {params['lattice']!r}")
    theta = math.radians(params["rotation"])
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    return vectors @ rot.T


def _crystal_atoms(params, bounds) -> np.ndarray:
    vectors = _lattice_vectors(params)
    basis = params["basis"] or [[0.0, 0.0, params["amplitude"]]]
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim != 2 or basis.shape[1] not in (2, 3):
        raise ConfigError("crystal basis entries must be [fx, fy] or [fx, fy, amplitude]")
    if basis.shape[1] == 2:
        basis = np.hstack([basis, np.full((len(basis), 1), params["amplitude"])])

    pad = _GAUSSIAN_EXTENT * params["sigma"]
    (x0, x1), (y0, y1) = bounds
    corners = np.array([[x0 - pad, y0 - pad], [x0 - pad, y1 + pad], [x1 + pad, y0 - pad], [x1 + pad, y1 + pad]])
    corners -= np.asarray(params["offset"], dtype=np.float64)
    fractional = corners @ np.linalg.inv(vectors)
    lo = np.floor(fractional.min(axis=0)).astype(int) - 1
    hi = np.ceil(fractional.max(axis=0)).astype(int) + 1
    n, m = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    cells = np.stack([n.ravel(), m.ravel()], axis=1).astype(np.float64)

    positions = (cells[:, None, :] + basis[None, :, :2]) @ vectors + np.asarray(params["offset"])
    amplitudes = np.broadcast_to(basis[None, :, 2], positions.shape[:2])
    positions = positions.reshape(-1, 2)
    amplitudes = amplitudes.reshape(-1)
    keep = ((positions[:, 0] >= x0 - pad) & (positions[:, 0] <= x1 + pad)
            & (positions[:, 1] >= y0 - pad) & (positions[:, 1] <= y1 + pad))
    positions, amplitudes = positions[keep], amplitudes[keep]
    sigma = np.full(len(positions), params["sigma"])
    return np.column_stack([positions, amplitudes, sigma])


def _amorphous_atoms(params, bounds, rng: np.random.Generator) -> np.ndarray:
    (x0, x1), (y0, y1) = bounds
    n_atoms = params["n_atoms"]
    if n_atoms is None:
        n_atoms = int(round(params["density"] * (x1 - x0) * (y1 - y0)))
    n_atoms = int(n_atoms)
    if n_atoms < 0:
        raise ConfigError(f"amorphous n_atoms must be >= 0, got {n_atoms}")
    spacing2 = float(params["min_spacing"]) ** 2
    retries = int(params["max_retries"])

    placed = np.empty((n_atoms, 2), dtype=np.float64)
    count = 0
    # random sequential addition with a bounded number of attempts per atom
    while count < n_atoms:
        for _ in range(retries):
            candidate = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
            if count == 0 or np.min(np.sum((placed[:count] - candidate) ** 2, axis=1)) >= spacing2:
                placed[count] = candidate
                count += 1
                break
        else:
            raise ConfigError(
                f"packing failed: placed {count} of {n_atoms} atoms with min spacing "
                f"{params['min_spacing']} Å after {retries} attempts"
            )
    return np.column_stack([placed, np.full(n_atoms, params["amplitude"]), np.full(n_atoms, params["sigma"])])


def _point_array_atoms(params, bounds, rng: np.random.Generator) -> np.ndarray:
    (x0, x1), (y0, y1) = bounds
    spacing = float(params["spacing"])
    if spacing <= 0:
        raise ConfigError(f"point array spacing must be > 0, got {spacing}")
    xs = np.arange(math.floor(x0 / spacing), math.ceil(x1 / spacing) + 1) * spacing
    ys = np.arange(math.floor(y0 / spacing), math.ceil(y1 / spacing) + 1) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)
    points += rng.uniform(-params["jitter"], params["jitter"], size=points.shape)
    return np.column_stack([points, np.full(len(points), params["amplitude"]), np.full(len(points), params["sigma"])])


def _as_kind(kind) -> PhantomKind:
    name = kind.value if isinstance(kind, PhantomKind) else str(kind).upper()
    try:
        return PhantomKind(name)
    except ValueError as exc:
        raise ConfigError(f"unknown phantom kind {kind!r}") from exc


def _resolve_params(kind: PhantomKind, params: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    defaults = _DEFAULT_PARAMS[kind]
    params = dict(params or {})
    unknown = sorted(set(params) - set(defaults))
    if unknown:
        raise ConfigError(f"{kind.value} phantom: unknown parameter(s) {', '.join(unknown)}")
    resolved = {**defaults, **params}
    for key in ("sigma", "period", "outer_radius", "a"):
        if key in resolved and resolved[key] is not None and not float(resolved[key]) > 0:
            raise ConfigError(f"{kind.value} phantom: {key} must be > 0, got {resolved[key]}")
    if kind is PhantomKind.BLOB and not 0 < resolved["thickness"] < resolved["outer_radius"]:
        raise ConfigError("blob thickness must lie in (0, outer_radius)")
    return resolved


def make_phantom(kind, params: Optional[Dict[str, Any]] = None, seed: int = 0,
                 field_of_view: Sequence[float] = (256.0, 256.0), pixel_size: float = 4.0 / 3.0,
                 margin: float = 48.0) -> Phantom:
    """
    Build a deterministic phantom.

    Args:
        kind: PhantomKind or its name
        params (Optional[Dict[str, Any]]): Kind-specific parameters, merged over the defaults
        seed (int): Seed for the random placement of AMORPHOUS atoms and POINT_ARRAY jitter
        field_of_view (Sequence[float]): Scanned extent in Å
        pixel_size (float): Sampling (Å) of the stored phase map
        margin (float): Extra specimen (Å) around the field of view for probe tails

    Returns:
        Phantom: The specimen with its phase rendered over the field of view

    Raises:
        ConfigError: invalid parameters, "packing failed", or a phase exceeding the weak-phase limit
    """
    kind = _as_kind(kind)
    resolved = _resolve_params(kind, params)
    fov = (float(field_of_view[0]), float(field_of_view[1]))
    rng = np.random.default_rng(seed)
    bounds = ((-margin, fov[0] + margin), (-margin, fov[1] + margin))

    atoms = None
    if kind is PhantomKind.CRYSTAL:
        atoms = _crystal_atoms(resolved, bounds)
    elif kind is PhantomKind.AMORPHOUS:
        atoms = _amorphous_atoms(resolved, bounds, rng)
    elif kind is PhantomKind.POINT_ARRAY:
        atoms = _point_array_atoms(resolved, bounds, rng)

    phantom = Phantom(kind=kind, params=resolved, seed=int(seed), field_of_view=fov,
                      pixel_size=float(pixel_size), margin=float(margin), atoms=atoms)
    shape = (max(1, int(round(fov[0] / pixel_size))), max(1, int(round(fov[1] / pixel_size))))
    phase = phantom.render(shape, pixel_size)
    _check_weak_phase(phase, f"{kind.value} phantom")
    object.__setattr__(phantom, "phase", phase)
    logger.debug("Built %s phantom (seed %d, %s atoms)", kind.value, seed,
                 "no" if atoms is None else len(atoms))
    return phantom


def make_phantom_for_scan(kind, params: Optional[Dict[str, Any]], seed: int, calib: ScanCalibration,
                          scan_shape: Sequence[int], detector_oversample: int = DEFAULT_DETECTOR_OVERSAMPLE,
                          upscale: int = DEFAULT_UPSCALE) -> Phantom:
    """Phantom sized for a scan: field of view H·step × W·step, margin wide enough for the probe window."""
    geometry = simulation_geometry(calib, detector_oversample)
    sigma = float((params or {}).get("sigma") or _DEFAULT_PARAMS[_as_kind(kind)].get("sigma") or 0.0)
    fov = (scan_shape[0] * calib.step_size, scan_shape[1] * calib.step_size)
    return make_phantom(kind, params, seed, field_of_view=fov, pixel_size=calib.step_size / upscale,
                        margin=geometry.margin + _GAUSSIAN_EXTENT * sigma)


def _check_weak_phase(phase: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(phase)):
        raise ConfigError(f"{where}: phase is not finite")
    peak = float(np.max(np.abs(phase))) if phase.size else 0.0
    if peak > MAX_WEAK_PHASE_RAD:
        raise ConfigError(f"{where}: max |phase| = {peak:.3f} rad exceeds the weak-phase limit {MAX_WEAK_PHASE_RAD}")


# ----------------------------------------------------------------------
# forward model
# ----------------------------------------------------------------------
def render_ground_truth(phantom: Phantom, calib: ScanCalibration, scan_shape: Sequence[int],
                        upscale: int = DEFAULT_UPSCALE) -> np.ndarray:
    """Phase on the (rH, rW) grid; pixel u sits at scan coordinate u / r."""
    h, w = scan_shape
    return phantom.render((upscale * h, upscale * w), calib.step_size / upscale)


def _covers(bounds, lo: Iterable[float], hi: Iterable[float]) -> bool:
    return all(b[0] <= l and h <= b[1] for b, l, h in zip(bounds, lo, hi))


def simulate_scan(phantom: Phantom, calib: ScanCalibration, scan_shape: Sequence[int],
                  detector_oversample: int = DEFAULT_DETECTOR_OVERSAMPLE,
                  upscale: int = DEFAULT_UPSCALE, workers: Optional[int] = None) -> Tuple[DataCube4D, np.ndarray]:
    """
    Simulate a clean (infinite-dose) 4D-STEM scan of a phantom.

    Args:
        phantom (Phantom): Specimen
        calib (ScanCalibration): Acquisition; the returned cube's center is (K//2, K//2)
        scan_shape (Sequence[int]): (H, W) probe positions at calib.step_size
        detector_oversample (int): Odd number of simulation pixels per detector pixel
        upscale (int): Ground-truth supersampling r
        workers (Optional[int]): Threads for scipy.fft

    Returns:
        Tuple[DataCube4D, np.ndarray]: Unit-flux cube (H, W, K, K) and ground truth (rH, rW)

    Raises:
        DataError: geometry mismatch between phantom and scan
    """
    h, w = (int(v) for v in scan_shape)
    if h < 1 or w < 1:
        raise DataError(f"geometry mismatch: scan shape {tuple(scan_shape)} must be positive")
    geometry = simulation_geometry(calib, detector_oversample)
    spec = ProbeSpec.from_calibration(calib, detector_oversample)
    dx, n, k, b = geometry.sampling, geometry.window, geometry.detector_size, geometry.oversample
    step = calib.step_size

    origin = -(n // 2 + 1) * dx
    size = (int(math.ceil((h - 1) * step / dx)) + n + 2, int(math.ceil((w - 1) * step / dx)) + n + 2)
    hi = (origin + (size[0] - 1) * dx, origin + (size[1] - 1) * dx)
    if not _covers(phantom.bounds, (origin, origin), hi):
        raise DataError(
            f"geometry mismatch: phantom spans {phantom.bounds} Å but the {h}x{w} scan at {step} Å "
            f"needs [{origin:.2f}, {hi[0]:.2f}] x [{origin:.2f}, {hi[1]:.2f}] Å"
        )

    phase = phantom.render(size, dx, (origin, origin))
    _check_weak_phase(phase, "object grid")
    transmission = np.exp(1j * phase)
    windows = sliding_window_view(transmission, (n, n))

    aperture = aperture_function(spec)
    norm = math.sqrt(float(np.sum(np.abs(aperture) ** 2))) / n
    kx, ky = _frequencies(spec)

    px = (np.arange(h) * step - origin) / dx
    py = (np.arange(w) * step - origin) / dx
    start_x, start_y = np.floor(px).astype(np.int64), np.floor(py).astype(np.int64)
    # probe centered at window pixel n//2 + fractional offset
    ramp_x = np.exp(-2j * math.pi * kx[None, :] * (n // 2 + px - start_x)[:, None] * dx)
    ramp_y = np.exp(-2j * math.pi * ky[None, :] * (n // 2 + py - start_y)[:, None] * dx)
    start_x -= n // 2
    start_y -= n // 2

    logger.info("Simulating %dx%d scan: %s phantom, window %d px at %.4f Å, defocus %.0f Å",
                h, w, phantom.kind.value, n, dx, calib.defocus)
    values = np.empty((h, w, k, k), dtype=np.float64)
    row_spectra = aperture[None, :, :] * ramp_y[:, None, :]
    for i in range(h):
        probes = fft.ifft2(row_spectra * ramp_x[i][None, :, None], axes=(-2, -1), workers=workers) / norm
        exit_waves = probes * windows[start_x[i], start_y]
        intensity = np.abs(fft.fft2(exit_waves, axes=(-2, -1), workers=workers)) ** 2
        intensity = np.roll(intensity, (geometry.zero_index, geometry.zero_index), axis=(-2, -1))
        binned = intensity.reshape(w, k, b, k, b).sum(axis=(2, 4))
        values[i] = binned / binned.sum(axis=(1, 2), keepdims=True)

    cube = DataCube4D(values=values, calib=calib.with_center((k // 2, k // 2)), layout=Layout.REAL_MAJOR)
    ground_truth = render_ground_truth(phantom, calib, (h, w), upscale)
    return cube, ground_truth
