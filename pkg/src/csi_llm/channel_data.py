"""Synthetic time-correlated MIMO-OFDM CSI trajectories, file I/O, splits, normalization.

The generator is a desk-scale surrogate for a geometry-based channel model:
each sample is a sum of `n_paths` plane-wave components. Per path, a random
arrival angle theta gives a Doppler shift f_d*cos(theta) (sum-of-sinusoids
Jakes model, so the ensemble lag-k autocorrelation of every scalar series is
J0(2*pi*f_d*k*tti)), a random delay in [0, 1us] gives a linear phase ramp
across PRBs (frequency selectivity), and i.i.d. complex gains per (tx, rx)
antenna pair decorrelate the spatial dimensions. Generation is pure per
(seed, sample_id), so datasets are reproducible bit-for-bit and trivially
parallelizable across samples.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataFormatError, DegenerateDataError

LIGHT_SPEED_M_S = 2.998e8
PRB_SPACING_HZ = 180e3  # 12 subcarriers at 15 kHz SCS
MAX_PATH_DELAY_S = 1e-6

_MAGIC = b"CSILLMDS"
_VERSION = 1
_HEADER_BYTES = 64

NORM_MODES = ("global_std", "per_sample_std", "none")


def doppler_hz(speed_kmh: float, carrier_hz: float) -> float:
    """Maximum Doppler shift v*f_c/c for a speed in km/h."""
    return (speed_kmh / 3.6) * carrier_hz / LIGHT_SPEED_M_S


@dataclass
class ScenarioConfig:
    """Channel scenario: speed(s), geometry, and sampling parameters."""

    speed_kmh: float | list[float] = 30.0
    carrier_hz: float = 2e9
    tti_s: float = 5e-3
    n_steps: int = 20
    n_tx: int = 32
    n_rx: int = 4
    n_prb: int = 8
    n_paths: int = 12
    seed: int = 0

    def __post_init__(self) -> None:
        for speed in self.speeds():
            if not (speed > 0 and np.isfinite(speed)):
                raise ConfigError(f"scenario.speed_kmh must be positive, got {speed}")
        if not (self.carrier_hz > 0 and np.isfinite(self.carrier_hz)):
            raise ConfigError(f"scenario.carrier_hz must be positive, got {self.carrier_hz}")
        if not (self.tti_s > 0 and np.isfinite(self.tti_s)):
            raise ConfigError(f"scenario.tti_s must be positive, got {self.tti_s}")
        if self.n_steps < 2:
            raise ConfigError(f"scenario.n_steps must be >= 2, got {self.n_steps}")
        for name in ("n_tx", "n_rx", "n_prb", "n_paths"):
            if getattr(self, name) < 1:
                raise ConfigError(f"scenario.{name} must be >= 1, got {getattr(self, name)}")

    def speeds(self) -> list[float]:
        s = self.speed_kmh
        return [float(v) for v in s] if isinstance(s, (list, tuple)) else [float(s)]

    def is_mixture(self) -> bool:
        return isinstance(self.speed_kmh, (list, tuple)) and len(self.speed_kmh) > 1

    @property
    def step_shape(self) -> tuple[int, int, int, int]:
        return (2, self.n_tx, self.n_rx, self.n_prb)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return (self.n_steps, *self.step_shape)

    @property
    def feature_dim(self) -> int:
        return 2 * self.n_tx * self.n_rx * self.n_prb

    def tag(self) -> str:
        if self.is_mixture():
            return "mix"
        return f"{self.speeds()[0]:g}kmh"


@dataclass
class ChannelSample:
    """One UE trajectory: csi[step, re/im, tx, rx, prb] as float32 planes."""

    csi: np.ndarray
    speed_kmh: float
    sample_id: int


@dataclass
class NormStats:
    mode: str
    scale: float | np.ndarray = 1.0


@dataclass
class ChannelDataset:
    samples: list[ChannelSample]
    scenario: ScenarioConfig
    norm_stats: NormStats | None = None
    split_tag: str = "all"

    def __len__(self) -> int:
        return len(self.samples)

    def stack(self) -> np.ndarray:
        """All trajectories as one [n_samples, n_steps, 2, tx, rx, prb] array."""
        return np.stack([s.csi for s in self.samples])


def _sample_csi(scenario: ScenarioConfig, seed: int, sample_id: int) -> tuple[np.ndarray, float]:
    """Generate one trajectory; pure in (seed, sample_id)."""
    rng = np.random.default_rng([seed % 2**32, sample_id])
    speeds = scenario.speeds()
    speed = float(rng.choice(speeds)) if len(speeds) > 1 else speeds[0]
    fd = doppler_hz(speed, scenario.carrier_hz)

    n_paths = scenario.n_paths
    theta = rng.uniform(0.0, 2.0 * np.pi, n_paths)
    delay = rng.uniform(0.0, MAX_PATH_DELAY_S, n_paths)
    phi = rng.uniform(0.0, 2.0 * np.pi, n_paths)
    # CN(0, 1/n_paths) gains per (path, tx, rx): unit mean power per entry.
    gains = (
        rng.standard_normal((n_paths, scenario.n_tx, scenario.n_rx))
        + 1j * rng.standard_normal((n_paths, scenario.n_tx, scenario.n_rx))
    ) / np.sqrt(2.0 * n_paths)

    t = np.arange(scenario.n_steps) * scenario.tti_s
    time_phasor = np.exp(1j * (2.0 * np.pi * fd * np.cos(theta)[:, None] * t[None, :] + phi[:, None]))
    f_prb = np.arange(scenario.n_prb) * PRB_SPACING_HZ
    prb_phasor = np.exp(-1j * 2.0 * np.pi * f_prb[None, :] * delay[:, None])

    # h[step, tx, rx, prb] = sum_k gains[k,tx,rx] * time[k,step] * prb[k,prb]
    h = np.einsum("ptr,ps,pb->strb", gains, time_phasor, prb_phasor)
    csi = np.stack([h.real, h.imag], axis=1).astype(np.float32)  # [step, 2, tx, rx, prb]
    return csi, speed


def generate_synthetic_dataset(
    scenario: ScenarioConfig, n_samples: int, workers: int = 1
) -> ChannelDataset:
    """Draw n_samples independent trajectories. Deterministic for a fixed seed."""
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")

    def make(i: int) -> ChannelSample:
        csi, speed = _sample_csi(scenario, scenario.seed, i)
        return ChannelSample(csi=csi, speed_kmh=speed, sample_id=i)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(make, range(n_samples)))
    else:
        samples = [make(i) for i in range(n_samples)]
    return ChannelDataset(samples=samples, scenario=scenario, split_tag="all")


def save_dataset(ds: ChannelDataset, path) -> None:
    """Write little-endian float32, row-major (sample, step, re/im, tx, rx, prb).

    64-byte header: magic, version, six uint32 dimension fields, zero padding.
    """
    sc = ds.scenario
    dims = (len(ds), sc.n_steps, 2, sc.n_tx, sc.n_rx, sc.n_prb)
    header = _MAGIC + struct.pack("<I", _VERSION) + struct.pack("<6I", *dims)
    header += b"\x00" * (_HEADER_BYTES - len(header))
    payload = np.ascontiguousarray(ds.stack(), dtype="<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def load_dataset(path, scenario: ScenarioConfig) -> ChannelDataset:
    """Read a dataset file; samples come back in file order, unnormalized."""
    with open(path, "rb") as f:
        header = f.read(_HEADER_BYTES)
        if len(header) < _HEADER_BYTES or header[:8] != _MAGIC:
            raise DataFormatError(f"{path}: not a CSI dataset file (bad magic/header)")
        (version,) = struct.unpack_from("<I", header, 8)
        if version != _VERSION:
            raise DataFormatError(f"{path}: unsupported format version {version}")
        dims = struct.unpack_from("<6I", header, 12)
        n_samples = dims[0]
        expected_dims = (scenario.n_steps, 2, scenario.n_tx, scenario.n_rx, scenario.n_prb)
        if dims[1:] != expected_dims:
            raise DataFormatError(
                f"{path}: per-sample shape {dims[1:]} does not match scenario {expected_dims}"
            )
        raw = f.read()

    per_sample = int(np.prod(expected_dims))
    expected_elems = n_samples * per_sample
    actual_elems = len(raw) // 4
    if len(raw) % 4 != 0 or actual_elems != expected_elems:
        raise DataFormatError(
            f"{path}: expected {expected_elems} float32 elements, found {actual_elems}"
        )
    flat = np.frombuffer(raw, dtype="<f4").reshape(n_samples, *expected_dims)
    if not np.isfinite(flat).all():
        raise DataFormatError(f"{path}: dataset contains non-finite entries")
    speed = scenario.speeds()[0] if not scenario.is_mixture() else float("nan")
    samples = [
        ChannelSample(csi=np.array(flat[i]), speed_kmh=speed, sample_id=i)
        for i in range(n_samples)
    ]
    return ChannelDataset(samples=samples, scenario=scenario, split_tag="all")


def split_dataset(
    ds: ChannelDataset, counts: tuple[int, int, int], seed: int | None = None
) -> tuple[ChannelDataset, ChannelDataset, ChannelDataset]:
    """Seeded shuffle, then contiguous partition into train/val/test."""
    n_train, n_val, n_test = counts
    if min(counts) < 0 or n_train + n_val + n_test != len(ds):
        raise ConfigError(
            f"split counts {counts} must be nonnegative and sum to {len(ds)}"
        )
    rng = np.random.default_rng(ds.scenario.seed if seed is None else seed)
    order = rng.permutation(len(ds))
    parts = []
    start = 0
    for count, tag in ((n_train, "train"), (n_val, "val"), (n_test, "test")):
        idx = order[start : start + count]
        parts.append(
            ChannelDataset(
                samples=[ds.samples[i] for i in idx],
                scenario=ds.scenario,
                norm_stats=ds.norm_stats,
                split_tag=tag,
            )
        )
        start += count
    return tuple(parts)


def default_split_counts(n: int) -> tuple[int, int, int]:
    """Standard 0.84/0.08/0.08 proportions (17640/1680/1680 at 21000 samples)."""
    n_val = round(n * 0.08)
    n_test = round(n * 0.08)
    return (n - n_val - n_test, n_val, n_test)


def _scaled(ds: ChannelDataset, scales, stats: NormStats) -> ChannelDataset:
    samples = [
        replace(s, csi=(s.csi / np.float32(scale)).astype(np.float32))
        for s, scale in zip(ds.samples, scales)
    ]
    return ChannelDataset(samples, ds.scenario, norm_stats=stats, split_tag=ds.split_tag)


def normalize(ds: ChannelDataset, mode: str) -> tuple[ChannelDataset, NormStats]:
    """Fit normalization on ds and apply it. Fit global_std on the train split only,
    then push the returned stats through apply_normalization for val/test."""
    if mode not in NORM_MODES:
        raise ConfigError(f"normalization mode must be one of {NORM_MODES}, got {mode!r}")
    if mode == "none":
        stats = NormStats(mode="none", scale=1.0)
        return _scaled(ds, [1.0] * len(ds), stats), stats
    if mode == "global_std":
        scale = float(np.std(ds.stack()))
        if scale <= 0.0:
            raise DegenerateDataError("global_std normalization: dataset std is zero")
        stats = NormStats(mode="global_std", scale=scale)
        return _scaled(ds, [scale] * len(ds), stats), stats
    scales = np.array([float(np.std(s.csi)) for s in ds.samples])
    if np.any(scales <= 0.0):
        raise DegenerateDataError("per_sample_std normalization: a sample has zero std")
    stats = NormStats(mode="per_sample_std", scale=scales)
    return _scaled(ds, scales, stats), stats


def apply_normalization(ds: ChannelDataset, stats: NormStats) -> ChannelDataset:
    """Apply fitted stats to another split (per_sample_std self-normalizes)."""
    if stats.mode == "per_sample_std":
        normalized, _ = normalize(ds, "per_sample_std")
        return normalized
    scale = float(stats.scale)
    return _scaled(ds, [scale] * len(ds), stats)


def denormalize(ds: ChannelDataset, stats: NormStats) -> ChannelDataset:
    if stats.mode == "per_sample_std":
        scales = np.asarray(stats.scale)
        if len(scales) != len(ds):
            raise ConfigError("per_sample_std stats do not match dataset length")
        inv = 1.0 / scales
    else:
        inv = [1.0 / float(stats.scale)] * len(ds)
    out = _scaled(ds, inv, NormStats(mode="none", scale=1.0))
    out.norm_stats = None
    return out
