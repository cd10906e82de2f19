"""Data model, file loaders, lifespan labeling and the Duffing benchmark generator."""

from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.integrate import solve_ivp

log = logging.getLogger(__name__)

CMAPSS_SETTINGS = ("setting_1", "setting_2", "setting_3")
CMAPSS_SENSORS = tuple(f"sensor_{i}" for i in range(1, 22))
CMAPSS_CHANNELS = CMAPSS_SETTINGS + CMAPSS_SENSORS
CMAPSS_COLUMNS = 2 + len(CMAPSS_CHANNELS)


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class IntegrationError(RuntimeError):
    """The ODE solver failed for a given dissipation value."""

    def __init__(self, nu: float, t: float, message: str):
        super().__init__(f"Duffing integration failed for nu={nu!r} at t={t:.6g}: {message}")
        self.nu = nu
        self.t = t


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Observation matrix of one unit, rows are time steps, columns are sensors."""

    unit_id: str
    values: np.ndarray
    sensor_names: tuple[str, ...]
    times: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DataError(f"unit {self.unit_id}: values must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1:
            raise DataError(f"unit {self.unit_id}: series is empty")
        names = tuple(str(s) for s in self.sensor_names)
        if len(names) != values.shape[1]:
            raise DataError(
                f"unit {self.unit_id}: {len(names)} sensor names for {values.shape[1]} columns"
            )
        if not np.all(np.isfinite(values)):
            raise DataError(f"unit {self.unit_id}: non-finite values")
        object.__setattr__(self, "unit_id", str(self.unit_id))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "sensor_names", names)
        if self.times is not None:
            times = np.array(self.times, dtype=float)
            if times.shape != (values.shape[0],):
                raise DataError(f"unit {self.unit_id}: times do not match row count")
            object.__setattr__(self, "times", _frozen(times))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def head(self, n: int) -> "TimeSeries":
        times = None if self.times is None else self.times[:n]
        return TimeSeries(self.unit_id, self.values[:n], self.sensor_names, times)

    def select(self, channels: Sequence[int]) -> "TimeSeries":
        channels = list(channels)
        return TimeSeries(
            self.unit_id,
            self.values[:, channels],
            tuple(self.sensor_names[c] for c in channels),
            self.times,
        )


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """A fleet of units sharing one sensor set, with binary outcome labels.

    Label 0 is healthy / long-lived, 1 is faulty / short-lived. ``metadata``
    may carry ``lifespans`` (aligned with ``series``), ``source`` and ``seed``.
    """

    series: tuple[TimeSeries, ...]
    labels: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        series = tuple(self.series)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(series) != len(labels):
            raise DataError(f"{len(series)} series but {len(labels)} labels")
        if not np.all((labels == 0) | (labels == 1)):
            raise DataError("labels must be 0 or 1")
        if series:
            names = series[0].sensor_names
            for s in series[1:]:
                if s.sensor_names != names:
                    raise DataError(f"unit {s.unit_id}: sensor set differs from unit {series[0].unit_id}")
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "metadata", dict(self.metadata))

    def __len__(self) -> int:
        return len(self.series)

    @property
    def sensor_names(self) -> tuple[str, ...]:
        return self.series[0].sensor_names if self.series else ()

    @property
    def n_channels(self) -> int:
        return len(self.sensor_names)

    @property
    def unit_ids(self) -> list[str]:
        return [s.unit_id for s in self.series]

    @property
    def lifespans(self) -> np.ndarray | None:
        spans = self.metadata.get("lifespans")
        return None if spans is None else np.asarray(spans)

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        indices = [int(i) for i in indices]
        meta = dict(self.metadata)
        if "lifespans" in meta:
            meta["lifespans"] = [meta["lifespans"][i] for i in indices]
        return LabeledDataset(tuple(self.series[i] for i in indices), self.labels[indices], meta)

    def with_labels(self, labels: Sequence[int]) -> "LabeledDataset":
        return LabeledDataset(self.series, np.asarray(labels), self.metadata)

    def with_series(self, series: Sequence[TimeSeries]) -> "LabeledDataset":
        return LabeledDataset(tuple(series), self.labels, self.metadata)

    def select_channels(self, channels: Sequence[int]) -> "LabeledDataset":
        return self.with_series([s.select(channels) for s in self.series])

    def fingerprint(self) -> str:
        """Stable content hash over sensor names, values and labels."""
        h = hashlib.sha256()
        h.update("\x1f".join(self.sensor_names).encode())
        for s, y in zip(self.series, self.labels):
            h.update(s.unit_id.encode())
            h.update(np.ascontiguousarray(s.values, dtype="<f8").tobytes())
            h.update(bytes([int(y)]))
        return h.hexdigest()[:16]


def constant_channels(dataset: LabeledDataset) -> list[int]:
    """Indices of channels whose variance is exactly zero across all units."""
    stacked = np.vstack([s.values for s in dataset.series])
    return [int(j) for j in np.flatnonzero(stacked.max(axis=0) == stacked.min(axis=0))]


def drop_constant_channels(dataset: LabeledDataset) -> LabeledDataset:
    drop = set(constant_channels(dataset))
    keep = [j for j in range(dataset.n_channels) if j not in drop]
    if not keep:
        raise DataError("every channel is constant")
    return dataset if not drop else dataset.select_channels(keep)


# --------------------------------------------------------------------------
# C-MAPSS


def load_cmapss(path: str | Path) -> LabeledDataset:
    """Read a C-MAPSS ``train_FD00x.txt`` style file.

    Each row is ``unit cycle setting*3 sensor*21``, whitespace separated.
    Labels are all zero; call :func:`label_by_median_lifespan` afterwards.
    """
    path = Path(path)
    rows: dict[int, list[list[float]]] = {}
    cycles: dict[int, list[int]] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != CMAPSS_COLUMNS:
                raise DataError(
                    f"{path}:{lineno}: expected {CMAPSS_COLUMNS} columns, found {len(parts)}"
                )
            try:
                nums = [float(p) for p in parts]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            if not all(math.isfinite(v) for v in nums):
                raise DataError(f"{path}:{lineno}: non-finite value")
            unit, cycle = int(nums[0]), int(nums[1])
            rows.setdefault(unit, []).append(nums[2:])
            cycles.setdefault(unit, []).append(cycle)
    if not rows:
        raise DataError(f"{path}: empty file")
    series = []
    spans = []
    for unit in sorted(rows):
        cyc = cycles[unit]
        if any(b <= a for a, b in zip(cyc, cyc[1:])):
            raise DataError(f"{path}: unit {unit} cycles are not increasing")
        series.append(TimeSeries(str(unit), np.array(rows[unit]), CMAPSS_CHANNELS))
        spans.append(max(cyc))
    meta = {"source": path.name, "lifespans": spans}
    return LabeledDataset(tuple(series), np.zeros(len(series), dtype=int), meta)


def write_cmapss(dataset: LabeledDataset, path: str | Path) -> None:
    """Write ``dataset`` back in the C-MAPSS text layout (cycles numbered from 1)."""
    with Path(path).open("w") as fh:
        for s in dataset.series:
            for t, row in enumerate(s.values, start=1):
                fields = [s.unit_id, str(t)] + [repr(float(v)) for v in row]
                fh.write(" ".join(fields) + "\n")


def label_by_median_lifespan(dataset: LabeledDataset) -> LabeledDataset:
    """Label 1 (short-lived) iff lifespan < median lifespan; ties go to 0."""
    spans = dataset.lifespans
    if spans is None:
        raise DataError("dataset has no lifespans in metadata")
    if len(spans) < 2:
        raise DataError("need at least two units to split by median lifespan")
    median = float(np.median(spans))
    labels = (spans < median).astype(int)
    ratio = labels.mean()
    if not 0.4 <= ratio <= 0.6:
        log.warning("median-lifespan split is unbalanced: %.3f of units labeled short-lived", ratio)
    meta = dict(dataset.metadata)
    meta["median_lifespan"] = median
    return LabeledDataset(dataset.series, labels, meta)


def truncate_cycles(dataset: LabeledDataset, n: int) -> LabeledDataset:
    """Keep the first ``min(T_i, n)`` rows of every unit."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return dataset.with_series([s.head(n) for s in dataset.series])


# --------------------------------------------------------------------------
# Duffing oscillator


@dataclass(frozen=True)
class DuffingConfig:
    """Forced Duffing oscillator ``x'' + nu x' + stiffness x + cubic x^3 = A cos(w t)``."""

    amplitude: float = 22.0
    forcing_frequency: float = 5.0
    stiffness: float = 1.0
    cubic_coeff: float = 1.0
    nu_mean_healthy: float = 0.290
    nu_mean_faulty: float = 0.325
    nu_std: float = 0.00625
    initial_state: tuple[float, float] = (0.0, 0.1)
    samples_per_class: int = 500
    snr_db: float | None = None
    integration_steps_per_period: int = 200
    output_length: int = 200
    seed: int = 0
    total_periods: int = 20
    transient_periods: int = 10
    rtol: float = 1e-8
    atol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "initial_state", tuple(float(v) for v in self.initial_state))
        physical = [
            self.amplitude, self.forcing_frequency, self.stiffness, self.cubic_coeff,
            self.nu_mean_healthy, self.nu_mean_faulty, self.nu_std, *self.initial_state,
        ]
        if not all(math.isfinite(v) for v in physical):
            raise ValueError("Duffing parameters must be finite")
        if self.forcing_frequency <= 0:
            raise ValueError("forcing_frequency must be positive")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.output_length < 2:
            raise ValueError("output_length must be >= 2")
        if not 0 <= self.transient_periods < self.total_periods:
            raise ValueError("transient_periods must be in [0, total_periods)")

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.forcing_frequency

    @property
    def dt(self) -> float:
        return self.period / self.integration_steps_per_period

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DuffingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown Duffing parameters: {sorted(unknown)}")
        d = dict(d)
        if "initial_state" in d:
            d["initial_state"] = tuple(d["initial_state"])
        return cls(**d)


def _physics_key(config: DuffingConfig) -> DuffingConfig:
    return dataclasses.replace(config, snr_db=None, seed=0, samples_per_class=1)


@functools.lru_cache(maxsize=8192)
def _integrate(nu: float, config: DuffingConfig) -> tuple[np.ndarray, np.ndarray]:
    A, w = config.amplitude, config.forcing_frequency
    k, a = config.stiffness, config.cubic_coeff

    def rhs(t, s):
        x, v = s
        return [v, A * math.cos(w * t) - nu * v - k * x - a * x * x * x]

    steps = config.total_periods * config.integration_steps_per_period
    t_grid = np.arange(steps + 1) * config.dt
    sol = solve_ivp(
        rhs, (0.0, t_grid[-1]), list(config.initial_state), method="RK45",
        t_eval=t_grid, rtol=config.rtol, atol=config.atol,
    )
    if sol.status != 0 or sol.y.shape[1] != len(t_grid):
        t_fail = float(sol.t[-1]) if len(sol.t) else 0.0
        raise IntegrationError(nu, t_fail, sol.message)

    start = config.transient_periods * config.integration_steps_per_period
    interior_t = t_grid[start:]
    interior = sol.y[:, start:].T
    stride = max(1, len(interior_t) // config.output_length)
    times = interior_t[::stride][: config.output_length]
    states = interior[::stride][: config.output_length]
    return _frozen(times.copy()), _frozen(np.ascontiguousarray(states))


def simulate_duffing(nu: float, config: DuffingConfig, unit_id: str = "duffing") -> TimeSeries:
    """Integrate the oscillator for dissipation ``nu`` and down-sample to position/velocity.

    The first ``transient_periods`` forcing periods are discarded; the rest is
    sampled every ``floor(steps / output_length)`` solver grid points.
    """
    if not math.isfinite(nu):
        raise ValueError(f"nu must be finite, got {nu!r}")
    times, states = _integrate(float(nu), _physics_key(config))
    return TimeSeries(unit_id, states, ("position", "velocity"), times)


def add_noise_snr(series: TimeSeries, snr_db: float, seed) -> TimeSeries:
    """Add white Gaussian noise per channel at the given signal-to-noise ratio.

    Signal power is the mean square of each channel over the whole series.
    ``snr_db = inf`` returns the series unchanged.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return series
    rng = np.random.default_rng(seed)
    power = np.mean(series.values**2, axis=0)
    std = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    noisy = series.values + rng.standard_normal(series.values.shape) * std
    return TimeSeries(series.unit_id, noisy, series.sensor_names, series.times)


def draw_nus(config: DuffingConfig) -> tuple[np.ndarray, np.ndarray]:
    """Dissipation values (healthy, faulty) for ``config.seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    n = config.samples_per_class
    healthy = rng.normal(config.nu_mean_healthy, config.nu_std, n)
    faulty = rng.normal(config.nu_mean_faulty, config.nu_std, n)
    return healthy, faulty


def generate_duffing_dataset(config: DuffingConfig) -> LabeledDataset:
    """Simulate ``samples_per_class`` healthy and faulty oscillators.

    Noise seeds depend on the config seed and unit index only, so datasets
    generated at different SNR levels share the same dissipation draws.
    """
    healthy, faulty = draw_nus(config)
    nus = np.concatenate([healthy, faulty])
    labels = np.repeat([0, 1], config.samples_per_class)
    series = []
    for i, nu in enumerate(nus):
        s = simulate_duffing(float(nu), config, unit_id=f"duffing-{i:04d}")
        if config.snr_db is not None:
            s = add_noise_snr(s, config.snr_db, np.random.SeedSequence([config.seed, 1, i]))
        series.append(s)
    meta = {
        "source": "duffing",
        "seed": config.seed,
        "snr_db": config.snr_db,
        "nu": nus.tolist(),
        "duffing_config": config.to_dict(),
    }
    return LabeledDataset(tuple(series), labels, meta)


# --------------------------------------------------------------------------
# manifest + CSV layout


def load_csv_dataset(manifest: str | Path) -> LabeledDataset:
    """Load a JSON manifest listing one CSV file per unit.

    Manifest fields: ``name``, ``units: [{id, csv_path, label, lifespan?}]``
    and optional ``seed``. CSV paths are relative to the manifest.
    """
    manifest = Path(manifest)
    spec = json.loads(manifest.read_text())
    units = spec.get("units")
    if not units:
        raise DataError(f"{manifest}: no units listed")
    base = manifest.parent
    series, labels, spans = [], [], []
    header0 = None
    for unit in units:
        uid = str(unit.get("id"))
        if "label" not in unit or unit["label"] is None:
            raise DataError(f"{manifest}: unit {uid} has no label")
        csv_path = base / unit["csv_path"]
        with csv_path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataError(f"unit {uid}: {csv_path} is empty") from None
            body = [row for row in reader if row]
        if header0 is None:
            header0 = header
        elif header != header0:
            raise DataError(f"unit {uid}: columns {header} differ from {header0}")
        if not body:
            raise DataError(f"unit {uid}: {csv_path} has no data rows")
        for r, row in enumerate(body, start=2):
            if len(row) != len(header):
                raise DataError(f"unit {uid}: {csv_path} row {r} has {len(row)} fields, header has {len(header)}")
        try:
            values = np.array([[float(v) for v in row] for row in body])
        except ValueError as exc:
            raise DataError(f"unit {uid}: non-numeric value ({exc})") from None
        if values.shape[1] != len(header):
            raise DataError(f"unit {uid}: rows do not match header width")
        series.append(TimeSeries(uid, values, tuple(header)))
        labels.append(int(unit["label"]))
        spans.append(unit.get("lifespan"))
    meta: dict[str, Any] = {"source": spec.get("name", manifest.stem)}
    if all(s is not None for s in spans):
        meta["lifespans"] = spans
    if spec.get("seed") is not None:
        meta["seed"] = spec["seed"]
    return LabeledDataset(tuple(series), np.array(labels), meta)


def save_csv_dataset(dataset: LabeledDataset, directory: str | Path, name: str | None = None) -> Path:
    """Write ``manifest.json`` plus ``units/<id>.csv``; return the manifest path."""
    directory = Path(directory)
    (directory / "units").mkdir(parents=True, exist_ok=True)
    spans = dataset.lifespans
    units = []
    for i, (s, y) in enumerate(zip(dataset.series, dataset.labels)):
        rel = f"units/{s.unit_id}.csv"
        with (directory / rel).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(s.sensor_names)
            w.writerows([[repr(float(v)) for v in row] for row in s.values])
        entry = {"id": s.unit_id, "csv_path": rel, "label": int(y)}
        if spans is not None:
            entry["lifespan"] = int(spans[i])
        units.append(entry)
    doc = {"name": name or dataset.metadata.get("source", directory.name), "units": units}
    if dataset.metadata.get("seed") is not None:
        doc["seed"] = dataset.metadata["seed"]
    path = directory / "manifest.json"
    path.write_text(json.dumps(doc, indent=2))
    return path
