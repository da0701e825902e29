"""Mean-field (Hillert) grain-growth generator.

Each grain is a circle of equivalent radius ``r`` (µm) that evolves as

    dr/dt = (M / 2) * (1 / R_cr - 1 / r)

with ``M`` the reduced mobility and ``R_cr`` the arithmetic mean radius,
which keeps the total grain area stationary. Grains shrinking below
``min_radius`` are removed.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

GENERATOR_VERSION = "ggforecast-hillert-1"

DOMAIN_SIDES_MM = (2, 3, 4, 5)
SIGMA_RANGE = (2, 32)
MAX_RELATIVE_CHANGE = 0.10
UM2_PER_MM2 = 1.0e6


class SimulationError(RuntimeError):
    pass


class ExtinctionError(SimulationError):
    def __init__(self, time_s: float, config: "SimConfig | None" = None):
        self.time_s = time_s
        self.config = config
        msg = f"population extinct at t={time_s:.2f} s"
        if config is not None:
            msg += f" (domain {config.domain_side} mm, sigma {config.sigma} um, seed {config.rng_seed})"
        super().__init__(msg)


@dataclass(frozen=True)
class SimConfig:
    domain_side: float = 2
    mean_radius: float = 20.0
    sigma: float = 2
    reduced_mobility: float = 1.0e-6
    dt: float = 0.05
    duration: float = 3600.0
    record_interval: float = 60.0
    min_radius: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.domain_side <= 0:
            raise ValueError(f"domain_side must be positive, got {self.domain_side}")
        if self.domain_side not in DOMAIN_SIDES_MM:
            raise ValueError(f"domain_side must be one of {DOMAIN_SIDES_MM} mm, got {self.domain_side}")
        if not SIGMA_RANGE[0] <= self.sigma <= SIGMA_RANGE[1]:
            raise ValueError(f"sigma must lie in [{SIGMA_RANGE[0]}, {SIGMA_RANGE[1]}] um, got {self.sigma}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.reduced_mobility <= 0:
            raise ValueError("reduced_mobility must be positive")
        if self.min_radius <= 0:
            raise ValueError("min_radius must be positive")
        ratio = self.record_interval / self.dt
        if self.record_interval <= 0 or abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("record_interval must be a positive integer multiple of dt")
        if self.duration <= 0 or abs(self.duration / self.record_interval - round(self.duration / self.record_interval)) > 1e-9:
            raise ValueError("duration must be a positive multiple of record_interval")

    @property
    def domain_area_um2(self) -> float:
        return (self.domain_side * 1000.0) ** 2

    @property
    def mobility_um2_s(self) -> float:
        return self.reduced_mobility * UM2_PER_MM2

    @property
    def steps_per_record(self) -> int:
        return int(round(self.record_interval / self.dt))

    @property
    def n_records(self) -> int:
        return int(round(self.duration / self.record_interval))


@dataclass
class GrainPopulation:
    radii: np.ndarray
    domain_area: float
    sim_time: float = 0.0
    min_radius: float = 0.5

    @property
    def n_grains(self) -> int:
        return int(self.radii.size)

    @property
    def total_area(self) -> float:
        """Total grain area in µm²."""
        return float(math.pi * np.dot(self.radii, self.radii))

    @property
    def mean_radius(self) -> float:
        return float(self.radii.mean())


@dataclass
class SequenceRecord:
    config: SimConfig
    snapshots: list[tuple[int, np.ndarray]]
    grain_counts: list[int] = field(default_factory=list)
    # total area (µm²) and cumulative removed area at each snapshot
    areas: list[float] = field(default_factory=list)
    removed_areas: list[float] = field(default_factory=list)

    @property
    def times(self) -> list[int]:
        return [t for t, _ in self.snapshots]

    def mean_radii(self) -> np.ndarray:
        return np.array([r.mean() for _, r in self.snapshots])


def init_population(config: SimConfig) -> GrainPopulation:
    """Draw N(mean, sigma²) radii until their disc area first covers the domain.

    Draws below ``min_radius`` are rejected and redrawn. Fully determined by
    ``config.rng_seed``.
    """
    rng = np.random.default_rng(config.rng_seed)
    target = config.domain_area_um2
    expected = math.pi * (config.mean_radius**2 + config.sigma**2)
    chunk = int(target / expected * 1.1) + 16
    parts = []
    covered = 0.0
    while True:
        r = rng.normal(config.mean_radius, config.sigma, chunk)
        r = r[r >= config.min_radius]
        cum = covered + np.cumsum(math.pi * r * r)
        k = int(np.searchsorted(cum, target))
        if k < r.size:
            parts.append(r[: k + 1])
            break
        parts.append(r)
        covered = float(cum[-1]) if r.size else covered
        chunk = max(64, chunk // 4)
    return GrainPopulation(
        radii=np.concatenate(parts),
        domain_area=config.domain_side**2,
        sim_time=0.0,
        min_radius=config.min_radius,
    )


def critical_radius(pop: GrainPopulation | np.ndarray) -> float:
    radii = pop.radii if isinstance(pop, GrainPopulation) else np.asarray(pop, dtype=float)
    if radii.size == 0:
        raise SimulationError("empty population")
    return float(radii.mean())


def _advance(radii: np.ndarray, dt: float, mobility_um2_s: float) -> np.ndarray:
    r_cr = radii.mean()
    dr = (0.5 * mobility_um2_s * dt) * (1.0 / r_cr - 1.0 / radii)
    if np.max(np.abs(dr) / radii) > MAX_RELATIVE_CHANGE:
        raise SimulationError("dt too coarse")
    return radii + dr


def step(
    pop: GrainPopulation,
    dt: float,
    reduced_mobility: float,
    min_radius: float | None = None,
) -> GrainPopulation:
    """One explicit Euler step; ``reduced_mobility`` is in mm²/s."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if pop.n_grains == 0:
        raise SimulationError("empty population")
    threshold = pop.min_radius if min_radius is None else min_radius
    radii = _advance(pop.radii, dt, reduced_mobility * UM2_PER_MM2)
    radii = radii[radii >= threshold]
    return GrainPopulation(radii, pop.domain_area, pop.sim_time + dt, threshold)


def run_sequence(config: SimConfig) -> SequenceRecord:
    pop = init_population(config)
    radii = pop.radii
    mobility = config.mobility_um2_s
    dt = config.dt
    rmin = config.min_radius
    removed = 0.0
    record = SequenceRecord(config=config, snapshots=[])

    def observe(minute: int) -> None:
        record.snapshots.append((minute, radii.copy()))
        record.grain_counts.append(int(radii.size))
        record.areas.append(float(math.pi * np.dot(radii, radii)))
        record.removed_areas.append(removed)

    observe(0)
    minutes_per_record = config.record_interval / 60.0
    for k in range(1, config.n_records + 1):
        for s in range(config.steps_per_record):
            if radii.size == 0:
                t = ((k - 1) * config.steps_per_record + s) * dt
                raise ExtinctionError(t, config)
            radii = _advance(radii, dt, mobility)
            if radii.min() < rmin:
                keep = radii >= rmin
                gone = radii[~keep]
                removed += float(math.pi * np.dot(gone, gone))
                radii = radii[keep]
        if radii.size == 0:
            raise ExtinctionError(k * config.record_interval, config)
        observe(int(round(k * minutes_per_record)))
    return record


def default_grid(
    master_seed: int = 0,
    duration: float = 3600.0,
    sides=DOMAIN_SIDES_MM,
    sigmas=tuple(range(2, 32)),
    **overrides,
) -> list[SimConfig]:
    """4 domain sizes × sigma 2..31 = 120 configs, seeds spawned from ``master_seed``."""
    pairs = [(side, sigma) for side in sides for sigma in sigmas]
    children = np.random.SeedSequence(master_seed).spawn(len(pairs))
    return [
        SimConfig(
            domain_side=side,
            sigma=sigma,
            duration=duration,
            rng_seed=int(child.generate_state(1, dtype=np.uint64)[0]),
            **overrides,
        )
        for (side, sigma), child in zip(pairs, children)
    ]


def _run_tagged(config: SimConfig) -> SequenceRecord:
    try:
        return run_sequence(config)
    except ExtinctionError as exc:
        raise ExtinctionError(exc.time_s, config) from None


def generate_dataset(grid: list[SimConfig], workers: int = 1) -> list[SequenceRecord]:
    if not grid:
        raise ValueError("empty generator grid")
    if workers <= 1 or len(grid) == 1:
        return [_run_tagged(cfg) for cfg in grid]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_tagged, grid))


# -- persistence -----------------------------------------------------------

def sequence_id(index: int) -> str:
    return f"seq_{index:03d}"


def write_sequence(record: SequenceRecord, path: str | Path) -> None:
    """Write ``t_min;r1,r2,...`` lines plus a ``.json`` sidecar with the config."""
    path = Path(path)
    lines = []
    for t, radii in record.snapshots:
        lines.append(f"{t};" + ",".join(f"{r:.6g}" for r in radii))
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "config": asdict(record.config),
        "grain_counts": record.grain_counts,
        "areas_um2": [float(f"{a:.12g}") for a in record.areas],
        "removed_areas_um2": [float(f"{a:.12g}") for a in record.removed_areas],
        "generator": GENERATOR_VERSION,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_sequence(path: str | Path) -> SequenceRecord:
    path = Path(path)
    snapshots = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        t, _, body = line.partition(";")
        radii = np.array([float(v) for v in body.split(",")]) if body else np.empty(0)
        snapshots.append((int(t), radii))
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        config = SimConfig(**meta["config"])
        areas = meta.get("areas_um2", [])
        removed = meta.get("removed_areas_um2", [])
    else:
        config, areas, removed = SimConfig(), [], []
    return SequenceRecord(
        config=config,
        snapshots=snapshots,
        grain_counts=[r.size for _, r in snapshots],
        areas=areas,
        removed_areas=removed,
    )


def write_dataset(records: list[SequenceRecord], out_dir: str | Path, master_seed: int) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, rec in enumerate(records):
        name = sequence_id(i) + ".txt"
        write_sequence(rec, out_dir / name)
        files.append(name)
    manifest = {
        "generator": GENERATOR_VERSION,
        "master_seed": master_seed,
        "sequences": files,
        "grid_layout": "full cross of domain sides x sigma values (assumed pairing)",
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_manifest(data_dir: str | Path) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    return json.loads(path.read_text())


def load_dataset(data_dir: str | Path) -> dict[str, SequenceRecord]:
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    return {Path(name).stem: read_sequence(data_dir / name) for name in manifest["sequences"]}


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return replace(config, rng_seed=seed)
