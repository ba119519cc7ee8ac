"""Synthetic trace generator with known ground truth.

Produces scheduler/telemetry file pairs in the ingest formats plus two
ground-truth tables (per-job targets, per-step power bands), so every
pipeline stage can be verified against declared truth at desk scale.

Power follows a per-job regime model: piecewise-constant levels (a per-job
center plus a per-regime offset) with Gaussian observation noise. The
compute/memory activity ratios track the power level ``activity_lead_steps``
ahead, which gives a windowed learner a real edge over naive last-value
baselines around regime transitions. Submission features can carry target
signal through configurable weights, so feature-importance and
baseline-comparison experiments have planted, checkable structure.

Everything is driven by one seeded PCG64 generator; identical config plus
seed reproduces byte-identical files.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .domain import (
    AggregateTargets,
    PowerBandScheme,
    SAMPLE_INTERVAL_S,
    aggregate_targets,
    band_of,
    DcgmSample,
)
from .errors import ConfigError
from .ingest import DCGM_COLUMNS, SLURM_COLUMNS

RNG_NAME = "numpy-PCG64"

#: Submission features that may carry planted target signal.
SIGNAL_FEATURES = ("time_limit", "job_name", "req_nodes", "user")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_users: int = 20
    n_jobs: int = 100
    user_zipf_alpha: float = 1.2
    n_job_classes: int = 4
    n_accounts: int = 5
    n_categories: int = 5
    node_pool: int = 64
    req_nodes_choices: tuple[int, ...] = (1, 2)
    gpus_per_node: int = 4
    time_limit_range: tuple[int, int] = (600, 14400)
    user_time_limit_spread: float = 0.6
    executables: tuple[str, ...] = ("vasp_std",)

    # regime model
    min_regimes: int = 3
    max_regimes: int = 10
    dwell_choices: tuple[int, ...] = (4, 5, 6, 7)  # steps of 10 s
    power_offsets: tuple[float, ...] = (-60.0, -20.0, 20.0, 60.0)
    power_center_range: tuple[float, float] = (180.0, 180.0)
    noise_sd: float = 5.0
    activity_noise_sd: float = 0.02
    activity_lead_steps: int = 1
    irregular_rate: float = 0.0

    # declared band scheme for the per-step truth
    truth_boundaries: tuple[float, float, float] = (140.0, 180.0, 220.0)

    # planted submission-feature signal (feature name -> weight)
    power_weights: Mapping[str, float] = field(default_factory=dict)
    gpu_util_weights: Mapping[str, float] = field(default_factory=dict)
    mem_util_weights: Mapping[str, float] = field(default_factory=dict)
    gpu_util_range: tuple[float, float] = (40.0, 99.0)
    mem_util_range: tuple[float, float] = (5.0, 60.0)
    gpu_util_noise_sd: float = 1.0
    mem_noise_mb: float = 100.0
    fb_total_mb: float = 40960.0

    def __post_init__(self):
        if self.n_users < 1 or self.n_jobs < 1 or self.node_pool < 1:
            raise ConfigError("counts must be >= 1")
        if self.min_regimes < 1 or self.max_regimes < self.min_regimes:
            raise ConfigError("regime counts invalid")
        if min(self.dwell_choices) * SAMPLE_INTERVAL_S < 40:
            raise ConfigError("regime dwell must be >= 40 s so regimes span windows")
        for name in ("noise_sd", "activity_noise_sd", "gpu_util_noise_sd", "mem_noise_mb"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.irregular_rate < 1:
            raise ConfigError("irregular_rate must be in [0, 1)")
        if max(self.req_nodes_choices) > self.node_pool:
            raise ConfigError("req_nodes_choices exceed the node pool")
        b = self.truth_boundaries
        if not (b[0] < b[1] < b[2]):
            raise ConfigError("truth_boundaries must be strictly increasing")
        for plan in (self.power_weights, self.gpu_util_weights, self.mem_util_weights):
            unknown = set(plan) - set(SIGNAL_FEATURES)
            if unknown:
                raise ConfigError(f"unknown signal features {sorted(unknown)}")

    @property
    def truth_scheme(self) -> PowerBandScheme:
        return PowerBandScheme(self.truth_boundaries)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        for k in ("power_weights", "gpu_util_weights", "mem_util_weights"):
            d[k] = dict(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        kwargs = dict(d)
        for f in dataclasses.fields(cls):
            if f.name in kwargs and isinstance(kwargs[f.name], list):
                kwargs[f.name] = tuple(kwargs[f.name])
        return cls(**kwargs)


def plant_signal(
    cfg: SynthConfig,
    power_features: Sequence[str] = ("time_limit",),
    gpu_util_features: Sequence[str] = ("job_name",),
    mem_util_features: Sequence[str] = ("req_nodes",),
) -> SynthConfig:
    """Config variant where chosen submission features drive the targets.

    Avg power becomes a monotone function of the selected features (regime
    offsets are shrunk to jitter around each job's center), so learnability
    and importance assertions are guaranteed by construction.
    """
    if not (power_features or gpu_util_features or mem_util_features):
        raise ConfigError("plant_signal: empty signal plan")
    return replace(
        cfg,
        power_weights={f: 1.0 for f in power_features},
        gpu_util_weights={f: 1.0 for f in gpu_util_features},
        mem_util_weights={f: 1.0 for f in mem_util_features},
        power_center_range=(110.0, 260.0),
        power_offsets=(-8.0, 8.0),
        noise_sd=min(cfg.noise_sd, 3.0),
    )


@dataclass(frozen=True)
class SynthJobTruth:
    targets: AggregateTargets
    regular_samples: int
    step_bands: tuple[tuple[int, int], ...]  # (epoch seconds, true band)
    n_regimes: int


@dataclass(frozen=True)
class SynthOutput:
    slurm_path: Path
    dcgm_path: Path
    targets_path: Path
    bands_path: Path
    truth: dict[str, SynthJobTruth]
    scheme: PowerBandScheme


def _feature_score(weights: Mapping[str, float], scores: Mapping[str, float], rng) -> float:
    total = sum(weights.values())
    if total <= 0:
        return float(rng.uniform())
    return sum(w * scores[f] for f, w in weights.items()) / total


def _span(lo_hi: tuple[float, float], s: float) -> float:
    lo, hi = lo_hi
    return lo + (hi - lo) * s


def generate(cfg: SynthConfig, out_dir: str | Path) -> SynthOutput:
    """Write slurm.csv, dcgm.csv, and the two ground-truth tables."""
    rng = np.random.default_rng(cfg.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    n_users = cfg.n_users
    user_weights = 1.0 / np.arange(1, n_users + 1) ** cfg.user_zipf_alpha
    user_weights /= user_weights.sum()
    tl_lo, tl_hi = cfg.time_limit_range
    user_tl_center = rng.uniform(size=n_users)
    spread = cfg.user_time_limit_spread

    power_lo = min(cfg.power_center_range) + min(cfg.power_offsets)
    power_hi = max(cfg.power_center_range) + max(cfg.power_offsets)
    power_span = max(power_hi - power_lo, 1e-9)

    base_epoch = 1_740_000_000
    start = base_epoch

    slurm_rows: list[list] = []
    dcgm_rows: list[tuple] = []
    truth: dict[str, SynthJobTruth] = {}

    for j in range(cfg.n_jobs):
        job_id = f"J{j:06d}"
        uid = int(rng.choice(n_users, p=user_weights))
        klass = int(rng.integers(cfg.n_job_classes))
        req_nodes = int(rng.choice(cfg.req_nodes_choices))
        executable = str(rng.choice(cfg.executables))

        # user-local time limit slice keeps per-user variety while leaving
        # global range coverage for the planted signal
        u = user_tl_center[uid]
        frac = np.clip(u + spread * (rng.uniform() - 0.5), 0.0, 1.0)
        time_limit = int(round(tl_lo + (tl_hi - tl_lo) * frac))

        scores = {
            "time_limit": (time_limit - tl_lo) / max(tl_hi - tl_lo, 1),
            "job_name": klass / max(cfg.n_job_classes - 1, 1),
            "req_nodes": (req_nodes - min(cfg.req_nodes_choices))
            / max(max(cfg.req_nodes_choices) - min(cfg.req_nodes_choices), 1),
            "user": uid / max(n_users - 1, 1),
        }
        power_center = _span(cfg.power_center_range, _feature_score(cfg.power_weights, scores, rng))
        util_center = _span(cfg.gpu_util_range, _feature_score(cfg.gpu_util_weights, scores, rng))
        mem_pct = _span(cfg.mem_util_range, _feature_score(cfg.mem_util_weights, scores, rng))

        # regime plan: piecewise-constant power levels
        n_regimes = int(rng.integers(cfg.min_regimes, cfg.max_regimes + 1))
        offsets = []
        prev = None
        for _ in range(n_regimes):
            choices = [o for o in cfg.power_offsets if o != prev] or list(cfg.power_offsets)
            prev = float(rng.choice(choices))
            offsets.append(prev)
        dwells = [int(rng.choice(cfg.dwell_choices)) for _ in range(n_regimes)]
        levels = np.repeat(np.maximum(power_center + np.array(offsets), 1.0), dwells)
        n_steps = int(levels.size)

        nodes = sorted(f"nid{int(i):06d}" for i in rng.choice(cfg.node_pool, req_nodes, replace=False))
        start += int(rng.integers(30, 90))
        end = start + n_steps * SAMPLE_INTERVAL_S

        slurm_rows.append(
            [
                job_id,
                f"user{uid:03d}",
                f"wl{klass}",
                f"acct{uid % cfg.n_accounts}",
                f"cat{uid % cfg.n_categories}",
                req_nodes * 64,
                req_nodes,
                req_nodes * cfg.gpus_per_node,
                req_nodes * 256000,
                time_limit,
                start,
                end,
                ";".join(nodes),
                executable,
            ]
        )

        # activity tracks the level `activity_lead_steps` ahead
        lead = cfg.activity_lead_steps
        src = levels[np.minimum(np.arange(n_steps) + lead, n_steps - 1)]
        lvl_norm = (src - power_lo) / power_span

        n_gpus = req_nodes * cfg.gpus_per_node
        shape = (n_steps, n_gpus)
        power = np.maximum(levels[:, None] + rng.normal(0.0, cfg.noise_sd, shape), 0.0)
        gpu_util = np.clip(util_center + rng.normal(0.0, cfg.gpu_util_noise_sd, shape), 0.0, 100.0)
        fb_used = np.clip(
            mem_pct / 100.0 * cfg.fb_total_mb + rng.normal(0.0, cfg.mem_noise_mb, shape),
            0.0,
            cfg.fb_total_mb - 1.0,
        )
        act = {}
        for name, base, slope in (
            ("sm_active", 0.15, 0.75),
            ("sm_occupancy", 0.20, 0.50),
            ("dram_active", 0.10, 0.60),
            ("fp64_active", 0.05, 0.40),
            ("tensor_active", 0.02, 0.20),
        ):
            act[name] = np.clip(
                base + slope * lvl_norm[:, None] + rng.normal(0.0, cfg.activity_noise_sd, shape),
                0.0,
                1.0,
            )

        job_samples = []
        job_rows = []
        for t in range(n_steps):
            ts = start + t * SAMPLE_INTERVAL_S
            for g in range(n_gpus):
                node = nodes[g // cfg.gpus_per_node]
                gpu_index = g % cfg.gpus_per_node
                row = (
                    job_id,
                    node,
                    gpu_index,
                    ts,
                    float(gpu_util[t, g]),
                    float(fb_used[t, g]),
                    float(cfg.fb_total_mb - fb_used[t, g]),
                    float(act["sm_active"][t, g]),
                    float(act["sm_occupancy"][t, g]),
                    float(act["dram_active"][t, g]),
                    float(act["fp64_active"][t, g]),
                    float(act["tensor_active"][t, g]),
                    float(power[t, g]),
                )
                job_rows.append(row)
                job_samples.append(_row_to_sample(row))
                if cfg.irregular_rate > 0 and t + 1 < n_steps and rng.uniform() < cfg.irregular_rate:
                    job_rows.append((job_id, node, gpu_index, ts + 3) + row[4:])

        dcgm_rows.extend(job_rows)
        truth[job_id] = SynthJobTruth(
            targets=aggregate_targets(job_samples),
            regular_samples=n_steps * n_gpus,
            step_bands=tuple(
                (start + t * SAMPLE_INTERVAL_S, band_of(float(levels[t]), cfg.truth_scheme))
                for t in range(n_steps)
            ),
            n_regimes=n_regimes,
        )

    dcgm_rows.sort(key=lambda r: (r[3], r[0], r[1], r[2]))

    slurm_path = out_dir / "slurm.csv"
    dcgm_path = out_dir / "dcgm.csv"
    targets_path = out_dir / "truth_targets.csv"
    bands_path = out_dir / "truth_bands.csv"

    _write_rows(slurm_path, SLURM_COLUMNS, slurm_rows)
    _write_rows(dcgm_path, DCGM_COLUMNS, dcgm_rows)

    header = f"# generator=gpuforecast-synth rng={RNG_NAME} seed={cfg.seed}\n"
    with targets_path.open("w", encoding="utf-8") as fh:
        fh.write(header)
        fh.write("job_id,max_gpu_utilization,max_mem_utilization,avg_power,n_samples,n_regimes\n")
        for job_id, jt in truth.items():
            t = jt.targets
            fh.write(
                f"{job_id},{t.max_gpu_utilization!r},{t.max_mem_utilization!r},"
                f"{t.avg_power!r},{jt.regular_samples},{jt.n_regimes}\n"
            )
    with bands_path.open("w", encoding="utf-8") as fh:
        fh.write(header)
        fh.write(
            "# bands under boundaries "
            + ",".join(repr(b) for b in cfg.truth_boundaries)
            + "\n"
        )
        fh.write("job_id,timestep,true_band\n")
        for job_id, jt in truth.items():
            for ts, band in jt.step_bands:
                fh.write(f"{job_id},{ts},{band}\n")

    return SynthOutput(
        slurm_path=slurm_path,
        dcgm_path=dcgm_path,
        targets_path=targets_path,
        bands_path=bands_path,
        truth=truth,
        scheme=cfg.truth_scheme,
    )


def _row_to_sample(row: tuple) -> DcgmSample:
    return DcgmSample(
        job_id=row[0],
        node=row[1],
        gpu_index=row[2],
        timestamp=row[3],
        gpu_utilization=row[4],
        fb_used=row[5],
        fb_free=row[6],
        sm_active=row[7],
        sm_occupancy=row[8],
        dram_active=row[9],
        fp64_active=row[10],
        tensor_active=row[11],
        power_usage=row[12],
    )


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")


def read_truth_targets(path: str | Path) -> dict[str, tuple[AggregateTargets, int]]:
    """Parse the targets truth table -> job_id: (targets, regular sample count)."""
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            parts = line.split(",")
            row = dict(zip(header, parts))
            out[row["job_id"]] = (
                AggregateTargets(
                    max_gpu_utilization=float(row["max_gpu_utilization"]),
                    max_mem_utilization=float(row["max_mem_utilization"]),
                    avg_power=float(row["avg_power"]),
                ),
                int(row["n_samples"]),
            )
    return out


def read_truth_bands(path: str | Path) -> dict[str, list[tuple[int, int]]]:
    out: dict[str, list[tuple[int, int]]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            job_id, ts, band = line.split(",")
            out.setdefault(job_id, []).append((int(ts), int(band)))
    return out
