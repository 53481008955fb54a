"""
Monte-Carlo engine for delayed access.

One trial: sample a Poisson field of small cells around the UE at the origin, mark
each cell active / idle / sleeping, draw the remaining service or sleep time of every
busy cell, resolve the access event, then draw Rayleigh fading for the serving link and
the active interferers at transmission time.

Trials run in fixed chunks, each with its own child of SeedSequence(seed), so a batch
is identical for any number of workers.

Usage (library):
    batch = run_trials(cfg, AccessScenario(r_th=10, w=10), n_trials=100_000, seed=42)
    batch.coverage(1.0), batch.rate()
"""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np
from tqdm import tqdm

from cellwait.analytic import AccessEvent, CoverageMethod, CoverageResult
from cellwait.model import AccessScenario, CellwaitError, NetworkConfig
from cellwait.numerics import DomainError

logger = logging.getLogger(__name__)

# ── Configuration ──────────────────────────────────────────────────────────────

CHUNK_SIZE = 1000              # trials per seed partition
MAX_DISK_DOUBLINGS = 3
EDGE_BUDGET = 1e-3             # tolerated share of interference from beyond r_sim
MIN_DISK_SCALE = 20.0          # r_sim >= MIN_DISK_SCALE / sqrt(rho_f * pi)
Z_95 = 1.96

EVENT_CODES = (AccessEvent.IA, AccessEvent.DA, AccessEvent.OA)
RECORD_COLUMNS = ["trial", "event", "distance_m", "wait_s", "sinr_db"]


class NoServer(CellwaitError, RuntimeError):
    pass


class Mode(IntEnum):
    ACTIVE = 0
    IDLE = 1
    SLEEPING = 2


class OAPolicy(str, Enum):
    STATIONARY = "stationary"
    EXPIRY = "expiry"


# ── Types ──────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class CellField:
    """
    One realization of the cell process inside a disk of radius r_sim around the UE.

    `clocks` holds the remaining service time of active cells and the remaining sleep
    time of sleeping cells (0 for idle cells). `modes_after` is an independent draw from
    the stationary fractions and gives each cell's mode at time w for OA.
    """
    positions: np.ndarray
    modes: np.ndarray
    clocks: np.ndarray
    modes_after: np.ndarray
    r_sim: float

    def __len__(self):
        return len(self.modes)

    @property
    def distances(self) -> np.ndarray:
        return np.hypot(self.positions[:, 0], self.positions[:, 1])


@dataclass(frozen=True)
class AccessOutcome:
    event: AccessEvent
    serving_distance: float
    wait: float
    serving_index: int
    sinr: float = math.nan


@dataclass(frozen=True)
class Estimate:
    mean: float
    ci_halfwidth: float
    n_trials: int
    seed: int | None = None

    @property
    def stderr(self) -> float:
        return self.ci_halfwidth / Z_95

    def halfwidth(self, z: float) -> float:
        return self.stderr * z

    def contains(self, value: float, z: float = Z_95) -> bool:
        return abs(value - self.mean) <= self.halfwidth(z)

    @classmethod
    def from_samples(cls, samples: np.ndarray, seed: int | None = None) -> "Estimate":
        samples = np.asarray(samples, dtype=float)
        n = len(samples)
        if n == 0:
            raise DomainError("cannot estimate from zero samples")
        if n == 1:
            return cls(float(samples[0]), math.inf, 1, seed)
        stderr = float(np.std(samples, ddof=1)) / math.sqrt(n)
        return cls(float(np.mean(samples)), Z_95 * stderr, n, seed)


@dataclass(frozen=True, eq=False)
class TrialBatch:
    events: np.ndarray       # indices into EVENT_CODES
    distances: np.ndarray
    waits: np.ndarray
    sinrs: np.ndarray
    seed: int | None = None
    retries: int = 0

    def __len__(self):
        return len(self.events)

    def event_mask(self, event: AccessEvent) -> np.ndarray:
        return self.events == EVENT_CODES.index(AccessEvent(event))

    def event_fractions(self) -> dict[AccessEvent, Estimate]:
        return {event: Estimate.from_samples(self.event_mask(event).astype(float), self.seed)
                for event in EVENT_CODES}

    def coverage(self, gamma: float) -> Estimate:
        """Fraction of trials with SINR above gamma (infinite SINR counts as covered)."""
        return Estimate.from_samples((self.sinrs > gamma).astype(float), self.seed)

    def coverage_result(self, gamma: float) -> CoverageResult:
        """Coverage with the 95% half-width as its error estimate."""
        estimate = self.coverage(gamma)
        return CoverageResult(estimate.mean, CoverageMethod.MONTE_CARLO, estimate.ci_halfwidth)

    def rate(self) -> Estimate:
        """Mean of log2(1 + SINR) over trials with finite SINR."""
        finite = np.isfinite(self.sinrs)
        excluded = int(len(self.sinrs) - finite.sum())
        if excluded:
            logger.info(f"Excluded {excluded} infinite-SINR trials from the rate mean")
        return Estimate.from_samples(np.log2(1.0 + self.sinrs[finite]), self.seed)


# ── Sampling ───────────────────────────────────────────────────────────────────

def default_r_sim(cfg: NetworkConfig, scen: AccessScenario) -> float:
    """Disk radius that keeps interference from outside it below EDGE_BUDGET (alpha = 4 tail)."""
    r0 = 1.0 / math.sqrt(cfg.rho_f * math.pi)
    return max(MIN_DISK_SCALE * r0, r0 / math.sqrt(EDGE_BUDGET), 2.0 * scen.r_th)


def sample_field(cfg: NetworkConfig, r_sim: float, seed) -> CellField:
    """
    Poisson field in the disk of radius r_sim with independent mode marks.

    `seed` is anything numpy.random.default_rng accepts; passing a Generator continues
    its stream.
    """
    if not r_sim > 0:
        raise DomainError(f"r_sim must be > 0, got {r_sim!r}")
    rng = np.random.default_rng(seed)
    fractions = [cfg.p_A, cfg.p_I, cfg.p_S]
    n = rng.poisson(cfg.rho_f * math.pi * r_sim ** 2)
    radius = r_sim * np.sqrt(rng.random(n))
    angle = 2.0 * math.pi * rng.random(n)
    positions = np.column_stack((radius * np.cos(angle), radius * np.sin(angle)))
    modes = rng.choice(len(Mode), size=n, p=fractions).astype(np.int8)
    service = rng.exponential(1.0 / cfg.mu, size=n)
    sleep = rng.exponential(1.0 / cfg.lambda_S, size=n)
    clocks = np.where(modes == Mode.ACTIVE, service, np.where(modes == Mode.SLEEPING, sleep, 0.0))
    modes_after = rng.choice(len(Mode), size=n, p=fractions).astype(np.int8)
    return CellField(positions, modes, clocks, modes_after, float(r_sim))


def _nearest(distances: np.ndarray, mask: np.ndarray) -> int:
    candidates = np.flatnonzero(mask)
    return int(candidates[np.argmin(distances[candidates])])


def resolve_access(cell_field: CellField, scen: AccessScenario,
                   oa_policy: OAPolicy = OAPolicy.STATIONARY) -> AccessOutcome:
    """
    IA to the nearest idle cell within r_th; otherwise DA to the first busy or sleeping
    cell within r_th to free up before w; otherwise OA at time w to the nearest cell
    beyond r_th that is idle by then.
    """
    d = cell_field.distances
    inside = d < scen.r_th
    idle_inside = inside & (cell_field.modes == Mode.IDLE)
    if idle_inside.any():
        idx = _nearest(d, idle_inside)
        return AccessOutcome(AccessEvent.IA, float(d[idx]), 0.0, idx)

    released = inside & (cell_field.modes != Mode.IDLE) & (cell_field.clocks <= scen.w)
    if released.any():
        candidates = np.flatnonzero(released)
        idx = int(candidates[np.argmin(cell_field.clocks[candidates])])
        return AccessOutcome(AccessEvent.DA, float(d[idx]), float(cell_field.clocks[idx]), idx)

    if OAPolicy(oa_policy) is OAPolicy.STATIONARY:
        available = ~inside & (cell_field.modes_after == Mode.IDLE)
    else:
        available = ~inside & ((cell_field.modes == Mode.IDLE) | (cell_field.clocks <= scen.w))
    if not available.any():
        raise NoServer(f"no idle cell beyond r_th={scen.r_th} inside r_sim={cell_field.r_sim}")
    idx = _nearest(d, available)
    return AccessOutcome(AccessEvent.OA, float(d[idx]), float(scen.w), idx)


def _link_sinr(cfg: NetworkConfig, serving_distance: float, interferer_distances: np.ndarray,
               rng: np.random.Generator) -> float:
    h = rng.exponential(1.0 / cfg.zeta)
    g = rng.exponential(1.0 / cfg.zeta, size=len(interferer_distances))
    noise_and_interference = cfg.p_tx * float(np.sum(g * interferer_distances ** -cfg.alpha)) + cfg.sigma2
    if noise_and_interference == 0:
        return math.inf
    with np.errstate(divide="ignore"):
        signal = cfg.p_tx * h * serving_distance ** -cfg.alpha
    return float(signal / noise_and_interference)


def sample_interferer_distances(cfg: NetworkConfig, r_sim: float, seed) -> np.ndarray:
    """Distances of a fresh PPP of active cells (density p_A * rho_f) in the disk of radius r_sim."""
    rng = np.random.default_rng(seed)
    n = rng.poisson(cfg.p_A * cfg.rho_f * math.pi * r_sim ** 2)
    return r_sim * np.sqrt(rng.random(n))


def sample_sinr(cell_field: CellField, outcome: AccessOutcome, cfg: NetworkConfig,
                at_time: float, seed) -> float:
    """
    SINR at transmission time with exponential fading of mean 1/zeta.

    At time 0 the interferers are the cells active in the sampled field. After a wait
    the field is conditioned by the access event (DA and OA both say something about
    the cells inside r_th), so the interferers are a fresh active PPP over the same
    disk. The serving cell never interferes.
    Returns inf when there is neither interference nor noise.
    """
    rng = np.random.default_rng(seed)
    if at_time == 0:
        interferers = cell_field.modes == Mode.ACTIVE
        interferers[outcome.serving_index] = False
        distances = cell_field.distances[interferers]
    else:
        distances = sample_interferer_distances(cfg, cell_field.r_sim, rng)
    return _link_sinr(cfg, outcome.serving_distance, distances, rng)


# ── Trials ─────────────────────────────────────────────────────────────────────

def _single_trial(cfg: NetworkConfig, scen: AccessScenario, r_sim: float,
                  rng: np.random.Generator, oa_policy: OAPolicy) -> tuple[AccessOutcome, int]:
    radius = r_sim
    retry = 0
    while True:
        cell_field = sample_field(cfg, radius, rng)
        try:
            outcome = resolve_access(cell_field, scen, oa_policy)
            break
        except NoServer:
            if retry == MAX_DISK_DOUBLINGS:
                raise
            retry += 1
            radius *= 2.0
            logger.warning(f"No server inside r_sim={radius / 2.0:.1f} m, retrying with {radius:.1f} m")
    sinr = sample_sinr(cell_field, outcome, cfg, outcome.wait, rng)
    return AccessOutcome(outcome.event, outcome.serving_distance, outcome.wait,
                         outcome.serving_index, sinr), retry


def _run_chunk(args) -> dict:
    cfg, scen, r_sim, n, seed_seq, oa_policy = args
    rng = np.random.default_rng(seed_seq)
    events = np.empty(n, dtype=np.int8)
    distances = np.empty(n)
    waits = np.empty(n)
    sinrs = np.empty(n)
    retries = 0
    for i in range(n):
        outcome, retry = _single_trial(cfg, scen, r_sim, rng, oa_policy)
        events[i] = EVENT_CODES.index(outcome.event)
        distances[i] = outcome.serving_distance
        waits[i] = outcome.wait
        sinrs[i] = outcome.sinr
        retries += retry
    return {"events": events, "distances": distances, "waits": waits, "sinrs": sinrs,
            "retries": retries}


def run_trials(cfg: NetworkConfig, scen: AccessScenario, n_trials: int, seed: int,
               workers: int = 1, oa_policy: OAPolicy = OAPolicy.STATIONARY,
               r_sim: float | None = None, progress: bool = False) -> TrialBatch:
    """
    Run n_trials independent trials and return them in trial order.

    Chunk k always uses the k-th child of SeedSequence(seed), and chunks are merged in
    index order, so the result does not depend on `workers`.
    """
    if n_trials < 1:
        raise DomainError(f"n_trials must be >= 1, got {n_trials!r}")
    if r_sim is None:
        r_sim = default_r_sim(cfg, scen)
    sizes = [CHUNK_SIZE] * (n_trials // CHUNK_SIZE)
    if n_trials % CHUNK_SIZE:
        sizes.append(n_trials % CHUNK_SIZE)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(cfg, scen, r_sim, size, child, OAPolicy(oa_policy)) for size, child in zip(sizes, children)]

    bar = tqdm(total=len(jobs), desc="Monte-Carlo chunks", unit="chunk", disable=not progress)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = []
            for chunk in pool.map(_run_chunk, jobs):
                chunks.append(chunk)
                bar.update(1)
    else:
        chunks = []
        for job in jobs:
            chunks.append(_run_chunk(job))
            bar.update(1)
    bar.close()

    retries = sum(chunk["retries"] for chunk in chunks)
    if retries:
        logger.warning(f"{retries} trials needed a larger disk than r_sim={r_sim:.1f} m")
    return TrialBatch(
        events=np.concatenate([c["events"] for c in chunks]),
        distances=np.concatenate([c["distances"] for c in chunks]),
        waits=np.concatenate([c["waits"] for c in chunks]),
        sinrs=np.concatenate([c["sinrs"] for c in chunks]),
        seed=seed,
        retries=retries,
    )


def estimate_coverage(cfg: NetworkConfig, scen: AccessScenario, gamma: float, n_trials: int,
                      seed: int, **kwargs) -> Estimate:
    return run_trials(cfg, scen, n_trials, seed, **kwargs).coverage(gamma)


def estimate_rate(cfg: NetworkConfig, scen: AccessScenario, n_trials: int, seed: int,
                  **kwargs) -> Estimate:
    return run_trials(cfg, scen, n_trials, seed, **kwargs).rate()


def estimate_conditional_coverage(cfg: NetworkConfig, r: float, gamma: float, n_trials: int,
                                  seed: int, r_sim: float | None = None) -> Estimate:
    """P(SINR > gamma) with the serving cell pinned at distance r and every active cell interfering."""
    if r_sim is None:
        r_sim = default_r_sim(cfg, AccessScenario(r_th=r, w=0.0))
    rng = np.random.default_rng(seed)
    covered = np.empty(n_trials)
    for i in range(n_trials):
        cell_field = sample_field(cfg, r_sim, rng)
        active = cell_field.distances[cell_field.modes == Mode.ACTIVE]
        covered[i] = _link_sinr(cfg, float(r), active, rng) > gamma
    return Estimate.from_samples(covered, seed)


# ── Output ─────────────────────────────────────────────────────────────────────

def write_records(batch: TrialBatch, path: Path):
    """Per-trial CSV: trial, event, distance_m, wait_s, sinr_db."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with np.errstate(divide="ignore"):
        sinr_db = 10.0 * np.log10(batch.sinrs)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=RECORD_COLUMNS)
        writer.writeheader()
        for i in range(len(batch)):
            writer.writerow({
                "trial": i,
                "event": EVENT_CODES[batch.events[i]].value,
                "distance_m": repr(float(batch.distances[i])),
                "wait_s": repr(float(batch.waits[i])),
                "sinr_db": repr(float(sinr_db[i])),
            })
    tmp.replace(path)
    logger.info(f"Wrote {len(batch)} trial records to {path}")
