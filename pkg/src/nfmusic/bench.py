"""Monte Carlo harness: scenarios, trials, RMSE aggregation, SNR sweeps and
the array-gain scan."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import logging
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .array_model import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    Target,
    WidebandGrid,
    curvature,
    fraunhofer_distance,
    nearfield_steering,
    phase_profile,
    squint_map,
)
from .errors import ConfigurationError
from .estimator import (
    ALL_MODES,
    Estimates,
    Mode,
    combined_spectrum,
    find_peaks,
    parse_mode,
    search_grid,
    subspaces_for,
)
from .scene import (
    generate_probe,
    noise_power_from_snr,
    random_combiner,
    synthesize_echo,
    transmit_power,
)

log = logging.getLogger(__name__)

THREADS_ENV = "NF_MUSIC_THREADS"


@dataclass
class Scenario:
    name: str = "custom"
    carrier: float = 300e9
    bandwidth: float = 30e9
    n_subcarriers: int = 8
    n_antennas: int = 128
    n_rf: int = 8
    snapshots: int = 200
    n_targets: int = 1
    # fixed [u, r] pairs; None draws targets at random per trial
    targets: list | None = None
    snr_db: list = field(default_factory=lambda: [float(s) for s in range(-10, 31, 5)])
    trials: int = 50
    seed: int = 0
    grid_step_u: float = 0.002
    grid_step_r: float = 0.1
    range_min: float = 0.5
    spacing: float | None = None
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if self.n_targets < 1:
            raise ConfigurationError("n_targets must be >= 1")
        if self.trials < 0:
            raise ConfigurationError("trials must be >= 0")
        if self.snapshots < 1:
            raise ConfigurationError("snapshots must be >= 1")
        if self.n_rf < 1 or self.n_antennas % self.n_rf:
            raise ConfigurationError(
                f"n_antennas = {self.n_antennas} is not a multiple of n_rf = {self.n_rf}")
        if self.targets is not None:
            self.targets = [[float(u), float(r)] for u, r in self.targets]
            if len(self.targets) != self.n_targets:
                raise ConfigurationError(
                    f"{len(self.targets)} fixed targets given but n_targets = {self.n_targets}")
        self.snr_db = [float(s) for s in self.snr_db]
        # validates geometry early
        self.array_config()
        self.wideband_grid()

    def array_config(self) -> ArrayConfig:
        return ArrayConfig(self.n_antennas, self.carrier, self.spacing, self.speed_of_light)

    def wideband_grid(self) -> WidebandGrid:
        return WidebandGrid(self.n_subcarriers, self.bandwidth, self.carrier)

    def search_grid(self):
        return search_grid(self.array_config(), self.grid_step_u, self.grid_step_r, self.range_min)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name for f in dataclasses.fields(Scenario)}

PRESETS = {
    "paper": dict(name="paper", bandwidth=30e9, n_subcarriers=32, n_antennas=128, n_rf=8,
                  snapshots=500, n_targets=2, targets=None, trials=500),
    "desk": dict(name="desk", bandwidth=30e9, n_subcarriers=8, n_antennas=128, n_rf=8,
                 snapshots=200, n_targets=1, targets=[[math.sin(math.pi / 4), 5.0]], trials=50),
}


def scenario_from_dict(data: dict, base: Scenario | None = None) -> Scenario:
    unknown = set(data) - _FIELDS
    if unknown:
        raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")
    try:
        return Scenario(**data) if base is None else base.replace(**data)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid scenario value: {exc}") from None


def preset(name: str, **overrides) -> Scenario:
    try:
        values = dict(PRESETS[name])
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    values.update(overrides)
    return scenario_from_dict(values)


def load_scenario(path) -> tuple[Scenario, dict]:
    """Read a YAML/JSON scenario file, or the ``scenario`` section of a run manifest.

    Returns the scenario and the remaining top-level manifest fields (empty for
    plain scenario files).
    """
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: cannot parse: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping at the top level")
    extra = {}
    if "scenario" in data:
        extra = {k: v for k, v in data.items() if k != "scenario"}
        data = data["scenario"]
    return scenario_from_dict(data), extra


def apply_overrides(scenario: Scenario, pairs) -> Scenario:
    """Apply ``key=value`` strings; values are parsed as YAML scalars/lists."""
    changes = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigurationError(f"override {pair!r} is not key=value")
        if key not in _FIELDS:
            raise ConfigurationError(f"unknown scenario key {key!r}")
        changes[key] = yaml.safe_load(raw)
    return scenario_from_dict(changes, scenario)


def manifest(scenario: Scenario, command: str, **extra) -> dict:
    out = {
        "command": command,
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "scenario": scenario.to_dict(),
    }
    out.update(extra)
    return out


def trial_seeds(seed: int, trial_index: int) -> dict[str, np.random.SeedSequence]:
    """Independent streams for one trial, derived from (seed, trial_index) only."""
    names = ("targets", "combiner", "probe", "echo")
    return dict(zip(names, np.random.SeedSequence([seed, trial_index]).spawn(len(names))))


def draw_targets(scenario: Scenario, seed, max_attempts: int = 1000) -> list[Target]:
    """Fixed targets, or angles ~ U[-pi/2, pi/2] and ranges ~ U[0.3, 0.9] d_F.

    Random draws with two directions within three grid cells are redrawn.
    """
    if scenario.targets is not None:
        return [Target(u, r) for u, r in scenario.targets]
    rng = np.random.default_rng(seed)
    d_f = fraunhofer_distance(scenario.array_config())
    min_sep = 3 * scenario.grid_step_u
    for _ in range(max_attempts):
        u = np.sin(rng.uniform(-np.pi / 2, np.pi / 2, scenario.n_targets))
        r = rng.uniform(0.3 * d_f, 0.9 * d_f, scenario.n_targets)
        if np.any(np.abs(u) >= 1):
            continue
        if scenario.n_targets == 1 or np.min(np.diff(np.sort(u))) >= min_sep:
            return [Target(float(a), float(b)) for a, b in zip(u, r)]
    raise RuntimeError("could not draw resolvable targets")


def _angle_deg(u):
    return np.degrees(np.arcsin(np.clip(u, -1.0, 1.0)))


def assign(estimates: Estimates, truths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pair estimates with truths by minimum total squared angle error.

    Returns per-target (angle error in degrees, range error in meters); range
    errors are NaN for estimators without a range coordinate.  Exhaustive over
    permutations, so intended for K <= 6.
    """
    truths = np.asarray(truths, dtype=float).reshape(-1, 2)
    K = truths.shape[0]
    if len(estimates) != K:
        raise ValueError(f"{len(estimates)} estimates for {K} truths")
    if K > 6:
        raise ValueError("exhaustive assignment limited to K <= 6")
    true_deg = _angle_deg(truths[:, 0])
    est_deg = _angle_deg(np.asarray(estimates.directions))
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(K)):
        p = list(perm)
        cost = float(np.sum((est_deg[p] - true_deg) ** 2))
        if cost < best_cost:
            best, best_cost = p, cost
    angle_err = np.abs(est_deg[best] - true_deg)
    range_err = np.abs(np.asarray(estimates.ranges, dtype=float)[best] - truths[:, 1])
    return angle_err, range_err


@dataclass
class TrialResult:
    truths: np.ndarray  # (K, 2) rows of (u, r)
    estimates: dict  # Mode -> Estimates
    timing: dict = field(default_factory=dict)  # Mode -> seconds
    snr_db: float = math.inf
    trial_index: int = 0
    unresolved: bool = False  # two truths within one grid cell
    out_of_region: int = 0

    def errors(self, mode) -> tuple[np.ndarray, np.ndarray]:
        return assign(self.estimates[parse_mode(mode)], self.truths)

    def degraded(self, mode=None) -> bool:
        if self.unresolved:
            return True
        modes = [parse_mode(mode)] if mode is not None else list(self.estimates)
        return any(self.estimates[m].degraded for m in modes)


@dataclass
class TrialData:
    """Everything one trial simulates before estimation."""

    cfg: ArrayConfig
    grid: WidebandGrid
    targets: list
    bank: object
    observations: object


def simulate_trial(scenario: Scenario, snr_db: float, trial_index: int) -> TrialData:
    cfg = scenario.array_config()
    grid = scenario.wideband_grid()
    seeds = trial_seeds(scenario.seed, trial_index)
    targets = draw_targets(scenario, seeds["targets"])
    bank = random_combiner(cfg, scenario.n_rf, seeds["combiner"])
    probe = generate_probe(cfg, grid, transmit_power(cfg, grid), scenario.snapshots,
                           scenario.n_rf, seeds["probe"])
    obs = synthesize_echo(targets, probe, bank, cfg, grid, noise_power_from_snr(snr_db),
                          seeds["echo"])
    return TrialData(cfg, grid, targets, bank, obs)


def run_trial(scenario: Scenario, snr_db: float, trial_index: int, modes=ALL_MODES) -> TrialResult:
    modes = [parse_mode(m) for m in modes]
    data = simulate_trial(scenario, snr_db, trial_index)
    cfg, grid, targets, bank, obs = (data.cfg, data.grid, data.targets, data.bank,
                                     data.observations)
    K = scenario.n_targets
    directions, ranges = scenario.search_grid()
    subspaces = subspaces_for(obs, K)
    estimates, timing = {}, {}
    for mode in modes:
        t0 = time.perf_counter()
        spec = combined_spectrum(obs, bank, cfg, grid, K, directions, ranges, mode,
                                 subspaces=subspaces)
        estimates[mode] = find_peaks(spec, K)
        timing[mode] = time.perf_counter() - t0
    truths = np.array([[t.direction, t.range] for t in targets])
    unresolved = False
    for a, b in itertools.combinations(truths, 2):
        if abs(a[0] - b[0]) < scenario.grid_step_u and abs(a[1] - b[1]) < scenario.grid_step_r:
            unresolved = True
    return TrialResult(truths, estimates, timing, float(snr_db), trial_index, unresolved,
                       len(obs.out_of_region))


def rmse(trials) -> dict:
    """Mode -> (RMSE of angle in degrees, RMSE of range in meters) over trials and targets."""
    trials = list(trials)
    if not trials:
        raise ValueError("need at least one trial")
    out = {}
    for mode in trials[0].estimates:
        ang, rng = [], []
        for t in trials:
            a, r = t.errors(mode)
            ang.append(a)
            rng.append(r)
        ang = np.concatenate(ang)
        rng = np.concatenate(rng)
        out[mode] = (float(np.sqrt(np.mean(ang**2))), float(np.sqrt(np.mean(rng**2))))
    return out


@dataclass
class SweepCurve:
    snr_db: list
    modes: list
    rmse_theta: dict  # Mode -> list (deg)
    rmse_range: dict  # Mode -> list (m)
    n_trials: list

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["snr_db", "mode", "rmse_theta_deg", "rmse_range_m", "n_trials"])
        for i, snr in enumerate(self.snr_db):
            for mode in self.modes:
                w.writerow([repr(float(snr)), mode.value, repr(self.rmse_theta[mode][i]),
                            repr(self.rmse_range[mode][i]), self.n_trials[i]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def run_trials(scenario: Scenario, snr_db: float, modes=ALL_MODES, workers: int | None = None):
    """All trials at one SNR, returned in trial-index order."""
    workers = worker_count() if workers is None else workers
    job = lambda i: run_trial(scenario, snr_db, i, modes)  # noqa: E731
    if workers <= 1:
        return [job(i) for i in range(scenario.trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, range(scenario.trials)))


def snr_sweep(scenario: Scenario, modes=ALL_MODES, workers: int | None = None) -> SweepCurve:
    if not scenario.snr_db:
        raise ConfigurationError("empty SNR list")
    modes = [parse_mode(m) for m in modes]
    curve = SweepCurve([], modes, {m: [] for m in modes}, {m: [] for m in modes}, [])
    for snr in scenario.snr_db:
        if scenario.trials == 0:
            log.warning("no trials at SNR %s dB; point omitted", snr)
            continue
        t0 = time.perf_counter()
        trials = run_trials(scenario, snr, modes, workers)
        stats = rmse(trials)
        curve.snr_db.append(snr)
        curve.n_trials.append(len(trials))
        for m in modes:
            curve.rmse_theta[m].append(stats[m][0])
            curve.rmse_range[m].append(stats[m][1])
        log.info("SNR %g dB: %d trials in %.1f s", snr, len(trials), time.perf_counter() - t0)
    return curve


@dataclass
class GainScan:
    subcarriers: np.ndarray  # 1-based indices
    frequencies: np.ndarray
    directions: np.ndarray
    gains: np.ndarray  # (M, U)
    squinted_ranges: np.ndarray

    @property
    def argmax_directions(self) -> np.ndarray:
        return self.directions[np.argmax(self.gains, axis=1)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "f_hz", "u", "gain"])
        for i, (m, f) in enumerate(zip(self.subcarriers, self.frequencies)):
            for u, g in zip(self.directions, self.gains[i]):
                w.writerow([int(m), repr(float(f)), repr(float(u)), repr(float(g))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def array_gain_scan(u0: float, r0: float, scenario: Scenario, directions=None) -> GainScan:
    """|a(u0, r0; f_c)^H a(u, r_bar_m; f_m)| over directions u for each subcarrier,
    with the probe range held at the squinted range r_bar_m of (u0, r0)."""
    if abs(u0) >= 1:
        raise ValueError("|u0| must be < 1")
    cfg = scenario.array_config()
    grid = scenario.wideband_grid()
    if directions is None:
        directions, _ = scenario.search_grid()
    directions = np.asarray(directions, dtype=float)
    ref = nearfield_steering(u0, r0, cfg.carrier, cfg)
    gains = np.empty((grid.n_subcarriers, len(directions)))
    r_bar = np.empty(grid.n_subcarriers)
    for m, (f, eta) in enumerate(zip(grid.frequencies, grid.ratios)):
        r_bar[m] = squint_map(u0, r0, eta).range
        probes = phase_profile(directions, curvature(directions, r_bar[m]), f, cfg)
        # the global range phase is common to all probes and drops out of |.|
        gains[m] = np.abs(ref.entries.conj() @ probes)
    return GainScan(np.arange(1, grid.n_subcarriers + 1), np.asarray(grid.frequencies),
                    directions, gains, r_bar)


__all__ = [
    "ALL_MODES", "GainScan", "Mode", "PRESETS", "Scenario", "SweepCurve", "TrialResult", "apply_overrides",
    "array_gain_scan", "assign", "draw_targets", "load_scenario", "manifest", "preset", "rmse",
    "run_trial", "run_trials", "scenario_from_dict", "simulate_trial", "snr_sweep", "trial_seeds",
    "worker_count",
]
