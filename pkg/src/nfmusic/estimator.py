"""Beam-squint-corrected near-field MUSIC and its baseline variants.

For a hypothesis (u, r) the squint transform is diagonal with unit-modulus
entries tau_n = [a(u_bar_m, r_bar_m)]_n / [a(u, r)]_n, so the corrected noise
subspace V_m = T_m^H W U_m^N satisfies

    a(u, r)^H V_m = (T_m a(u, r))^H W U_m^N = a(u_bar_m, r_bar_m)^H W U_m^N,

which vanishes at the true target for every subcarrier.  The batched evaluator
below uses that identity, and ``U^N U^N^H = I - U^S U^S^H``, to score a whole
grid with O(N (N_RF + K)) work per hypothesis; ``literal_spectrum`` keeps the
per-hypothesis matrix products for cross-checking on small grids.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass

import numpy as np

from .array_model import (
    ArrayConfig,
    WidebandGrid,
    curvature,
    fraunhofer_distance,
    nearfield_steering,
    spatial_steering,
    squinted_curvature,
)
from .errors import ConfigurationError, IdentifiabilityError
from .scene import CombinerBank, ObservationSet
from .subspace import SubspacePair, eigendecompose, sample_covariance

DEFAULT_EPS = 1e-12


class Mode(str, enum.Enum):
    PROPOSED = "proposed"
    NF_NOCAL = "nf-nocal"
    FF_NOCAL = "ff-nocal"
    NF_ORACLE = "nf-oracle"
    FF_ORACLE = "ff-oracle"

    @property
    def near_field(self) -> bool:
        return self in (Mode.PROPOSED, Mode.NF_NOCAL, Mode.NF_ORACLE)


@dataclass(frozen=True)
class ModeInfo:
    mode: Mode
    near_field: bool
    squint_handling: str
    description: str


_MODE_TABLE = (
    ModeInfo(Mode.PROPOSED, True, "transform",
             "corrected noise subspace T_m^H W U^N, steering at the carrier"),
    ModeInfo(Mode.NF_NOCAL, True, "none",
             "near-field steering at the carrier, V = W U^N"),
    ModeInfo(Mode.FF_NOCAL, False, "none",
             "planar steering at the carrier, direction-only grid"),
    ModeInfo(Mode.NF_ORACLE, True, "oracle",
             "per-subcarrier steering at the known squinted location"),
    ModeInfo(Mode.FF_ORACLE, False, "oracle",
             "planar steering at eta_m * u per subcarrier, direction-only grid"),
)


def estimator_mode_table() -> tuple[ModeInfo, ...]:
    return _MODE_TABLE


def parse_mode(name) -> Mode:
    if isinstance(name, Mode):
        return name
    key = str(name).strip().lower().replace("_", "-")
    aliases = {"bsc": "proposed", "proposedbsc": "proposed", "nfnocal": "nf-nocal",
               "ffnocal": "ff-nocal", "nfcaloracle": "nf-oracle", "ffcaloracle": "ff-oracle"}
    key = aliases.get(key.replace("-", ""), key)
    try:
        return Mode(key)
    except ValueError:
        raise ValueError(f"unknown estimator mode {name!r}; "
                         f"choose from {[m.value for m in Mode]}") from None


ALL_MODES = tuple(Mode)


@dataclass
class TransformDiag:
    tau: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.tau)


@dataclass
class SpectrumGrid:
    directions: np.ndarray
    ranges: np.ndarray | None
    values: np.ndarray  # (U, R), or (U,) for far-field modes
    mode: Mode | None = None

    def to_csv(self, path=None) -> str:
        """Rows ``u, r, P`` in row-major (direction-major) order."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "r", "P"])
        if self.ranges is None:
            for u, p in zip(self.directions, self.values):
                w.writerow([repr(float(u)), "", repr(float(p))])
        else:
            for i, u in enumerate(self.directions):
                for j, r in enumerate(self.ranges):
                    w.writerow([repr(float(u)), repr(float(r)), repr(float(self.values[i, j]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


@dataclass
class Estimates:
    directions: np.ndarray
    ranges: np.ndarray  # NaN where the model has no range (far field)
    values: np.ndarray
    degraded: bool = False
    mode: Mode | None = None

    def __len__(self):
        return len(self.directions)

    def to_records(self) -> list[dict]:
        mode = self.mode.value if self.mode is not None else None
        return [
            {"u": float(u), "r": None if np.isnan(r) else float(r), "value": float(v), "mode": mode}
            for u, r, v in zip(self.directions, self.ranges, self.values)
        ]

    def to_json(self) -> str:
        return json.dumps(self.to_records())


def search_grid(cfg: ArrayConfig, step_u: float = 0.002, step_r: float = 0.1,
                r_min: float = 0.5, r_max: float | None = None):
    """Direction grid over [-1, 1] and range grid over [r_min, r_max].

    ``r_max`` defaults to the Fraunhofer distance.  r = 0 is excluded since the
    curvature term diverges there.
    """
    if not step_u > 0 or not step_r > 0:
        raise ConfigurationError("grid steps must be positive")
    if not r_min > 0:
        raise ConfigurationError("r_min must be positive")
    if r_max is None:
        r_max = fraunhofer_distance(cfg)
    if r_max < r_min:
        raise ConfigurationError(f"empty range grid: r_max {r_max} < r_min {r_min}")
    n_u = int(round(2 / step_u))
    directions = np.linspace(-1.0, 1.0, n_u + 1)
    n_r = int(np.floor((r_max - r_min) / step_r + 1e-9))
    ranges = r_min + step_r * np.arange(n_r + 1)
    return directions, ranges


def check_identifiability(n_antennas: int, n_targets: int, snapshots: int) -> None:
    if n_antennas - n_targets < 1:
        raise IdentifiabilityError(
            f"noise subspace is empty: N - K = {n_antennas - n_targets} < 1")
    if snapshots < n_targets:
        raise IdentifiabilityError(f"need T >= K snapshots (T = {snapshots}, K = {n_targets})")


def squint_transform(u: float, r: float, m: int, cfg: ArrayConfig, grid: WidebandGrid,
                     spatial_freq: float | None = None) -> TransformDiag:
    """Diagonal of T_m(u, r) for subcarrier ``m`` (1-based)."""
    if not 1 <= m <= grid.n_subcarriers:
        raise IndexError(f"subcarrier {m} outside 1..{grid.n_subcarriers}")
    eta = grid.ratios[m - 1]
    spatial = spatial_steering(u, r, eta, cfg, spatial_freq)
    nominal = nearfield_steering(u, r, cfg.carrier, cfg)
    return TransformDiag(spatial.entries / nominal.entries)


def _as_matrix(W) -> np.ndarray:
    return W.matrix if isinstance(W, CombinerBank) else np.asarray(W)


def corrected_noise_subspace(transform, W, noise_basis: np.ndarray) -> np.ndarray:
    """V^N = T^H W U^N."""
    tau = transform.tau if isinstance(transform, TransformDiag) else np.asarray(transform)
    W = _as_matrix(W)
    N = tau.shape[0]
    if W.shape != (N, N) or noise_basis.shape[0] != N:
        raise ValueError(f"dimension mismatch: tau {tau.shape}, W {W.shape}, "
                         f"U^N {noise_basis.shape}")
    return tau.conj()[:, None] * (W @ noise_basis)


def music_spectrum_point(u: float, r: float, subspaces, cfg: ArrayConfig,
                         eps: float = DEFAULT_EPS) -> float:
    """Sum over subcarriers of 1 / max(||V_m^H a(u, r)||^2, eps)."""
    a = nearfield_steering(u, r, cfg.carrier, cfg).entries
    total = 0.0
    for V in subspaces:
        q = float(np.sum(np.abs(V.conj().T @ a) ** 2))
        total += 1.0 / max(q, eps)
    return total


def literal_spectrum(subspaces: list[SubspacePair], bank: CombinerBank, cfg: ArrayConfig,
                     grid: WidebandGrid, directions, ranges, mode=Mode.PROPOSED,
                     eps: float = DEFAULT_EPS) -> np.ndarray:
    """Point-by-point evaluation with explicit corrected subspaces.

    Slow (one N x N x (N - K) product per hypothesis and subcarrier); meant for
    small grids and as an independent check of ``combined_spectrum``.
    Near-field modes only.
    """
    mode = parse_mode(mode)
    if not mode.near_field:
        raise ValueError("literal_spectrum covers the near-field modes only")
    W = bank.matrix
    WU = [W @ s.noise for s in subspaces]
    out = np.empty((len(directions), len(ranges)))
    for i, u in enumerate(directions):
        for j, r in enumerate(ranges):
            if mode is Mode.PROPOSED:
                Vs = [corrected_noise_subspace(squint_transform(u, r, m + 1, cfg, grid),
                                               W, subspaces[m].noise)
                      for m in range(grid.n_subcarriers)]
                out[i, j] = music_spectrum_point(u, r, Vs, cfg, eps)
            elif mode is Mode.NF_NOCAL:
                out[i, j] = music_spectrum_point(u, r, WU, cfg, eps)
            else:
                total = 0.0
                for m, V in enumerate(WU):
                    a = spatial_steering(u, r, grid.ratios[m], cfg).entries
                    total += 1.0 / max(float(np.sum(np.abs(V.conj().T @ a) ** 2)), eps)
                out[i, j] = total
    return out


def hypothesis_vectors(u: np.ndarray, zeta: np.ndarray, cfg: ArrayConfig,
                       freq: float | None = None) -> np.ndarray:
    """Phase-only steering columns exp(j k ((n-1) d u - (n-1)^2 d^2 zeta)) / sqrt(N).

    Built row by row from a phase recurrence rather than N x H complex
    exponentials; agrees with ``phase_profile`` to ~1e-12.
    """
    freq = cfg.carrier if freq is None else freq
    k = 2 * np.pi * freq / cfg.speed_of_light
    d = cfg.spacing
    alpha = k * d * np.asarray(u, dtype=float)
    beta = -k * d * d * np.asarray(zeta, dtype=float)
    N = cfg.n_antennas
    b = np.empty((N, alpha.shape[0]), dtype=complex)
    b[0] = 1 / np.sqrt(N)
    # phase increment from element n-1 to n is alpha + beta (2n - 1)
    step = np.exp(1j * (alpha + beta))
    turn = np.exp(2j * beta)
    for n in range(1, N):
        np.multiply(b[n - 1], step, out=b[n])
        step *= turn
    return b


def _sq_norms(c: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", c.real, c.real) + np.einsum("ij,ij->j", c.imag, c.imag)


def _residual(c: np.ndarray, norms: np.ndarray, signal: np.ndarray) -> np.ndarray:
    """||U^N^H c||^2 via ||c||^2 - ||U^S^H c||^2."""
    if signal.shape[1]:
        norms = norms - _sq_norms(signal.conj().T @ c)
    return np.maximum(norms, 0.0)


def _oracle_curvature(u, r, eta):
    with np.errstate(divide="ignore", invalid="ignore"):
        u_bar = eta * u
        r_bar = r * (1 - u_bar**2) / (eta * (1 - u**2))
        zeta_bar = (1 - u_bar**2) / (2 * r_bar)
    # endfire limit: the squinted range diverges and the curvature goes to 0
    return u_bar, np.where(np.abs(u) < 1, zeta_bar, 0.0)


def subspaces_for(obs: ObservationSet, n_targets: int) -> list[SubspacePair]:
    return [eigendecompose(sample_covariance(y), n_targets) for y in obs.observations]


def combined_spectrum(obs: ObservationSet | None, bank: CombinerBank, cfg: ArrayConfig,
                      grid: WidebandGrid, n_targets: int, directions=None, ranges=None,
                      mode=Mode.PROPOSED, eps: float = DEFAULT_EPS,
                      subspaces: list[SubspacePair] | None = None,
                      chunk: int = 8192) -> SpectrumGrid:
    """Combined MUSIC spectrum sum_m 1 / a^H V_m V_m^H a over the search grid.

    ``subspaces`` may be passed to reuse one eigendecomposition across modes.
    Far-field modes ignore ``ranges`` and return a 1-D spectrum.
    """
    mode = parse_mode(mode)
    N = cfg.n_antennas
    snapshots = obs.snapshots if obs is not None else n_targets
    check_identifiability(N, n_targets, snapshots)
    if bank.n_antennas != N:
        raise ConfigurationError("combiner size does not match the array")
    if subspaces is None:
        if obs is None:
            raise ValueError("need observations or precomputed subspaces")
        subspaces = subspaces_for(obs, n_targets)
    if len(subspaces) != grid.n_subcarriers:
        raise ValueError("one subspace pair per subcarrier required")
    if directions is None or (ranges is None and mode.near_field):
        d0, r0 = search_grid(cfg)
        directions = d0 if directions is None else directions
        ranges = r0 if ranges is None else ranges
    directions = np.asarray(directions, dtype=float)
    etas = grid.ratios
    signals = [s.signal for s in subspaces]

    if mode.near_field:
        ranges = np.asarray(ranges, dtype=float)
        uu = np.repeat(directions, len(ranges))
        rr = np.tile(ranges, len(directions))
    else:
        uu = directions
        rr = None
    H = uu.shape[0]
    total = np.zeros(H)
    for lo in range(0, H, chunk):
        sl = slice(lo, min(lo + chunk, H))
        u = uu[sl]
        acc = np.zeros(u.shape[0])
        if mode in (Mode.NF_NOCAL, Mode.FF_NOCAL):
            zeta = curvature(u, rr[sl]) if mode is Mode.NF_NOCAL else np.zeros_like(u)
            c = bank.apply_hermitian(hypothesis_vectors(u, zeta, cfg))
            norms = _sq_norms(c)
            for m in range(grid.n_subcarriers):
                acc += 1.0 / np.maximum(_residual(c, norms, signals[m]), eps)
        else:
            for m, eta in enumerate(etas):
                if mode is Mode.PROPOSED:
                    # T_m(u, r) a(u, r) in closed form
                    b = hypothesis_vectors(eta * u, squinted_curvature(u, rr[sl], eta), cfg)
                elif mode is Mode.NF_ORACLE:
                    b = hypothesis_vectors(*_oracle_curvature(u, rr[sl], eta), cfg)
                else:
                    b = hypothesis_vectors(eta * u, np.zeros_like(u), cfg)
                c = bank.apply_hermitian(b)
                norms = _sq_norms(c)
                acc += 1.0 / np.maximum(_residual(c, norms, signals[m]), eps)
        total[sl] = acc
    values = total.reshape(len(directions), len(ranges)) if mode.near_field else total
    return SpectrumGrid(directions, ranges if mode.near_field else None, values, mode)


def _strict_maxima(values: np.ndarray) -> np.ndarray:
    padded = np.pad(values, 1, constant_values=-np.inf)
    core = tuple(slice(1, s + 1) for s in values.shape)
    mask = np.ones(values.shape, dtype=bool)
    offsets = [(-1,), (1,)] if values.ndim == 1 else [
        (di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
    for off in offsets:
        shifted = tuple(slice(1 + o, s + 1 + o) for o, s in zip(off, values.shape))
        mask &= padded[core] > padded[shifted]
    return mask


def find_peaks(spectrum: SpectrumGrid, n_targets: int) -> Estimates:
    """The K highest strict local maxima (8-neighborhood in 2-D).

    Ties are broken by the lower direction index, then the lower range index.
    With fewer than K maxima the remainder is filled from the highest other
    cells and the result is flagged as degraded.
    """
    values = np.asarray(spectrum.values)
    if values.size == 0:
        raise ValueError("empty spectrum grid")
    if n_targets < 1:
        raise ValueError("need K >= 1")
    if n_targets > values.size:
        raise ValueError(f"K = {n_targets} exceeds the {values.size} grid cells")
    flat = values.ravel()
    idx = np.arange(flat.size)
    maxima = idx[_strict_maxima(values).ravel()]
    maxima = maxima[np.lexsort((maxima, -flat[maxima]))]
    chosen = list(maxima[:n_targets])
    degraded = len(chosen) < n_targets
    if degraded:
        rest = np.setdiff1d(idx, chosen)
        rest = rest[np.lexsort((rest, -flat[rest]))]
        chosen.extend(rest[: n_targets - len(chosen)])
    chosen = np.asarray(chosen, dtype=int)
    if values.ndim == 2:
        iu, ir = np.unravel_index(chosen, values.shape)
        ranges = np.asarray(spectrum.ranges)[ir]
    else:
        iu = chosen
        ranges = np.full(len(chosen), np.nan)
    return Estimates(np.asarray(spectrum.directions)[iu], ranges, flat[chosen],
                     degraded, spectrum.mode)


def _parabolic_offset(left, mid, right):
    denom = left - 2 * mid + right
    if denom >= 0 or not np.isfinite(denom):
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def refine_peaks(spectrum: SpectrumGrid, estimates: Estimates) -> Estimates:
    """One-step parabolic interpolation along each grid axis around each peak."""
    values = np.asarray(spectrum.values)
    dirs = np.asarray(spectrum.directions)
    new_u, new_r = [], []
    for u, r in zip(estimates.directions, estimates.ranges):
        i = int(np.argmin(np.abs(dirs - u)))
        if values.ndim == 2:
            j = int(np.argmin(np.abs(spectrum.ranges - r)))
            line_u = values[:, j]
        else:
            line_u = values
        du = 0.0
        if 0 < i < len(dirs) - 1:
            du = _parabolic_offset(line_u[i - 1], line_u[i], line_u[i + 1]) * (dirs[1] - dirs[0])
        new_u.append(u + du)
        if values.ndim == 2:
            rg = spectrum.ranges
            dr = 0.0
            if 0 < j < len(rg) - 1:
                dr = _parabolic_offset(values[i, j - 1], values[i, j], values[i, j + 1]) * (rg[1] - rg[0])
            new_r.append(r + dr)
        else:
            new_r.append(np.nan)
    return Estimates(np.asarray(new_u), np.asarray(new_r), estimates.values,
                     estimates.degraded, estimates.mode)


__all__ = [
    "ALL_MODES", "DEFAULT_EPS", "Estimates", "Mode", "ModeInfo", "SpectrumGrid", "TransformDiag",
    "check_identifiability", "combined_spectrum", "corrected_noise_subspace",
    "estimator_mode_table", "find_peaks", "hypothesis_vectors", "literal_spectrum",
    "music_spectrum_point", "parse_mode", "refine_peaks", "search_grid",
    "squint_transform", "subspaces_for",
]
