"""Probe signals, subarrayed combiners and wideband echo synthesis."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .array_model import (
    ArrayConfig,
    Target,
    WidebandGrid,
    spatial_steering,
)
from .errors import ConfigurationError

log = logging.getLogger(__name__)


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _complex_normal(rng: np.random.Generator, shape, power: float = 1.0) -> np.ndarray:
    """Circular complex Gaussian with E|z|^2 = power."""
    scale = np.sqrt(power / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class ProbeSignal:
    signals: np.ndarray  # X_m, (M, N, T)
    symbols: np.ndarray  # s_m, (M, N_RF, T)
    precoder: np.ndarray  # F, (N, N_RF)
    power: float
    snapshots: int


@dataclass
class CombinerBank:
    """Block-diagonal analog combiner.  ``blocks[j]`` is the dense N_RF x N_RF
    part of slot j; the full N x N matrix places it on rows/cols of block j."""

    blocks: np.ndarray  # (J, N_RF, N_RF)

    @property
    def n_rf(self) -> int:
        return self.blocks.shape[1]

    @property
    def n_slots(self) -> int:
        return self.blocks.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.n_slots * self.n_rf

    def slot(self, j: int) -> np.ndarray:
        """W_j (N x N_RF), zero outside the rows of block j (0-based)."""
        nrf = self.n_rf
        w = np.zeros((self.n_antennas, nrf), dtype=complex)
        w[j * nrf:(j + 1) * nrf] = self.blocks[j]
        return w

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.slot(j) for j in range(self.n_slots)])

    def apply_hermitian(self, x: np.ndarray) -> np.ndarray:
        """W^H x for x of shape (N, ...), using the block structure."""
        nrf = self.n_rf
        xb = x.reshape((self.n_slots, nrf, -1))
        out = np.matmul(self.blocks.conj().transpose(0, 2, 1), xb)
        return out.reshape(x.shape)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """W x for x of shape (N, ...)."""
        nrf = self.n_rf
        xb = x.reshape((self.n_slots, nrf, -1))
        return np.matmul(self.blocks, xb).reshape(x.shape)


@dataclass
class SceneMatrices:
    steering: np.ndarray  # A_m, (N, K)
    combined: np.ndarray  # D_m = W^H A_m
    reflection: np.ndarray  # Pi_m, (K, K)
    gram: np.ndarray  # Pi_m A_m^T A_m^* Pi_m^H


@dataclass
class ObservationSet:
    observations: np.ndarray  # Y_m stacked, (M, N, T)
    noise_power: float
    out_of_region: list = field(default_factory=list)  # (m, k) pairs with |u_bar| > 1
    noise: np.ndarray | None = None  # combined N_m, kept on request
    raw_noise: np.ndarray | None = None  # pre-combiner noise

    @property
    def n_subcarriers(self) -> int:
        return self.observations.shape[0]

    @property
    def snapshots(self) -> int:
        return self.observations.shape[2]

    def save(self, path) -> None:
        np.savez_compressed(path, observations=self.observations,
                            noise_power=self.noise_power)

    @classmethod
    def load(cls, path) -> "ObservationSet":
        with np.load(path) as data:
            return cls(data["observations"], float(data["noise_power"]))

    def to_json(self) -> str:
        y = self.observations
        return json.dumps({
            "shape": list(y.shape),
            "noise_power": self.noise_power,
            "re": y.real.ravel().tolist(),
            "im": y.imag.ravel().tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ObservationSet":
        data = json.loads(text)
        y = (np.asarray(data["re"]) + 1j * np.asarray(data["im"])).reshape(data["shape"])
        return cls(y, data["noise_power"])


def reflection_coefficients(n_targets: int, n_subcarriers: int, seed) -> np.ndarray:
    """Unit-variance circular complex Gaussian coefficients, shape (K, M)."""
    if n_targets < 1 or n_subcarriers < 1:
        raise ValueError("need at least one target and one subcarrier")
    rng = np.random.default_rng(_seed_sequence(seed))
    return _complex_normal(rng, (n_targets, n_subcarriers))


def random_combiner(cfg: ArrayConfig, n_rf: int, seed) -> CombinerBank:
    """Phase-shifter combiner: entries exp(j Phi) / sqrt(N), Phi ~ U[-pi/2, pi/2]."""
    N = cfg.n_antennas
    if n_rf < 1 or N % n_rf:
        raise ConfigurationError(f"N = {N} is not a multiple of N_RF = {n_rf}")
    rng = np.random.default_rng(_seed_sequence(seed))
    phi = rng.uniform(-np.pi / 2, np.pi / 2, size=(N // n_rf, n_rf, n_rf))
    return CombinerBank(np.exp(1j * phi) / np.sqrt(N))


def generate_probe(cfg: ArrayConfig, grid: WidebandGrid, power: float, snapshots: int,
                   n_rf: int, seed) -> ProbeSignal:
    """X_m = F s_m with a unit-modulus precoder scaled so that trace(F F^H) = 1
    and symbol power P_r / M, giving E[trace(X_m X_m^H)] / T = P_r / M."""
    if snapshots < 1:
        raise ValueError("snapshots must be >= 1")
    if power < 0:
        raise ValueError("power must be non-negative")
    N, M = cfg.n_antennas, grid.n_subcarriers
    ss = _seed_sequence(seed)
    pre_ss, *sym_ss = ss.spawn(M + 1)
    pre_rng = np.random.default_rng(pre_ss)
    F = np.exp(1j * pre_rng.uniform(-np.pi, np.pi, size=(N, n_rf))) / np.sqrt(N * n_rf)
    symbols = np.stack([
        _complex_normal(np.random.default_rng(s), (n_rf, snapshots), power / M) for s in sym_ss
    ])
    signals = np.matmul(F, symbols)
    return ProbeSignal(signals, symbols, F, float(power), int(snapshots))


def squinted_steering_matrix(targets, eta: float, cfg: ArrayConfig) -> tuple[np.ndarray, list]:
    """A_m: columns are the targets' steering vectors at their squinted
    locations, phase factor at the carrier (global range phase included).

    Returns the matrix and the indices of targets pushed outside |u| <= 1.
    """
    A = np.empty((cfg.n_antennas, len(targets)), dtype=complex)
    outside = []
    for i, t in enumerate(targets):
        if abs(eta * t.direction) > 1:
            outside.append(i)
        A[:, i] = spatial_steering(t.direction, t.range, eta, cfg).entries
    return A, outside


def scene_matrices(targets, bank: CombinerBank, cfg: ArrayConfig, eta: float,
                   reflection: np.ndarray) -> SceneMatrices:
    """A_m, D_m, Pi_m and the Gram-weighted Pi~_m for one subcarrier."""
    A, _ = squinted_steering_matrix(targets, eta, cfg)
    D = bank.apply_hermitian(A)
    Pi = np.diag(np.asarray(reflection, dtype=complex))
    gram = Pi @ A.T @ A.conj() @ Pi.conj().T
    return SceneMatrices(A, D, Pi, gram)


def synthesize_echo(targets, probe: ProbeSignal, bank: CombinerBank, cfg: ArrayConfig,
                    grid: WidebandGrid, noise_power: float, seed,
                    reflection: np.ndarray | None = None, keep_noise: bool = False) -> ObservationSet:
    """Stacked per-subcarrier observations Y_m (M, N, T).

    Each target echo is beta a^T X_m along its squinted steering vector a.  The
    array output is read out slot by slot through W_j and the J slot outputs are
    stacked into the full N-row matrix.  Reflection coefficients default to
    unit-variance complex Gaussian draws from ``seed``.
    """
    targets = [t if isinstance(t, Target) else Target(*t) for t in targets]
    N, M, T = cfg.n_antennas, grid.n_subcarriers, probe.snapshots
    if bank.n_antennas != N:
        raise ConfigurationError("combiner size does not match the array")
    if noise_power < 0:
        raise ValueError("noise power must be non-negative")
    K = len(targets)
    ss = _seed_sequence(seed)
    beta_ss, *noise_ss = ss.spawn(M + 1)
    if reflection is None and K:
        reflection = reflection_coefficients(K, M, beta_ss)
    Y = np.empty((M, N, T), dtype=complex)
    kept = np.empty((M, N, T), dtype=complex) if keep_noise else None
    raw = np.empty((M, N, T), dtype=complex) if keep_noise else None
    outside = []
    nrf = bank.n_rf
    for m in range(M):
        rng = np.random.default_rng(noise_ss[m])
        # drawn even at zero power so realizations line up across SNR points
        noise = _complex_normal(rng, (N, T), 1.0) * np.sqrt(noise_power)
        field_m = noise.copy()
        if K:
            A, out = squinted_steering_matrix(targets, grid.ratios[m], cfg)
            outside.extend((m, k) for k in out)
            echoes = reflection[:, m, None] * (A.T @ probe.signals[m])  # x~_{m,k}, (K, T)
            field_m += A @ echoes
        for j in range(bank.n_slots):
            rows = slice(j * nrf, (j + 1) * nrf)
            Y[m, rows] = bank.blocks[j].conj().T @ field_m[rows]
        if keep_noise:
            raw[m] = noise
            kept[m] = bank.apply_hermitian(noise)
    if outside:
        log.warning("%d (subcarrier, target) pairs squint outside |u| <= 1", len(outside))
    return ObservationSet(Y, float(noise_power), outside, kept, raw)


def noise_power_from_snr(snr_db: float) -> float:
    """sigma^2 for SNR = 10 log10(rho / sigma^2) with rho = P_r / (M N)^2 = 1."""
    return float(10 ** (-snr_db / 10))


def transmit_power(cfg: ArrayConfig, grid: WidebandGrid) -> float:
    """P_r making rho = P_r / (M N)^2 equal to one."""
    return float((grid.n_subcarriers * cfg.n_antennas) ** 2)


__all__ = [
    "CombinerBank", "ObservationSet", "ProbeSignal", "SceneMatrices",
    "generate_probe", "noise_power_from_snr", "random_combiner", "reflection_coefficients",
    "scene_matrices", "squinted_steering_matrix", "synthesize_echo", "transmit_power",
]
