"""Uniform linear array geometry, near/far-field steering vectors and beam squint.

Directions are carried as directional sines ``u = sin(phi)`` throughout; angles
in degrees only appear at the bench/CLI boundary.  Element and subcarrier
numbers follow the 1-based convention of the formulas (element ``n`` sits at
offset ``(n - 1) * d`` from the reference element).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SingularityError

#: Speed of light used by default.  The reference values for this geometry
#: (e.g. d_F = 32.51 m for N = 256 at 300 GHz) are all computed with 3e8.
SPEED_OF_LIGHT = 3.0e8
EXACT_SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayConfig:
    """Static ULA geometry.

    ``spacing`` defaults to half the carrier wavelength.
    """

    n_antennas: int
    carrier: float
    spacing: float | None = None
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if int(self.n_antennas) != self.n_antennas or self.n_antennas < 2:
            raise ConfigurationError(f"n_antennas must be an integer >= 2, got {self.n_antennas}")
        if not self.carrier > 0:
            raise ConfigurationError(f"carrier must be positive, got {self.carrier}")
        if not self.speed_of_light > 0:
            raise ConfigurationError("speed_of_light must be positive")
        object.__setattr__(self, "n_antennas", int(self.n_antennas))
        if self.spacing is None:
            object.__setattr__(self, "spacing", self.wavelength / 2)
        elif not self.spacing > 0:
            raise ConfigurationError(f"spacing must be positive, got {self.spacing}")

    @property
    def wavelength(self) -> float:
        return self.speed_of_light / self.carrier

    @property
    def aperture(self) -> float:
        return (self.n_antennas - 1) * self.spacing

    @property
    def offsets(self) -> np.ndarray:
        """Element offsets ``(n - 1) * d`` in meters, shape (N,)."""
        return np.arange(self.n_antennas) * self.spacing


@dataclass(frozen=True)
class WidebandGrid:
    """Subcarrier plan symmetric about the carrier."""

    n_subcarriers: int
    bandwidth: float
    carrier: float
    frequencies: np.ndarray = field(init=False, repr=False, compare=False)
    ratios: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n_subcarriers) != self.n_subcarriers or self.n_subcarriers < 1:
            raise ConfigurationError(f"n_subcarriers must be >= 1, got {self.n_subcarriers}")
        if self.bandwidth < 0:
            raise ConfigurationError("bandwidth must be non-negative")
        if not self.carrier > 0:
            raise ConfigurationError("carrier must be positive")
        if self.bandwidth / 2 >= self.carrier:
            raise ConfigurationError("bandwidth must be smaller than twice the carrier")
        M = int(self.n_subcarriers)
        object.__setattr__(self, "n_subcarriers", M)
        freqs = np.array([
            subcarrier_frequency(m, M, self.bandwidth, self.carrier) for m in range(1, M + 1)
        ])
        freqs.setflags(write=False)
        ratios = self.carrier / freqs
        ratios.setflags(write=False)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "ratios", ratios)

    @classmethod
    def for_array(cls, cfg: ArrayConfig, n_subcarriers: int, bandwidth: float) -> "WidebandGrid":
        return cls(n_subcarriers, bandwidth, cfg.carrier)

    def __len__(self):
        return self.n_subcarriers


@dataclass(frozen=True)
class Target:
    """Physical target: directional sine, range in meters and optional
    per-subcarrier reflection coefficients."""

    direction: float
    range: float
    reflection: np.ndarray | None = None

    def __post_init__(self):
        if abs(self.direction) > 1:
            raise ValueError(f"direction must lie in [-1, 1], got {self.direction}")
        if not self.range > 0:
            raise ValueError(f"range must be positive, got {self.range}")


@dataclass(frozen=True)
class SquintedLocation:
    direction: float
    range: float
    delta_direction: float
    delta_range: float
    out_of_region: bool = False


@dataclass(frozen=True)
class SteeringVector:
    entries: np.ndarray
    curvature: float
    element_ranges: np.ndarray | None = None

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __len__(self):
        return len(self.entries)

    def to_json(self) -> str:
        return json.dumps({
            "entries": [[float(z.real), float(z.imag)] for z in self.entries],
            "curvature": float(self.curvature),
        })

    @classmethod
    def from_json(cls, text: str) -> "SteeringVector":
        data = json.loads(text)
        pairs = np.asarray(data["entries"], dtype=float)
        return cls(pairs[:, 0] + 1j * pairs[:, 1], data["curvature"])


def subcarrier_frequency(m: int, n_subcarriers: int, bandwidth: float, carrier: float) -> float:
    """Frequency of subcarrier ``m`` (1-based), spanning [f_c - B/2, f_c + B/2]."""
    if n_subcarriers < 1:
        raise ValueError("n_subcarriers must be >= 1")
    if not 1 <= m <= n_subcarriers:
        raise IndexError(f"subcarrier {m} outside 1..{n_subcarriers}")
    if n_subcarriers == 1:
        return float(carrier)
    return float(carrier + bandwidth * ((m - 1) / (n_subcarriers - 1) - 0.5))


def fraunhofer_distance(cfg: ArrayConfig) -> float:
    """2 D^2 / lambda with D = (N - 1) d."""
    return 2 * cfg.aperture**2 / cfg.wavelength


def _check_element(n, cfg):
    n = np.asarray(n)
    if np.any(n < 1) or np.any(n > cfg.n_antennas):
        raise IndexError(f"element index outside 1..{cfg.n_antennas}")
    return n


def element_range_exact(u: float, r: float, n, cfg: ArrayConfig, printed: bool = False):
    """Distance from a target at (u, r) to element ``n`` (scalar or array).

    The law of cosines gives a unit coefficient on ``(n-1)^2 d^2``; pass
    ``printed=True`` for the variant with coefficient 2.
    """
    n = _check_element(n, cfg)
    off = (n - 1) * cfg.spacing
    coef = 2.0 if printed else 1.0
    radicand = r**2 + coef * off**2 - 2 * r * off * u
    if np.any(radicand < 0):
        raise ValueError("negative radicand: geometrically invalid target/element pair")
    return np.sqrt(radicand)


def curvature(u, r):
    """Fresnel curvature term zeta = (1 - u^2) / (2 r)."""
    return (1 - np.square(u)) / (2 * np.asarray(r, dtype=float))


def element_range_fresnel(u: float, r: float, n, cfg: ArrayConfig):
    if r == 0:
        raise ZeroDivisionError("Fresnel expansion undefined at r = 0")
    n = _check_element(n, cfg)
    off = (n - 1) * cfg.spacing
    return r - off * u + off**2 * curvature(u, r)


def phase_profile(u, zeta, freq: float, cfg: ArrayConfig) -> np.ndarray:
    """Unit-norm steering entries without the global range phase.

    ``u`` and ``zeta`` broadcast together; the result has the element axis
    first, shape (N, *broadcast_shape).
    """
    u, zeta = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(zeta, dtype=float))
    k = 2 * np.pi * freq / cfg.speed_of_light
    off = cfg.offsets.reshape((-1,) + (1,) * u.ndim)
    phase = k * (off * u - off**2 * zeta)
    return np.exp(1j * phase) / np.sqrt(cfg.n_antennas)


def nearfield_steering(u: float, r: float, freq: float, cfg: ArrayConfig) -> SteeringVector:
    """Fresnel-model near-field steering vector at frequency ``freq``.

    Entry n is exp(-j k r) exp(j k ((n-1) d u - (n-1)^2 d^2 zeta)) / sqrt(N)
    with k = 2 pi f / c0.  Directions outside [-1, 1] are evaluated as-is (the
    squinted location can leave the visible region at band-edge subcarriers).
    """
    if not r > 0:
        raise ValueError(f"range must be positive, got {r}")
    if not freq > 0:
        raise ValueError(f"frequency must be positive, got {freq}")
    zeta = float(curvature(u, r))
    k = 2 * np.pi * freq / cfg.speed_of_light
    entries = np.exp(-1j * k * r) * phase_profile(u, zeta, freq, cfg)
    return SteeringVector(entries, zeta)


def farfield_steering(u: float, freq: float, cfg: ArrayConfig) -> SteeringVector:
    """Planar-wave steering vector, entry n = exp(j k (n-1) d u) / sqrt(N)."""
    return SteeringVector(phase_profile(u, 0.0, freq, cfg), 0.0)


def squint_map(u: float, r: float, eta: float) -> SquintedLocation:
    """Physical (u, r) to the squinted location seen at a subcarrier with ratio eta."""
    if abs(u) >= 1:
        raise SingularityError(f"squint range map is singular at |u| = 1 (u = {u})")
    if not r > 0:
        raise ValueError(f"range must be positive, got {r}")
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    u_bar = eta * u
    r_bar = r * (1 - eta**2 * u**2) / (eta * (1 - u**2))
    return SquintedLocation(u_bar, r_bar, u_bar - u, r_bar - r, out_of_region=abs(u_bar) > 1)


def squinted_curvature(u, r, eta):
    """Curvature at the squinted location; equals eta * zeta(u, r), including
    the endfire limit where the squinted range diverges."""
    return eta * curvature(u, r)


def spatial_steering(u: float, r: float, eta: float, cfg: ArrayConfig,
                     freq: float | None = None) -> SteeringVector:
    """Steering vector at the squinted location of (u, r).

    The phase factor is evaluated at the carrier unless ``freq`` is given.
    Evaluating it at the subcarrier frequency itself reproduces the physical
    steering at the carrier (ratio eta cancels), i.e. no squint at all.
    Built from the squinted curvature eta * zeta so that locations pushed
    outside |u_bar| <= 1 (where r_bar turns negative) stay well defined.
    """
    loc = squint_map(u, r, eta)
    freq = cfg.carrier if freq is None else freq
    zeta = float(squinted_curvature(u, r, eta))
    k = 2 * np.pi * freq / cfg.speed_of_light
    entries = np.exp(-1j * k * loc.range) * phase_profile(loc.direction, zeta, freq, cfg)
    return SteeringVector(entries, zeta)


def array_gain(ref, probe) -> float:
    """|ref^H probe|."""
    ref = np.asarray(ref)
    probe = np.asarray(probe)
    if ref.shape != probe.shape:
        raise ValueError(f"dimension mismatch: {ref.shape} vs {probe.shape}")
    return float(abs(np.vdot(ref, probe)))
