"""Global-frame geometry, clock errors and random scenario generation.

All positions are 2D, in meters, expressed in one global frame shared by every
sensor. Sensors and targets are addressed by their index in ``Scene.sensors`` /
``Scene.targets``; the ``id`` field of a sensor is a label (used in file names).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

C_LIGHT = 2.9979e8  # m/s


class FeasibilityError(ValueError):
    """Raised when a scenario request cannot be satisfied."""


@dataclass(frozen=True)
class ClockModel:
    """Per-sensor clock error: time offset, normalized frequency offset, carrier phase."""

    kappa: float = 0.0
    beta: float = 0.0
    alpha: float = 0.0

    @classmethod
    def from_kappa(cls, kappa: float, beta: float, carrier: float) -> "ClockModel":
        """Clock whose carrier phase offset follows its time offset, alpha = 2*pi*f*kappa."""
        return cls(kappa=kappa, beta=beta, alpha=2.0 * np.pi * carrier * kappa)


def pair_offsets(tx: ClockModel, rx: ClockModel) -> tuple[float, float, float]:
    """Pairwise offsets (kappa_nm, beta_nm, alpha_nm) for a Tx/Rx clock pair.

    kappa_nm = kappa_n - kappa_m, alpha_nm = alpha_n - alpha_m and
    beta_nm = beta_m - beta_n. All vanish when a clock is paired with itself.
    """
    return tx.kappa - rx.kappa, rx.beta - tx.beta, tx.alpha - rx.alpha


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Sensor:
    id: int
    phase_center: np.ndarray
    orientation: float
    element_offsets: np.ndarray
    carrier: float
    bandwidth: float
    clock: ClockModel = field(default_factory=ClockModel)

    def __post_init__(self):
        center = np.asarray(self.phase_center, dtype=float).reshape(2)
        offsets = np.asarray(self.element_offsets, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "phase_center", center)
        object.__setattr__(self, "element_offsets", offsets)
        if len(offsets) == 0:
            raise ValueError("sensor needs at least one element")
        if not (self.carrier > 0 and self.bandwidth > 0):
            raise ValueError("carrier and bandwidth must be positive")
        if self.bandwidth >= self.carrier:
            raise ValueError("bandwidth must be below the carrier")

    @property
    def n_elements(self) -> int:
        return len(self.element_offsets)

    @property
    def band(self) -> tuple[float, float]:
        return self.carrier - self.bandwidth / 2, self.carrier + self.bandwidth / 2

    def moved(self, phase_center=None, orientation=None) -> "Sensor":
        """Copy with a different phase center and/or orientation."""
        return replace(
            self,
            phase_center=self.phase_center if phase_center is None else phase_center,
            orientation=self.orientation if orientation is None else orientation,
        )


@dataclass(frozen=True)
class Target:
    position: np.ndarray
    magnitude: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        if self.magnitude < 0:
            raise ValueError("target magnitude must be non-negative")
        if not (-np.pi <= self.phase < np.pi):
            raise ValueError("target phase must lie in [-pi, pi)")


@dataclass(frozen=True)
class Scene:
    sensors: tuple[Sensor, ...]
    targets: tuple[Target, ...]
    noise_psd: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "targets", tuple(self.targets))
        if len(self.sensors) < 1 or len(self.targets) < 1:
            raise ValueError("a scene needs at least one sensor and one target")
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ValueError("sensor ids must be unique")
        if self.noise_psd < 0:
            raise ValueError("noise_psd must be non-negative")
        bands = sorted(s.band for s in self.sensors)
        for (_, hi), (lo, _) in zip(bands, bands[1:]):
            if lo < hi:
                raise ValueError("sensor bands overlap (FDM requires disjoint bands)")

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @property
    def target_positions(self) -> np.ndarray:
        return np.array([t.position for t in self.targets])

    @property
    def carriers(self) -> np.ndarray:
        return np.array([s.carrier for s in self.sensors])

    def with_targets(self, targets) -> "Scene":
        return replace(self, targets=tuple(targets))

    def with_sensors(self, sensors) -> "Scene":
        return replace(self, sensors=tuple(sensors))


def tof(tx_element, rx_element, point, wave_speed: float = C_LIGHT):
    """Two-way time of flight tx -> point -> rx. Broadcasts over leading axes."""
    if wave_speed <= 0:
        raise ValueError("wave_speed must be positive")
    tx = np.asarray(tx_element, dtype=float)
    rx = np.asarray(rx_element, dtype=float)
    p = np.asarray(point, dtype=float)
    d = np.linalg.norm(p - tx, axis=-1) + np.linalg.norm(rx - p, axis=-1)
    return d / wave_speed


def apparent_tof(tof_s, tx_clock: ClockModel, pair_kappa: float):
    """Delay at which an echo shows up in the Rx clock: (1 + beta_n) tof + kappa_nm."""
    return (1.0 + tx_clock.beta) * np.asarray(tof_s) + pair_kappa


def element_positions(sensor: Sensor) -> np.ndarray:
    """Global positions of a sensor's elements, shape (n_elements, 2)."""
    return sensor.phase_center + sensor.element_offsets @ rotation(sensor.orientation).T


def linear_aperture(n_elements: int, length: float) -> np.ndarray:
    """Element offsets of a uniform linear array along local x, centered on the phase center."""
    if n_elements == 1:
        return np.zeros((1, 2))
    xs = np.linspace(-length / 2, length / 2, n_elements)
    return np.column_stack([xs, np.zeros(n_elements)])


def fdm_carriers(n: int, center: float, bandwidth: float) -> np.ndarray:
    """Contiguous, non-overlapping carriers centered on ``center``."""
    return center + (np.arange(n) - (n - 1) / 2) * bandwidth


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs for :func:`random_scenario`.

    Vehicles sit on a lane at ``lane_y`` with x drawn in
    ``[-x_span/2, x_span/2] + x_center``; targets are uniform in a rectangle of
    ``target_x_span`` by ``target_y_span`` centered on ``target_center``.
    """

    n_sensors: int = 5
    x_span: float = 50.0
    x_center: float = 0.0
    min_spacing: float = 7.0
    lane_y: float = -10.0
    orientation: float = 0.0
    n_targets: int = 5
    target_x_span: float = 40.0
    target_y_span: float = 10.0
    target_center: tuple[float, float] = (0.0, 0.0)
    target_magnitude: float = 1.0
    random_target_phase: bool = True
    min_target_spacing: float = 0.0  # meters between any two targets (0: unconstrained)
    carrier: float = 77e9
    bandwidth: float = 100e6
    n_elements: int = 1
    aperture: float = 0.0
    kappa_max: float = 0.0
    beta_max: float = 0.0
    noise_psd: float = 0.0
    max_attempts: int = 100_000


def _sample_spaced(rng: np.random.Generator, n: int, span: float, min_spacing: float, max_attempts: int):
    batch = 512
    tried = 0
    while tried < max_attempts:
        m = min(batch, max_attempts - tried)
        draws = rng.uniform(0.0, span, size=(m, n))
        tried += m
        if n == 1:
            return draws[0]
        gaps = np.diff(np.sort(draws, axis=1), axis=1).min(axis=1)
        ok = np.flatnonzero(gaps >= min_spacing)
        if ok.size:
            return draws[ok[0]]
    raise FeasibilityError(
        f"could not place {n} vehicles {min_spacing} m apart within {span} m "
        f"after {max_attempts} attempts"
    )


def _spaced_targets(rng, p: ScenarioParams, tx, ty):
    """Redraw targets one at a time until all are ``min_target_spacing`` apart."""
    cx, cy = p.target_center
    pts = []
    tried = 0
    for q in range(p.n_targets):
        cand = np.array([tx[q], ty[q]])
        while any(np.hypot(*(cand - o)) < p.min_target_spacing for o in pts):
            tried += 1
            if tried > p.max_attempts:
                raise FeasibilityError(
                    f"could not place {p.n_targets} targets {p.min_target_spacing} m apart after {p.max_attempts} attempts"
                )
            cand = np.array([
                rng.uniform(cx - p.target_x_span / 2, cx + p.target_x_span / 2),
                rng.uniform(cy - p.target_y_span / 2, cy + p.target_y_span / 2),
            ])
        pts.append(cand)
    pts = np.array(pts)
    return pts[:, 0], pts[:, 1]


def random_scenario(rng_seed: int, params: ScenarioParams = ScenarioParams()) -> Scene:
    """Draw a random vehicular scene; identical output for identical (seed, params)."""
    p = params
    if p.n_sensors * p.min_spacing > p.x_span:
        raise FeasibilityError(
            f"{p.n_sensors} vehicles need {p.n_sensors * p.min_spacing} m > span {p.x_span} m"
        )
    rng = np.random.default_rng(rng_seed)
    xs = _sample_spaced(rng, p.n_sensors, p.x_span, p.min_spacing, p.max_attempts)
    xs = xs - p.x_span / 2 + p.x_center
    carriers = fdm_carriers(p.n_sensors, p.carrier, p.bandwidth)
    offsets = linear_aperture(p.n_elements, p.aperture)
    sensors = []
    for i, (x, f) in enumerate(zip(xs, carriers)):
        kappa = rng.uniform(-p.kappa_max, p.kappa_max) if p.kappa_max else 0.0
        beta = rng.uniform(-p.beta_max, p.beta_max) if p.beta_max else 0.0
        sensors.append(
            Sensor(
                id=i,
                phase_center=np.array([x, p.lane_y]),
                orientation=p.orientation,
                element_offsets=offsets,
                carrier=f,
                bandwidth=p.bandwidth,
                clock=ClockModel.from_kappa(kappa, beta, f),
            )
        )
    cx, cy = p.target_center
    tx = rng.uniform(cx - p.target_x_span / 2, cx + p.target_x_span / 2, p.n_targets)
    ty = rng.uniform(cy - p.target_y_span / 2, cy + p.target_y_span / 2, p.n_targets)
    if p.min_target_spacing > 0:
        tx, ty = _spaced_targets(rng, p, tx, ty)
    if p.random_target_phase:
        phases = rng.uniform(-np.pi, np.pi, p.n_targets)
    else:
        phases = np.zeros(p.n_targets)
    targets = [Target(np.array([a, b]), p.target_magnitude, th) for a, b, th in zip(tx, ty, phases)]
    return Scene(tuple(sensors), tuple(targets), p.noise_psd)
