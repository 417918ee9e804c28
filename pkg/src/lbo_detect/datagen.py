"""Synthetic quasi-static protocols that degrade monotonically toward blowout.

Each record is a narrowband acoustic tone with a jittered phase, plus
intermittent decaying burst packets and white measurement noise::

    x(t) = A(s) * sin(2 pi f t + jitter(t)) + bursts(t) + noise(t)

with severity ``s = clip((phi_t - phi) / (phi_t - 1), 0, 1)`` where ``phi_t``
is the protocol's transition ratio.  Severity lowers the tone amplitude,
switches on Poisson bursts and raises the noise floor.

Severity is identically zero on the healthy side, so the phase jitter carries
the ordering there.  It has two parts:

* a random-walk phase diffusion whose step size shrinks with ``phi`` (and
  with lower air flow), making the dynamics less irregular away from blowout;
* a deterministic phase modulation at ``f / 3`` whose index grows linearly
  from zero at blowout, scaled so that it reaches the same value at every
  protocol's own transition ratio.  The modulation keeps the orbit
  closed, so it barely moves the translational error, but it changes the
  waveform away from what a predictor trained at ``phi = 1`` has seen.

Both parts also depend on air flow through ``q = 90 / air_flow``: lower air
flow diffuses less and modulates slightly more, so it looks healthier at the
same ``phi``.  The air term on the modulation is mild (``q ** 0.65``) so that
no record crosses the reference transition's level on the wrong side.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigInvalid
from .series import (
    RATIO_ATOL,
    Protocol,
    QuasiStaticRecord,
    TimeSeries,
    expected_label,
)

REFERENCE_AIR_FLOW = 90.0

# Grids and air flows of the five experimental protocols.  The transition of
# each protocol is its first grid point above the annotated bifurcation at
# phi/phi_LBO = 1.38.
PROTOCOL_GRIDS = {
    "90slpm": (90.0, (1, 1.142, 1.214, 1.285, 1.357, 1.428, 1.500, 1.571, 1.642, 1.714, 1.785)),
    "70slpm": (70.0, (1, 1.076, 1.153, 1.23, 1.307, 1.384, 1.461, 1.538, 1.615, 1.692, 1.769)),
    "75slpm": (75.0, (1, 1.071, 1.143, 1.214, 1.285, 1.357, 1.428, 1.5, 1.571, 1.643, 1.714, 1.785)),
    "80slpm": (80.0, (1, 1.066, 1.133, 1.2, 1.266, 1.33, 1.4, 1.466, 1.533, 1.6, 1.67)),
    "85slpm": (85.0, (1, 1.071, 1.143, 1.214, 1.285, 1.357, 1.428, 1.5, 1.571, 1.643, 1.714, 1.785)),
}
REFERENCE_PROTOCOL = "90slpm"
TEST_PROTOCOLS = ("70slpm", "75slpm", "80slpm", "85slpm")
ANNOTATED_TRANSITION = 1.38


def transition_for_grid(grid: Sequence[float], annotated: float = ANNOTATED_TRANSITION) -> float:
    """First grid point strictly above the annotated bifurcation ratio."""
    for phi in grid:
        if phi > annotated:
            return float(phi)
    raise ConfigInvalid(f"no grid point above {annotated}")


@dataclass(frozen=True)
class SynthConfig:
    name: str = REFERENCE_PROTOCOL
    air_flow_slpm: float = REFERENCE_AIR_FLOW
    sample_rate_hz: float = 2000.0
    samples_per_record: int = 20_000
    base_freq_hz: float = 120.0
    phi_grid: Tuple[float, ...] = PROTOCOL_GRIDS[REFERENCE_PROTOCOL][1]
    transition_ratio: float = 1.428
    burst_rate_at_lbo: float = 4.0
    noise_floor: float = 0.002
    seed: int = 0
    # Per-sample phase-diffusion step (radians) at phi = 1, reference air flow.
    diffusion_rad: float = 0.05
    diffusion_phi_exponent: float = 3.0
    diffusion_air_exponent: float = 2.0
    # Fraction of the diffusion step removed at blowout (severity 1).
    diffusion_severity_drop: float = 0.3
    # Phase-modulation index reached at the transition ratio, and its cap.
    pm_index: float = 0.5136
    pm_index_max: float = 1.0
    pm_air_exponent: float = 0.65
    burst_amplitude: float = 0.6
    burst_freq_range_hz: Tuple[float, float] = (20.0, 80.0)
    burst_decay_range_s: Tuple[float, float] = (0.03, 0.08)

    def __post_init__(self):
        object.__setattr__(self, "phi_grid", tuple(float(p) for p in self.phi_grid))
        for key in ("burst_freq_range_hz", "burst_decay_range_s"):
            object.__setattr__(self, key, tuple(float(v) for v in getattr(self, key)))
        self.validate()

    def validate(self) -> None:
        grid = self.phi_grid
        if not grid or grid[0] != 1.0:
            raise ConfigInvalid("phi_grid must start at 1")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigInvalid("phi_grid must be strictly increasing")
        if not any(abs(p - self.transition_ratio) <= RATIO_ATOL for p in grid):
            raise ConfigInvalid("transition_ratio must be a grid point")
        if self.transition_ratio <= 1.0:
            raise ConfigInvalid("transition_ratio must exceed 1")
        positive = {
            "air_flow_slpm": self.air_flow_slpm,
            "sample_rate_hz": self.sample_rate_hz,
            "samples_per_record": self.samples_per_record,
            "base_freq_hz": self.base_freq_hz,
            "burst_rate_at_lbo": self.burst_rate_at_lbo,
            "noise_floor": self.noise_floor,
            "burst_amplitude": self.burst_amplitude,
        }
        for key, value in positive.items():
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigInvalid(f"{key} must be positive, got {value!r}")
        for key in ("burst_freq_range_hz", "burst_decay_range_s"):
            lo_hi = getattr(self, key)
            if len(lo_hi) != 2 or not 0 < lo_hi[0] <= lo_hi[1]:
                raise ConfigInvalid(f"{key} must be (low, high) with 0 < low <= high")
        for key in ("diffusion_rad", "pm_index", "pm_index_max"):
            if not getattr(self, key) >= 0:
                raise ConfigInvalid(f"{key} must be non-negative")
        if not 0.0 <= self.diffusion_severity_drop < 1.0:
            raise ConfigInvalid("diffusion_severity_drop must lie in [0, 1)")
        if self.base_freq_hz >= self.sample_rate_hz / 2:
            raise ConfigInvalid("base_freq_hz must be below Nyquist")
        if self.burst_freq_range_hz[1] >= self.sample_rate_hz / 2:
            raise ConfigInvalid("burst frequencies must be below Nyquist")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("phi_grid", "burst_freq_range_hz", "burst_decay_range_s"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


def severity(phi_ratio: float, transition_ratio: float) -> float:
    s = (transition_ratio - phi_ratio) / (transition_ratio - 1.0)
    return float(min(1.0, max(0.0, s)))


def tone_amplitude(s: float) -> float:
    return 1.0 - 0.5 * s


def noise_sigma(config: SynthConfig, s: float) -> float:
    return config.noise_floor * (1.0 + 2.0 * s)


def air_factor(config: SynthConfig) -> float:
    return REFERENCE_AIR_FLOW / config.air_flow_slpm


def diffusion_step(config: SynthConfig, phi_ratio: float, s: float) -> float:
    """Standard deviation of the per-sample phase random-walk increment."""
    return (
        config.diffusion_rad
        * (1.0 - config.diffusion_severity_drop * s)
        * phi_ratio ** -config.diffusion_phi_exponent
        * air_factor(config) ** -config.diffusion_air_exponent
    )


def pm_depth(config: SynthConfig, phi_ratio: float) -> float:
    """Phase-modulation index; zero at blowout, linear in phi.

    Progress is measured against the protocol's own transition, so every
    protocol reaches ``pm_index`` (times the air term) at its transition.
    """
    progress = (phi_ratio - 1.0) / (config.transition_ratio - 1.0)
    beta = config.pm_index * progress * air_factor(config) ** config.pm_air_exponent
    return min(beta, config.pm_index_max)


def pm_freq_hz(config: SynthConfig) -> float:
    return config.base_freq_hz / 3.0


def record_seed(seed: int, phi_ratio: float) -> int:
    """Stable 63-bit sub-seed for one grid point."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(round(phi_ratio * 1_000_000))])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def burst_onsets(config: SynthConfig, s: float, rng: np.random.Generator) -> np.ndarray:
    duration = config.samples_per_record / config.sample_rate_hz
    count = rng.poisson(s * config.burst_rate_at_lbo * duration) if s > 0 else 0
    return np.sort(rng.uniform(0.0, duration, size=count))


def synth_record(config: SynthConfig, phi_ratio: float, sub_seed: Optional[int] = None) -> QuasiStaticRecord:
    if not any(abs(phi_ratio - p) <= RATIO_ATOL for p in config.phi_grid):
        raise ConfigInvalid(f"phi_ratio {phi_ratio} is not on the config grid")
    if sub_seed is None:
        sub_seed = record_seed(config.seed, phi_ratio)
    rng = np.random.default_rng(sub_seed)
    n = int(config.samples_per_record)
    fs = config.sample_rate_hz
    t = np.arange(n) / fs
    s = severity(phi_ratio, config.transition_ratio)

    phase0, pm_phase = rng.uniform(0.0, 2 * math.pi, size=2)
    jitter = pm_depth(config, phi_ratio) * np.sin(2 * math.pi * pm_freq_hz(config) * t + pm_phase)
    jitter += np.cumsum(rng.normal(0.0, diffusion_step(config, phi_ratio, s), size=n))
    x = tone_amplitude(s) * np.sin(2 * math.pi * config.base_freq_hz * t + phase0 + jitter)

    for t0 in burst_onsets(config, s, rng):
        amp = config.burst_amplitude * rng.uniform(0.6, 1.0) * rng.choice((-1.0, 1.0))
        freq = rng.uniform(*config.burst_freq_range_hz)
        decay = rng.uniform(*config.burst_decay_range_s)
        start = int(math.ceil(t0 * fs))
        tau = t[start:] - t0
        x[start:] += amp * np.exp(-tau / decay) * np.sin(2 * math.pi * freq * tau)

    x += rng.normal(0.0, noise_sigma(config, s), size=n)
    label = expected_label(phi_ratio, config.transition_ratio)
    return QuasiStaticRecord(float(phi_ratio), TimeSeries(x, fs), label)


def synth_protocol(config: SynthConfig) -> Protocol:
    records = [synth_record(config, phi) for phi in config.phi_grid]
    return Protocol(config.name, config.air_flow_slpm, tuple(records), config.transition_ratio)


def protocol_configs(base: SynthConfig = SynthConfig()) -> dict:
    """One config per experimental protocol, reference first.

    Protocol ``i`` gets seed ``base.seed + i`` so that shared grid points of
    different protocols are independent realizations.
    """
    out = {}
    for i, name in enumerate((REFERENCE_PROTOCOL,) + TEST_PROTOCOLS):
        air, grid = PROTOCOL_GRIDS[name]
        out[name] = replace(
            base,
            name=name,
            air_flow_slpm=air,
            phi_grid=tuple(float(g) for g in grid),
            transition_ratio=transition_for_grid(grid),
            seed=base.seed + i,
        )
    return out
