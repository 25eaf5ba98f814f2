"""Topology, large-scale path loss and first-order Gauss-Markov small-scale fading.

Every link coefficient is ``sqrt(large) * small`` where the large-scale part is
fixed by node distances and the small-scale part follows

    x(t) = rho * x(t-1) + e(t),    e(t) ~ CN(0, 1 - rho**2)

Random draws always happen in the order h (BS->user), f (BS->device),
g (device->user), so a seeded run replays exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DomainError

# Device-to-user distance floor, avoids the log singularity for coincident nodes.
MIN_LINK_DIST_M = 1.0


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def loss_db_to_gain(loss_db):
    """Convert a path loss in dB to a linear power gain."""
    return 10.0 ** (-np.asarray(loss_db, dtype=float) / 10.0)


def path_loss_db(freq_mhz, dist_km, gt_db=0.0, gr_db=0.0):
    """Free-space style path loss ``32.45 + 20log10(f) + 20log10(d) - Gt - Gr``.

    ``freq_mhz`` in MHz, ``dist_km`` in km (scalar or array). Returns dB.
    """
    freq = np.asarray(freq_mhz, dtype=float)
    dist = np.asarray(dist_km, dtype=float)
    if np.any(freq <= 0) or np.any(dist <= 0):
        raise DomainError("frequency and distance must be positive")
    loss = 32.45 + 20.0 * np.log10(freq) + 20.0 * np.log10(dist) - gt_db - gr_db
    return float(loss) if np.ndim(loss) == 0 else loss


@dataclass(frozen=True)
class TopologyConfig:
    num_users: int
    num_devices: int
    region_side: float = 100.0  # only locates the BS at the region centre by default
    bs_position: Optional[tuple] = None
    min_dist: float = 10.0
    max_dist: float = 100.0
    carrier_freq_mhz: float = 2400.0
    tx_gain_db: float = 2.5
    rx_gain_db: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if self.num_users < 1 or self.num_devices < 1:
            raise DomainError("need at least one user and one device")
        if not 0 < self.min_dist < self.max_dist:
            raise DomainError("require 0 < min_dist < max_dist")

    @property
    def bs(self) -> np.ndarray:
        if self.bs_position is None:
            return np.array([self.region_side / 2.0, self.region_side / 2.0])
        return np.asarray(self.bs_position, dtype=float)

    def gain_from_distance(self, dist_m):
        """Linear path gain for a distance in metres, using this config's antennas."""
        dist_km = np.maximum(np.asarray(dist_m, dtype=float), MIN_LINK_DIST_M) / 1000.0
        return loss_db_to_gain(
            path_loss_db(self.carrier_freq_mhz, dist_km, self.tx_gain_db, self.rx_gain_db)
        )


@dataclass
class Positions:
    bs: np.ndarray
    users: np.ndarray  # (M, 2) metres
    devices: np.ndarray  # (N, 2) metres


@dataclass
class LargeScaleGains:
    user: np.ndarray  # (M,) BS -> user
    device: np.ndarray  # (N,) BS -> device
    link: np.ndarray  # (M, N) device -> user


@dataclass
class SmallScaleState:
    h: np.ndarray  # (M,) complex
    f: np.ndarray  # (N,) complex
    g: np.ndarray  # (M, N) complex
    rho: float
    frame_index: int = 0


@dataclass
class ChannelState:
    large: LargeScaleGains
    small: SmallScaleState

    @property
    def h(self):
        return np.sqrt(self.large.user) * self.small.h

    @property
    def f(self):
        return np.sqrt(self.large.device) * self.small.f

    @property
    def g(self):
        return np.sqrt(self.large.link) * self.small.g


def complex_gaussian(rng, shape, variance=1.0):
    """Circularly-symmetric complex Gaussian samples with the given total variance."""
    parts = rng.normal(0.0, np.sqrt(variance / 2.0), size=tuple(np.atleast_1d(shape)) + (2,))
    return parts[..., 0] + 1j * parts[..., 1]


def sample_positions(config: TopologyConfig, count: int, rng) -> np.ndarray:
    """Uniform points in the annulus ``min_dist <= d <= max_dist`` around the BS.

    Draws uniformly in the annulus's bounding square and rejects misses.
    """
    bs = config.bs
    lo = bs - config.max_dist
    side = 2.0 * config.max_dist
    out = np.empty((count, 2))
    filled = 0
    while filled < count:
        pts = lo + side * rng.random((count, 2))
        d = np.linalg.norm(pts - bs, axis=1)
        ok = pts[(d >= config.min_dist) & (d <= config.max_dist)]
        take = min(len(ok), count - filled)
        out[filled:filled + take] = ok[:take]
        filled += take
    return out


def large_scale_gains(config: TopologyConfig, pos: Positions) -> LargeScaleGains:
    d_user = np.linalg.norm(pos.users - pos.bs, axis=1)
    d_dev = np.linalg.norm(pos.devices - pos.bs, axis=1)
    d_link = np.linalg.norm(pos.users[:, None, :] - pos.devices[None, :, :], axis=2)
    return LargeScaleGains(
        user=np.atleast_1d(config.gain_from_distance(d_user)),
        device=np.atleast_1d(config.gain_from_distance(d_dev)),
        link=np.atleast_2d(config.gain_from_distance(d_link)),
    )


def sample_topology(config: TopologyConfig, rng=None):
    """Place users then devices and compute their large-scale gains.

    With ``rng=None`` a generator is seeded from ``config.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    users = sample_positions(config, config.num_users, rng)
    devices = sample_positions(config, config.num_devices, rng)
    pos = Positions(bs=config.bs, users=users, devices=devices)
    return pos, large_scale_gains(config, pos)


def _check_rho(rho):
    if not 0.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [0, 1], got {rho}")


def init_small_scale(num_users, num_devices, rho, rng) -> SmallScaleState:
    _check_rho(rho)
    if num_users < 1 or num_devices < 1:
        raise DomainError("need at least one user and one device")
    return SmallScaleState(
        h=complex_gaussian(rng, num_users),
        f=complex_gaussian(rng, num_devices),
        g=complex_gaussian(rng, (num_users, num_devices)),
        rho=float(rho),
        frame_index=0,
    )


def evolve_small_scale(state: SmallScaleState, rng) -> SmallScaleState:
    """One frame of the Gauss-Markov recursion applied to every link."""
    rho = state.rho
    var = 1.0 - rho * rho
    return SmallScaleState(
        h=rho * state.h + complex_gaussian(rng, state.h.shape, var),
        f=rho * state.f + complex_gaussian(rng, state.f.shape, var),
        g=rho * state.g + complex_gaussian(rng, state.g.shape, var),
        rho=rho,
        frame_index=state.frame_index + 1,
    )


@dataclass
class Channel:
    """A live channel process: fixed topology plus evolving small-scale fading.

    ``topology_rng`` only serves node placement (initial and on resize);
    ``fading_rng`` only serves small-scale draws.
    """

    config: TopologyConfig
    rho: float
    topology_rng: np.random.Generator
    fading_rng: np.random.Generator
    positions: Positions = field(init=False)
    state: ChannelState = field(init=False)

    def __post_init__(self):
        self.positions, large = sample_topology(self.config, self.topology_rng)
        small = init_small_scale(self.config.num_users, self.config.num_devices, self.rho, self.fading_rng)
        self.state = ChannelState(large, small)

    @classmethod
    def from_seed(cls, config: TopologyConfig, rho: float, seed=None):
        ss = np.random.SeedSequence(config.seed if seed is None else seed)
        topo, fading = ss.spawn(2)
        return cls(config, rho, np.random.default_rng(topo), np.random.default_rng(fading))

    @property
    def num_users(self):
        return self.config.num_users

    @property
    def num_devices(self):
        return self.config.num_devices

    def advance(self) -> ChannelState:
        self.state = ChannelState(self.state.large, evolve_small_scale(self.state.small, self.fading_rng))
        return self.state

    def resize_devices(self, new_n: int):
        """Drop trailing devices or append freshly placed ones; users are untouched."""
        old_n = self.config.num_devices
        if new_n < 1:
            raise DomainError("need at least one device")
        if new_n == old_n:
            return
        small = self.state.small
        if new_n < old_n:
            devices = self.positions.devices[:new_n]
            f, g = small.f[:new_n], small.g[:, :new_n]
        else:
            extra = new_n - old_n
            devices = np.vstack([self.positions.devices, sample_positions(self.config, extra, self.topology_rng)])
            f = np.concatenate([small.f, complex_gaussian(self.fading_rng, extra)])
            g = np.hstack([small.g, complex_gaussian(self.fading_rng, (self.num_users, extra))])
        self.config = replace(self.config, num_devices=new_n)
        self.positions = Positions(self.positions.bs, self.positions.users, devices)
        large = large_scale_gains(self.config, self.positions)
        self.state = ChannelState(
            large, SmallScaleState(small.h, f, g, small.rho, small.frame_index)
        )
