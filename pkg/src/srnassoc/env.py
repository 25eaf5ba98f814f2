"""Backscatter link gains, SIC-ordered SINR, rates, rewards and agent observations.

Link gains are kept as a plain ``(M, N)`` float array ``h`` with
``h[m, n] = |alpha_n|^2 |f_n|^2 |g_mn|^2``. Associations are stored as one
0-based user index per device.

Within one user's device set the receiver decodes strongest first, so the
devices *weaker* than ``n`` are the ones that interfere with ``n``. Equal gains
are ordered by device index, the lower index counting as stronger.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelState, LargeScaleGains, dbm_to_watts
from .errors import ContractError


@dataclass(frozen=True)
class SystemParams:
    tx_power: float  # watts
    noise: float  # watts
    alpha: object = 0.8  # scalar or per-device reflection coefficients
    spreading: int = 50

    def __post_init__(self):
        if self.tx_power <= 0 or self.noise <= 0:
            raise ContractError("tx_power and noise must be positive")
        a = np.abs(np.asarray(self.alpha))
        if np.any(a <= 0) or np.any(a > 1):
            raise ContractError("reflection coefficient magnitude must lie in (0, 1]")
        if self.spreading < 1:
            raise ContractError("spreading factor must be >= 1")

    @classmethod
    def from_dbm(cls, tx_power_dbm=40.0, noise_dbm=-114.0, alpha=0.8, spreading=50):
        return cls(dbm_to_watts(tx_power_dbm), dbm_to_watts(noise_dbm), alpha, spreading)

    def alpha_sq(self, num_devices):
        return np.broadcast_to(np.abs(np.asarray(self.alpha, dtype=complex)) ** 2, (num_devices,))


class Association:
    """One cellular user per IoT device.

    ``users[n]`` is the 0-based user serving device ``n``; ``matrix`` gives the
    equivalent binary ``(M, N)`` indicator with unit column sums.
    """

    __slots__ = ("users", "num_users")

    def __init__(self, users, num_users):
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        if users.size and (users.min() < 0 or users.max() >= num_users):
            raise ContractError(f"user index out of range for M={num_users}: {users}")
        self.users = users
        self.num_users = int(num_users)

    @classmethod
    def from_matrix(cls, a):
        a = np.asarray(a)
        if a.ndim != 2 or not np.isin(a, (0, 1)).all():
            raise ContractError("association must be a binary M x N matrix")
        if not (a.sum(axis=0) == 1).all():
            raise ContractError(f"every device needs exactly one user, column sums {a.sum(axis=0)}")
        return cls(a.argmax(axis=0), a.shape[0])

    @property
    def num_devices(self):
        return self.users.size

    @property
    def matrix(self):
        a = np.zeros((self.num_users, self.num_devices), dtype=np.int64)
        a[self.users, np.arange(self.num_devices)] = 1
        return a

    def labels(self):
        """1-based user labels ``(b_1, ..., b_N)``."""
        return tuple(int(u) + 1 for u in self.users)

    def __eq__(self, other):
        return (
            isinstance(other, Association)
            and self.num_users == other.num_users
            and np.array_equal(self.users, other.users)
        )

    def __repr__(self):
        return f"Association(users={self.users.tolist()}, M={self.num_users})"


def as_association(assoc):
    if isinstance(assoc, Association):
        return assoc
    return Association.from_matrix(assoc)


def link_gain(alpha, f, g) -> np.ndarray:
    """``|alpha_n|^2 |f_n|^2 |g_mn|^2`` for complex ``f`` (N,) and ``g`` (M, N).

    Unlike ``SystemParams`` this accepts ``alpha = 0`` (a silent device).
    """
    g2 = np.abs(np.atleast_2d(g)) ** 2
    f2 = np.abs(np.asarray(f)) ** 2
    a2 = np.broadcast_to(np.abs(np.asarray(alpha, dtype=complex)) ** 2, f2.shape)
    return (a2 * f2)[None, :] * g2


def backscatter_gain(channel: ChannelState, params: SystemParams) -> np.ndarray:
    return link_gain(params.alpha, channel.f, channel.g)


def _ordering(h, users):
    """Per-device own gain plus weaker/stronger same-user masks.

    Works on a leading batch of associations: ``users`` may be ``(..., N)``.
    ``H[..., n, l]`` is device ``l``'s gain at device ``n``'s user.
    """
    n_dev = h.shape[1]
    H = h[users]
    idx = np.arange(n_dev)
    own = H[..., idx, idx]
    same = users[..., :, None] == users[..., None, :]
    own_col = own[..., :, None]
    weaker = same & ((H < own_col) | ((H == own_col) & (idx[None, :] > idx[:, None])))
    stronger = same & ~weaker & (idx[None, :] != idx[:, None])
    return H, own, weaker, stronger


def _rates_from(own, interference_h, params):
    kp = params.spreading * params.tx_power
    sinr = kp * own / (kp * interference_h + params.noise)
    return sinr, np.log2(1.0 + sinr) / params.spreading


def batch_sum_rates(h, users_batch, params) -> np.ndarray:
    """Sum rate for each row of ``users_batch`` (shape ``(A, N)``) on gains ``h``."""
    H, own, weaker, _ = _ordering(h, np.asarray(users_batch))
    _, r = _rates_from(own, (weaker * H).sum(axis=-1), params)
    return r.sum(axis=-1)


def interference_sets(gains, assoc, n, m):
    """Devices on user ``m`` weaker than ``n`` (interferers) and stronger (interfered)."""
    assoc = as_association(assoc)
    if assoc.users[n] != m:
        raise ContractError(f"device {n} is not associated with user {m}")
    _, _, weaker, stronger = _ordering(np.asarray(gains), assoc.users)
    return set(np.flatnonzero(weaker[n]).tolist()), set(np.flatnonzero(stronger[n]).tolist())


def sinr(gains, assoc, params, m, n) -> float:
    """SINR of device ``n`` at user ``m``, term by term."""
    assoc = as_association(assoc)
    a = assoc.matrix
    if a[m, n] == 0:
        return 0.0
    kp = params.spreading * params.tx_power
    interference = 0.0
    if assoc.users[n] == m:
        weaker, _ = interference_sets(gains, assoc, n, m)
        interference = sum(a[m, l] * kp * gains[m, l] for l in sorted(weaker))
    return a[m, n] * kp * gains[m, n] / (interference + params.noise)


def rate(gamma, a, spreading) -> float:
    if np.any(np.asarray(gamma) < 0):
        raise ContractError("SINR must be non-negative")
    return a * np.log2(1.0 + gamma) / spreading


@dataclass
class FrameOutcome:
    sinr: np.ndarray  # (M, N)
    rate: np.ndarray  # (M, N) bits/frame/Hz
    sum_rate: float
    interferer_power: np.ndarray  # (N,) watts, weaker co-user devices
    interfered_power: np.ndarray  # (N,) watts, stronger co-user devices


def evaluate_frame(gains, assoc, params) -> FrameOutcome:
    gains = np.asarray(gains, dtype=float)
    assoc = as_association(assoc)
    if assoc.num_devices != gains.shape[1] or assoc.num_users != gains.shape[0]:
        raise ContractError(f"association {assoc.num_users}x{assoc.num_devices} vs gains {gains.shape}")
    users = assoc.users
    H, own, weaker, stronger = _ordering(gains, users)
    i_h = (weaker * H).sum(axis=1)
    o_h = (stronger * H).sum(axis=1)
    s, r = _rates_from(own, i_h, params)
    cols = np.arange(users.size)
    sinr_mat = np.zeros_like(gains)
    rate_mat = np.zeros_like(gains)
    sinr_mat[users, cols] = s
    rate_mat[users, cols] = r
    kp = params.spreading * params.tx_power
    return FrameOutcome(sinr_mat, rate_mat, float(rate_mat.sum()), kp * i_h, kp * o_h)


def centralized_reward(outcome: FrameOutcome) -> float:
    return outcome.sum_rate


def counterfactual_rate(gains, assoc, params, m, l, excluded) -> float:
    """Rate of device ``l`` at user ``m`` with ``excluded`` removed from its interferers."""
    assoc = as_association(assoc)
    a = assoc.matrix
    if a[m, l] == 0:
        return 0.0
    kp = params.spreading * params.tx_power
    weaker, _ = interference_sets(gains, assoc, l, m)
    interference = sum(a[m, i] * kp * gains[m, i] for i in sorted(weaker) if i != excluded)
    gamma = a[m, l] * kp * gains[m, l] / (interference + params.noise)
    return rate(gamma, a[m, l], params.spreading)


def distributed_reward(outcome, gains, assoc, params, n) -> float:
    """Own rate minus the rate device ``n`` costs the stronger devices sharing its user."""
    assoc = as_association(assoc)
    m = int(assoc.users[n])
    _, stronger = interference_sets(gains, assoc, n, m)
    penalty = sum(
        counterfactual_rate(gains, assoc, params, m, l, n) - outcome.rate[m, l] for l in sorted(stronger)
    )
    return float(outcome.rate[m, n] - penalty)


def distributed_rewards(outcome, gains, assoc, params) -> np.ndarray:
    """Vectorised ``distributed_reward`` for every device at once."""
    assoc = as_association(assoc)
    users = assoc.users
    H, own, weaker, stronger = _ordering(np.asarray(gains, dtype=float), users)
    n_dev = users.size
    own_rate = outcome.rate[users, np.arange(n_dev)]
    # residual[n, l]: interference at l with n taken out, for l stronger than n.
    wh = weaker * H
    residual = wh.sum(axis=1)[None, :] - wh.T
    residual = np.where(stronger, residual, 0.0)
    kp = params.spreading * params.tx_power
    cf = np.log2(1.0 + kp * own[None, :] / (kp * residual + params.noise)) / params.spreading
    penalty = np.where(stronger, cf - own_rate[None, :], 0.0).sum(axis=1)
    return own_rate - penalty


class GainNormalizer:
    """Maps linear gains to [0, 1] by an affine map of ``log10``.

    Non-positive inputs (unobserved entries) go to the floor 0; values outside
    the bounds are clipped.
    """

    def __init__(self, log_lo, log_hi):
        if not log_hi > log_lo:
            raise ContractError("normaliser needs log_hi > log_lo")
        self.log_lo = float(log_lo)
        self.log_hi = float(log_hi)

    @classmethod
    def from_large_scale(cls, large: LargeScaleGains, params: SystemParams, margin=1.0):
        """Bounds from the weakest and strongest ``|alpha|^2 * lambda_n * lambda_mn`` of a topology.

        ``margin`` decades on each side leave room for small-scale fades.
        """
        prod = params.alpha_sq(large.device.size)[None, :] * large.device[None, :] * large.link
        return cls(np.log10(prod.min()) - margin, np.log10(prod.max()) + margin)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (np.log10(np.where(x > 0, x, 1.0)) - self.log_lo) / (self.log_hi - self.log_lo)
        return np.where(x > 0, np.clip(z, 0.0, 1.0), 0.0)


@dataclass
class HistoryStore:
    """What the base station has seen: last gain per link plus per-device feedback.

    A zero gain means "never observed". ``last_action`` is -1 before a device
    has acted.
    """

    gains: np.ndarray  # (M, N)
    last_action: np.ndarray  # (N,) int
    last_interferer: np.ndarray  # (N,) watts
    last_interfered: np.ndarray  # (N,) watts
    normalizer: GainNormalizer
    power_scale: float = 1.0  # K * p, divides I/O powers back to gain units

    @classmethod
    def fresh(cls, num_users, num_devices, normalizer, power_scale=1.0):
        return cls(
            np.zeros((num_users, num_devices)),
            np.full(num_devices, -1, dtype=np.int64),
            np.zeros(num_devices),
            np.zeros(num_devices),
            normalizer,
            power_scale,
        )

    @property
    def num_users(self):
        return self.gains.shape[0]

    @property
    def num_devices(self):
        return self.gains.shape[1]

    def resized(self, new_n):
        """Drop trailing devices or append never-observed ones."""
        old_n = self.num_devices
        if new_n <= old_n:
            return replace(
                self,
                gains=self.gains[:, :new_n].copy(),
                last_action=self.last_action[:new_n].copy(),
                last_interferer=self.last_interferer[:new_n].copy(),
                last_interfered=self.last_interfered[:new_n].copy(),
            )
        extra = new_n - old_n
        return replace(
            self,
            gains=np.hstack([self.gains, np.zeros((self.num_users, extra))]),
            last_action=np.concatenate([self.last_action, np.full(extra, -1, dtype=np.int64)]),
            last_interferer=np.concatenate([self.last_interferer, np.zeros(extra)]),
            last_interfered=np.concatenate([self.last_interfered, np.zeros(extra)]),
        )


def update_history(history: HistoryStore, assoc, gains, outcome: FrameOutcome) -> HistoryStore:
    assoc = as_association(assoc)
    users = assoc.users
    cols = np.arange(users.size)
    new_gains = history.gains.copy()
    new_gains[users, cols] = np.asarray(gains)[users, cols]
    return replace(
        history,
        gains=new_gains,
        last_action=users.copy(),
        last_interferer=np.asarray(outcome.interferer_power, dtype=float).copy(),
        last_interfered=np.asarray(outcome.interfered_power, dtype=float).copy(),
    )


def centralized_state(history: HistoryStore) -> np.ndarray:
    return history.normalizer(history.gains).reshape(-1)


def distributed_state(history: HistoryStore, n, max_devices) -> np.ndarray:
    """``[gain row (M), one-hot last action (M), n / N_max, I_n, O_n]``."""
    m_users = history.num_users
    one_hot = np.zeros(m_users)
    if history.last_action[n] >= 0:
        one_hot[history.last_action[n]] = 1.0
    norm = history.normalizer
    scale = history.power_scale
    return np.concatenate(
        [
            norm(history.gains[:, n]),
            one_hot,
            [n / max_devices],
            [norm(history.last_interferer[n] / scale)],
            [norm(history.last_interfered[n] / scale)],
        ]
    )


def distributed_states(history: HistoryStore, max_devices) -> np.ndarray:
    """All devices' states stacked as rows, shape ``(N, 2M + 3)``."""
    n_dev = history.num_devices
    m_users = history.num_users
    norm = history.normalizer
    one_hot = np.zeros((n_dev, m_users))
    acted = history.last_action >= 0
    one_hot[np.flatnonzero(acted), history.last_action[acted]] = 1.0
    return np.hstack(
        [
            norm(history.gains).T,
            one_hot,
            (np.arange(n_dev) / max_devices)[:, None],
            norm(history.last_interferer / history.power_scale)[:, None],
            norm(history.last_interfered / history.power_scale)[:, None],
        ]
    )


class SRNEnvironment:
    """A channel process plus system parameters, with the current frame's link gains.

    The harness calls ``advance`` once per frame; every policy then reads the
    same ``gains``. The state normaliser is fixed from the initial topology so
    that resizing the device set never rescales what agents already learned.
    """

    def __init__(self, channel, params: SystemParams):
        self.channel = channel
        self.params = params
        self.normalizer = GainNormalizer.from_large_scale(channel.state.large, params)
        self.gains = backscatter_gain(channel.state, params)

    @property
    def num_users(self):
        return self.channel.num_users

    @property
    def num_devices(self):
        return self.channel.num_devices

    @property
    def frame_index(self):
        return self.channel.state.small.frame_index

    @property
    def power_scale(self):
        return self.params.spreading * self.params.tx_power

    def advance(self):
        self.channel.advance()
        self.gains = backscatter_gain(self.channel.state, self.params)
        return self.gains

    def resize_devices(self, new_n):
        self.channel.resize_devices(new_n)
        self.gains = backscatter_gain(self.channel.state, self.params)

    def fresh_history(self):
        return HistoryStore.fresh(self.num_users, self.num_devices, self.normalizer, self.power_scale)
