"""Exhaustive-search and random association baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import Association, batch_sum_rates
from .errors import ContractError, IntractableError

DEFAULT_ENUM_CAP = 10**6


@dataclass
class PolicyDecision:
    assoc: Association
    achieved_sum_rate: float


def action_count(num_users, num_devices) -> int:
    return int(num_users) ** int(num_devices)


def _check_cap(num_users, num_devices, cap):
    total = action_count(num_users, num_devices)
    if cap is not None and total > cap:
        raise IntractableError(
            f"{num_users}^{num_devices} = {total} associations exceeds the enumeration cap {cap}"
        )
    return total


def decode_users(index, num_users, num_devices) -> np.ndarray:
    """Base-M digits of ``index``, device N as the least significant digit (0-based users)."""
    index = np.asarray(index, dtype=np.int64)
    if np.any(index < 0) or np.any(index >= action_count(num_users, num_devices)):
        raise ContractError(f"action index out of range for M={num_users}, N={num_devices}")
    powers = num_users ** np.arange(num_devices - 1, -1, -1, dtype=np.int64)
    return (index[..., None] // powers) % num_users


def encode_users(users, num_users) -> int:
    idx = 0
    for u in np.asarray(users).reshape(-1):
        idx = idx * num_users + int(u)
    return idx


def action_decode(index, num_users, num_devices) -> tuple:
    """1-based labels ``(b_1, ..., b_N)`` for a joint action index."""
    return tuple(int(u) + 1 for u in decode_users(int(index), num_users, num_devices))


def all_users(num_users, num_devices, cap=DEFAULT_ENUM_CAP) -> np.ndarray:
    """Every association as a ``(M**N, N)`` array of 0-based users, in lexicographic order."""
    total = _check_cap(num_users, num_devices, cap)
    return decode_users(np.arange(total), num_users, num_devices)


def enumerate_associations(num_users, num_devices, cap=DEFAULT_ENUM_CAP):
    _check_cap(num_users, num_devices, cap)
    for users in all_users(num_users, num_devices, cap):
        yield Association(users, num_users)


def optimal_policy(gains, params, cap=DEFAULT_ENUM_CAP, table=None) -> PolicyDecision:
    """Best association over the full enumeration; first optimum wins ties.

    ``table`` may carry a precomputed ``all_users`` result to skip re-decoding.
    """
    gains = np.asarray(gains, dtype=float)
    num_users, num_devices = gains.shape
    if table is None:
        table = all_users(num_users, num_devices, cap)
    rates = batch_sum_rates(gains, table, params)
    best = int(np.argmax(rates))
    return PolicyDecision(Association(table[best], num_users), float(rates[best]))


def random_policy(num_users, num_devices, rng) -> Association:
    return Association(rng.integers(0, num_users, size=num_devices), num_users)
