"""Independent reference computations used as test oracles.

Everything here is written in plain Python loops straight from the model
definitions, deliberately sharing no code with the package.
"""

import itertools
import math

import numpy as np

P_W = 10.0  # 40 dBm
NOISE_W = 10 ** (-14.4)  # -114 dBm
K = 50


def stronger_than(h, m, l, n):
    """True if device l is decoded before device n at user m."""
    return h[m][l] > h[m][n] or (h[m][l] == h[m][n] and l < n)


def ref_rates(h, users, p=P_W, noise=NOISE_W, k=K):
    """Rate matrix from the SIC SINR, term by term."""
    m_users, n_dev = len(h), len(h[0])
    out = [[0.0] * n_dev for _ in range(m_users)]
    for n in range(n_dev):
        m = users[n]
        interference = 0.0
        for l in range(n_dev):
            if l != n and users[l] == m and not stronger_than(h, m, l, n):
                interference += k * p * h[m][l]
        gamma = k * p * h[m][n] / (interference + noise)
        out[m][n] = math.log2(1.0 + gamma) / k
    return out


def ref_sum_rate(h, users, **kw):
    return sum(sum(row) for row in ref_rates(h, users, **kw))


def ref_optimum(h, **kw):
    """(best sum rate, first maximiser in lexicographic order)."""
    m_users, n_dev = len(h), len(h[0])
    best, arg = -1.0, None
    for users in itertools.product(range(m_users), repeat=n_dev):
        r = ref_sum_rate(h, users, **kw)
        if r > best:
            best, arg = r, users
    return best, arg


def ref_reward(h, users, n, p=P_W, noise=NOISE_W, k=K):
    """Own rate minus the rate lost by stronger co-user devices because of n."""
    rates = ref_rates(h, users, p, noise, k)
    m = users[n]
    penalty = 0.0
    for l in range(len(users)):
        if l == n or users[l] != m or not stronger_than(h, m, l, n):
            continue
        interference = sum(
            k * p * h[m][i]
            for i in range(len(users))
            if i not in (l, n) and users[i] == m and not stronger_than(h, m, i, l)
        )
        without_n = math.log2(1.0 + k * p * h[m][l] / (interference + noise)) / k
        penalty += without_n - rates[m][l]
    return rates[m][n] - penalty


def random_gains(rng, m_users, n_dev):
    """Gains spread over several decades around the operating range."""
    return 10.0 ** rng.uniform(-16, -10, size=(m_users, n_dev)) * rng.exponential(1.0, size=(m_users, n_dev))


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def fd_grad_check(net, states, actions, targets, loss_fn, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    The relative error is ``|a - n| / max(|a|, |n|, 1e-6)`` per parameter.
    """
    analytic = loss_fn(net, states, actions, targets, grads=True)
    flat = net.flat
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn(net, states, actions, targets)
        flat[i] = orig - step
        down = loss_fn(net, states, actions, targets)
        flat[i] = orig
        numeric[i] = (up - down) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))
