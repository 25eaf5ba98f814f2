"""Fast self-checks run by ``srnassoc check``.

Each check returns ``(name, passed, detail)``. They are smaller versions of
the test-suite invariants, meant for sanity-checking an installed copy.
"""

from __future__ import annotations

import math
import tempfile

import numpy as np

from . import qnet
from .channel import evolve_small_scale, init_small_scale
from .env import Association, SystemParams, evaluate_frame
from .harness import ExperimentConfig, run_experiment
from .oracle import all_users, optimal_policy


def check_fading_statistics(frames=20_000, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for rho in (0.0, 0.5, 0.99):
        state = init_small_scale(1, 1, rho, rng)
        xs = np.empty(frames, dtype=complex)
        for t in range(frames):
            state = evolve_small_scale(state, rng)
            xs[t] = state.h[0]
        ac = np.real(np.vdot(xs[:-1], xs[1:])) / np.real(np.vdot(xs, xs))
        worst = max(worst, abs(ac - rho))
    return "fading lag-1 autocorrelation", worst < 0.05, f"max |acf - rho| = {worst:.4f}"


def check_sinr_equivalence(instances=50, seed=1):
    rng = np.random.default_rng(seed)
    params = SystemParams.from_dbm()
    kp = params.spreading * params.tx_power
    worst = 0.0
    for _ in range(instances):
        m_users, n_dev = rng.integers(1, 5, size=2)
        h = rng.exponential(1e-13, size=(m_users, n_dev))
        users = rng.integers(0, m_users, size=n_dev)
        out = evaluate_frame(h, Association(users, m_users), params)
        for n in range(n_dev):
            m = users[n]
            interf = sum(kp * h[m, l] for l in range(n_dev) if users[l] == m and h[m, l] < h[m, n])
            r = math.log2(1 + kp * h[m, n] / (interf + params.noise)) / params.spreading
            worst = max(worst, abs(out.rate[m, n] - r) / max(r, 1e-300))
    return "SINR/rate vs term-by-term", worst <= 1e-12, f"max rel err = {worst:.2e}"


def check_optimal_policy(instances=50, seed=2):
    rng = np.random.default_rng(seed)
    params = SystemParams.from_dbm()
    table = all_users(3, 3)
    ok = True
    for _ in range(instances):
        h = rng.exponential(1e-13, size=(3, 3))
        best = max(evaluate_frame(h, Association(u, 3), params).sum_rate for u in table)
        got = optimal_policy(h, params).achieved_sum_rate
        ok &= abs(got - best) <= 1e-12 * best
    return "optimal policy vs enumeration", bool(ok), f"{instances} instances"


def check_gradients(seed=3):
    rng = np.random.default_rng(seed)
    net = qnet.QNetwork([9, 16, 8, 3], rng)
    states = rng.normal(size=(5, 9))
    actions = rng.integers(0, 3, size=5)
    targets = rng.normal(size=5)
    _, grads = qnet.loss_and_grads(net, states, actions, targets)
    analytic = qnet.flatten_grads(net, grads)
    numeric = np.empty_like(net.flat)
    step = 1e-5
    for i in range(net.flat.size):
        orig = net.flat[i]
        net.flat[i] = orig + step
        up, _ = qnet.loss_and_grads(net, states, actions, targets)
        net.flat[i] = orig - step
        down, _ = qnet.loss_and_grads(net, states, actions, targets)
        net.flat[i] = orig
        numeric[i] = (up - down) / (2 * step)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return "backprop vs finite differences", float(rel.max()) < 1e-4, f"max rel err = {rel.max():.2e}"


def check_determinism(frames=150):
    with tempfile.TemporaryDirectory() as tmp:
        texts = []
        for _ in range(2):
            cfg = ExperimentConfig(scenario="check", frames=frames, seed=7, output=tmp,
                                   batch_size=16, replay_capacity=64)
            res = run_experiment(cfg)
            texts.append(res.csv_path.read_bytes())
    return "seeded run determinism", texts[0] == texts[1], f"{frames} frames, 4 policies"


ALL_CHECKS = (
    check_fading_statistics,
    check_sinr_equivalence,
    check_optimal_policy,
    check_gradients,
    check_determinism,
)


def run_all():
    return [check() for check in ALL_CHECKS]
