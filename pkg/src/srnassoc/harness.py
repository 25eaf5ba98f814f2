"""Experiment configuration, seeded lock-step runs, traces and summaries.

All policies in a run see the same channel realisation: the harness advances
one shared channel per frame and every policy acts on the resulting gains.
The master seed is split into independent streams (topology, fading, random
policy, centralized agent, distributed agent) so adding or removing a policy
never perturbs the others.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .agents import AgentConfig, CentralizedAgent, DistributedAgent
from .channel import Channel, TopologyConfig
from .env import SRNEnvironment, SystemParams, evaluate_frame
from .errors import ContractError, NonFiniteError, UnsupportedOperationError
from .oracle import DEFAULT_ENUM_CAP, action_count, all_users, optimal_policy, random_policy

log = logging.getLogger(__name__)

POLICIES = ("centralized", "distributed", "optimal", "random")
CSV_FIELDS = ("frame", "policy", "n_devices", "sum_rate", "moving_avg_200", "epsilon", "loss")

# SeedSequence spawn positions; fixed so each stream is stable across policy sets.
_STREAMS = ("topology", "fading", "random", "centralized", "distributed")


@dataclass
class ExperimentConfig:
    scenario: str = "default"
    num_users: int = 3
    num_devices: int = 3
    rho: float = 0.99
    frames: int = 10_000
    policies: list = field(default_factory=lambda: list(POLICIES))
    n_changes: dict = field(default_factory=dict)  # frame -> new number of devices
    # system
    tx_power_dbm: float = 40.0
    noise_dbm: float = -114.0
    alpha: float = 0.8
    spreading: int = 50
    # topology
    region_side: float = 100.0
    min_dist: float = 10.0
    max_dist: float = 100.0
    carrier_freq_mhz: float = 2400.0
    tx_gain_db: float = 2.5
    rx_gain_db: float = 2.5
    # agents
    gamma: float = 0.3
    batch_size: int = 64
    replay_capacity: int = 800
    target_period: int = 100
    learning_rate: float = 0.01
    epsilon_initial: float = 0.2
    epsilon_min: float = 0.005
    epsilon_decay: float = 0.005
    centralized_hidden: list = field(default_factory=lambda: [256, 128, 64])
    distributed_hidden: list = field(default_factory=lambda: [128, 64, 32])
    clip_norm: Optional[float] = None
    # harness
    enum_cap: int = DEFAULT_ENUM_CAP
    ma_window: int = 200
    tail_fraction: float = 0.2
    snapshot_every: int = 0  # frames between agent snapshots; 0 disables
    seed: int = 0
    output: str = "runs"

    def __post_init__(self):
        self.n_changes = {int(k): int(v) for k, v in dict(self.n_changes).items()}
        self.policies = list(self.policies)
        unknown = set(self.policies) - set(POLICIES)
        if unknown:
            raise ContractError(f"unknown policies {sorted(unknown)}; choose from {POLICIES}")
        if self.frames < 0:
            raise ContractError("frames must be non-negative")
        if not 0.0 <= self.rho <= 1.0:
            raise ContractError("rho must lie in [0, 1]")
        if not 0.0 < self.tail_fraction <= 1.0:
            raise ContractError("tail_fraction must lie in (0, 1]")
        if self.ma_window < 1:
            raise ContractError("ma_window must be >= 1")

    # --- serialisation -------------------------------------------------
    def to_dict(self):
        d = dataclasses.asdict(self)
        d["n_changes"] = {str(k): v for k, v in sorted(self.n_changes.items())}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ContractError(f"unknown config fields {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(self.to_json())

    # --- derived records -------------------------------------------------
    def topology(self) -> TopologyConfig:
        return TopologyConfig(
            self.num_users, self.num_devices, self.region_side, None, self.min_dist, self.max_dist,
            self.carrier_freq_mhz, self.tx_gain_db, self.rx_gain_db, self.seed,
        )

    def system(self) -> SystemParams:
        return SystemParams.from_dbm(self.tx_power_dbm, self.noise_dbm, self.alpha, self.spreading)

    def agent(self) -> AgentConfig:
        return AgentConfig(
            self.gamma, self.batch_size, self.replay_capacity, self.target_period, self.learning_rate,
            self.epsilon_initial, self.epsilon_min, self.epsilon_decay,
            list(self.centralized_hidden), list(self.distributed_hidden), self.clip_norm,
        )

    @property
    def max_devices(self):
        return max([self.num_devices, *self.n_changes.values()])

    @property
    def stem(self):
        return f"{self.scenario}_seed{self.seed}"


def streams(seed):
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(_STREAMS, children)}


def moving_average(series, window=200):
    """Trailing mean over the last ``min(t, window)`` values, current value included."""
    if window < 1:
        raise ContractError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return x.copy()
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    start = np.maximum(idx - window, 0)
    return (csum[idx] - csum[start]) / (idx - start)


@dataclass
class TraceRecord:
    frame: int
    policy: str
    n_devices: int
    sum_rate: float
    moving_avg: float = float("nan")
    epsilon: Optional[float] = None
    loss: Optional[float] = None


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list
    summary: dict
    gain_digests: dict
    csv_path: Optional[Path] = None
    summary_path: Optional[Path] = None

    def series(self, policy, column="sum_rate"):
        return np.array([getattr(r, column) for r in self.records if r.policy == policy], dtype=float)

    @property
    def policies(self):
        return [p for p in POLICIES if any(r.policy == p for r in self.records)] or list(self.summary)


class _Oracle:
    """Per-N cache of enumeration tables for the optimal baseline."""

    def __init__(self, num_users, cap):
        self.num_users = num_users
        self.cap = cap
        self._tables = {}

    def decide(self, gains, params):
        n = gains.shape[1]
        if n not in self._tables:
            self._tables[n] = all_users(self.num_users, n, self.cap)
        return optimal_policy(gains, params, self.cap, table=self._tables[n]).assoc


class _RandomPolicy:
    def __init__(self, num_users, rng):
        self.num_users = num_users
        self.rng = rng

    def decide(self, gains, params):
        return random_policy(self.num_users, gains.shape[1], self.rng)


def apply_n_change(env: SRNEnvironment, agents: dict, new_n: int):
    """Resize the device set of the environment and every learning agent.

    Raises before mutating anything if a centralized agent is present.
    """
    if new_n == env.num_devices:
        return
    for agent in agents.values():
        if isinstance(agent, CentralizedAgent):
            agent.resize_devices(new_n)  # always raises for a real change
    env.resize_devices(new_n)
    for agent in agents.values():
        agent.resize_devices(new_n)


def build_run(config: ExperimentConfig):
    """Environment plus policy objects for a config, in canonical policy order."""
    rngs = streams(config.seed)
    channel = Channel(config.topology(), config.rho, rngs["topology"], rngs["fading"])
    env = SRNEnvironment(channel, config.system())
    policies = {}
    for name in POLICIES:
        if name not in config.policies:
            continue
        if name == "centralized":
            if config.n_changes:
                raise UnsupportedOperationError(
                    "centralized agent is not scalable: remove it or the n_changes schedule"
                )
            policies[name] = CentralizedAgent(env, config.agent(), rngs["centralized"], config.enum_cap)
        elif name == "distributed":
            policies[name] = DistributedAgent(env, config.agent(), rngs["distributed"], config.max_devices)
        elif name == "optimal":
            worst = max(action_count(config.num_users, n) for n in [config.num_devices, *config.n_changes.values()])
            if worst > config.enum_cap:
                log.warning("optimal policy unavailable: %d associations exceed cap %d", worst, config.enum_cap)
                continue
            policies[name] = _Oracle(config.num_users, config.enum_cap)
        else:
            policies[name] = _RandomPolicy(config.num_users, rngs["random"])
    return env, policies


def run_experiment(config: ExperimentConfig, write=True) -> RunResult:
    env, policies = build_run(config)
    agents = {k: v for k, v in policies.items() if k in ("centralized", "distributed")}
    digests = {name: hashlib.sha256() for name in policies}
    records = []
    snap_dir = Path(config.output) / f"{config.stem}_snapshots"

    for t in range(1, config.frames + 1):
        if t in config.n_changes:
            apply_n_change(env, agents, config.n_changes[t])
        gains = env.advance()
        gain_bytes = np.ascontiguousarray(gains).tobytes()
        for name, policy in policies.items():
            digests[name].update(gain_bytes)
            if name in agents:
                rec = policy.frame_step(env)
                row = TraceRecord(t, name, env.num_devices, rec.sum_rate, epsilon=rec.epsilon, loss=rec.loss)
            else:
                outcome = evaluate_frame(gains, policy.decide(gains, env.params), env.params)
                row = TraceRecord(t, name, env.num_devices, outcome.sum_rate)
            if not math.isfinite(row.sum_rate) or (row.loss is not None and not math.isfinite(row.loss)):
                raise NonFiniteError(f"non-finite metric at frame {t} for {name}",
                                     {"frame": t, "policy": name, "sum_rate": row.sum_rate, "loss": row.loss})
            records.append(row)
        if config.snapshot_every and t % config.snapshot_every == 0:
            for agent in agents.values():
                agent.save_state(snap_dir / f"frame{t}")

    _fill_moving_average(records, config.ma_window)
    summary = summarize(records, config.tail_fraction) if records else {}
    result = RunResult(config, records, summary, {k: v.hexdigest() for k, v in digests.items()})
    if write:
        out = Path(config.output)
        out.mkdir(parents=True, exist_ok=True)
        result.csv_path = out / f"{config.stem}.csv"
        result.summary_path = out / f"{config.stem}_summary.txt"
        result.csv_path.write_text(trace_csv(records))
        result.summary_path.write_text(summary_text(summary))
        (out / f"{config.stem}_config.json").write_text(config.to_json())
    return result


def _fill_moving_average(records, window):
    by_policy = {}
    for r in records:
        by_policy.setdefault(r.policy, []).append(r)
    for rows in by_policy.values():
        ma = moving_average([r.sum_rate for r in rows], window)
        for r, v in zip(rows, ma):
            r.moving_avg = float(v)


def tail_mean(values, tail_fraction):
    values = np.asarray(values, dtype=float)
    k = max(1, int(math.ceil(tail_fraction * values.size)))
    return float(values[-k:].mean())


def summarize(records, tail_fraction=0.2) -> dict:
    """Per policy: tail mean of the moving average and ratios against the baselines."""
    if not records:
        raise ContractError("cannot summarise an empty trace")
    series = {}
    for r in records:
        series.setdefault(r.policy, []).append(r.moving_avg)
    tails = {p: tail_mean(v, tail_fraction) for p, v in series.items()}
    out = {}
    for p in [q for q in POLICIES if q in tails]:
        out[p] = {
            "tail_mean": tails[p],
            "ratio_vs_optimal": _ratio(tails[p], tails.get("optimal")),
            "ratio_vs_random": _ratio(tails[p], tails.get("random")),
        }
    return out


def _ratio(a, b):
    if b is None or b == 0:
        return None
    return a / b


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def trace_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        w.writerow([r.frame, r.policy, r.n_devices, _fmt(r.sum_rate), _fmt(r.moving_avg),
                    _fmt(r.epsilon), _fmt(r.loss)])
    return buf.getvalue()


def read_trace(path):
    """Parse a trace CSV back into ``TraceRecord`` objects."""
    def opt(s):
        return float(s) if s != "" else None

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ContractError(f"unexpected CSV header {reader.fieldnames}")
        return [
            TraceRecord(int(row["frame"]), row["policy"], int(row["n_devices"]), float(row["sum_rate"]),
                        float(row["moving_avg_200"]), opt(row["epsilon"]), opt(row["loss"]))
            for row in reader
        ]


def summary_text(summary) -> str:
    lines = []
    for policy, stats in summary.items():
        for key in ("tail_mean", "ratio_vs_optimal", "ratio_vs_random"):
            v = stats[key]
            lines.append(f"{policy}.{key}={'NA' if v is None else repr(v)}")
    return "".join(line + "\n" for line in lines)


def parse_summary(text) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, value = line.split("=", 1)
        policy, stat = key.split(".", 1)
        out.setdefault(policy, {})[stat] = None if value == "NA" else float(value)
    return out


def preset_scenarios():
    """Scenario presets mirroring the convergence and scalability experiments."""
    return {
        "quasi_static": ExperimentConfig(scenario="quasi_static", rho=0.99),
        "moderate": ExperimentConfig(scenario="moderate", rho=0.5),
        "fast_fading": ExperimentConfig(scenario="fast_fading", rho=0.0),
        "shrink": ExperimentConfig(scenario="shrink", rho=0.0, num_devices=3, frames=6000,
                                   policies=["distributed", "optimal", "random"], n_changes={4001: 2}),
        "grow": ExperimentConfig(scenario="grow", rho=0.0, num_devices=2, frames=6000,
                                 policies=["distributed", "optimal", "random"], n_changes={4001: 3}),
        "large": ExperimentConfig(scenario="large", rho=0.5, num_users=8, num_devices=8,
                                  policies=["distributed", "optimal", "random"]),
    }
