"""Dense ReLU Q-network, squared TD loss on the taken action, Adam, target copy.

Plain numpy in float64. Parameters are held as lists of weight matrices
``W[k]`` of shape ``(fan_in, fan_out)`` and bias vectors ``b[k]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NonFiniteError

SNAPSHOT_FORMAT = "srnassoc-qnet/1"


class QNetwork:
    """All parameters live in one flat buffer; ``weights``/``biases`` are views into it."""

    def __init__(self, layer_sizes, rng=None, weights=None, biases=None):
        self.layer_sizes = [int(s) for s in layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ContractError(f"bad layer sizes {layer_sizes}")
        pairs = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        self.flat = np.zeros(sum(i * o + o for i, o in pairs))
        self.weights, self.biases = _views(self.flat, pairs)
        if weights is None:
            if rng is None:
                raise ContractError("need an rng or explicit weights")
            for w, (fan_in, fan_out) in zip(self.weights, pairs):
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                w[...] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            return
        if len(weights) != len(pairs) or len(biases) != len(pairs):
            raise ContractError("wrong number of layers")
        for k, (w, b) in enumerate(zip(weights, biases)):
            w, b = np.asarray(w, dtype=float), np.asarray(b, dtype=float)
            if w.shape != self.weights[k].shape or b.shape != self.biases[k].shape:
                raise ContractError(f"layer {k} parameter shapes {w.shape}, {b.shape} do not match sizes")
            self.weights[k][...] = w
            self.biases[k][...] = b

    @property
    def input_size(self):
        return self.layer_sizes[0]

    @property
    def output_size(self):
        return self.layer_sizes[-1]

    def params(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return QNetwork(self.layer_sizes, weights=self.weights, biases=self.biases)

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_size:
            raise ContractError(f"input width {x.shape[-1]} != {self.input_size}")
        return x

    def forward(self, x):
        """Q-values for one state ``(d,)`` or a batch ``(B, d)``."""
        a = self._check_input(x)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if k < last:
                a = np.maximum(a, 0.0)
        return a

    __call__ = forward

    def _forward_cache(self, x):
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = np.maximum(z, 0.0) if k < last else z
            acts.append(a)
        return acts


def forward(net: QNetwork, state):
    return net.forward(state)


def td_targets(rewards, next_states, target_net: QNetwork, gamma):
    """``r + gamma * max_a' Q(s', a'; target)``; the task never terminates."""
    if not 0.0 <= gamma <= 1.0:
        raise ContractError("discount must lie in [0, 1]")
    q_next = target_net.forward(np.atleast_2d(next_states))
    return np.asarray(rewards, dtype=float) + gamma * q_next.max(axis=1)


def td_target(reward, next_state, target_net, gamma) -> float:
    return float(td_targets([reward], [next_state], target_net, gamma)[0])


def loss_and_grads(net: QNetwork, states, actions, targets):
    """Mean squared error on the taken actions and its gradient per parameter.

    Returns ``(loss, grads)`` with ``grads`` aligned to ``net.params()``.
    """
    x = net._check_input(np.atleast_2d(states))
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=float)
    batch = x.shape[0]
    if np.any(actions < 0) or np.any(actions >= net.output_size):
        raise ContractError("action index outside the network's output")
    acts = net._forward_cache(x)
    rows = np.arange(batch)
    err = acts[-1][rows, actions] - targets
    loss = float(np.mean(err ** 2))

    delta = np.zeros_like(acts[-1])
    delta[rows, actions] = 2.0 * err / batch
    grads = [None] * (2 * len(net.weights))
    for k in range(len(net.weights) - 1, -1, -1):
        grads[2 * k] = acts[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k].T) * (acts[k] > 0)
    return loss, grads


def _views(flat, pairs):
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in pairs:
        weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
        pos += fan_in * fan_out
        biases.append(flat[pos:pos + fan_out])
        pos += fan_out
    return weights, biases


def flatten_grads(net: QNetwork, grads) -> np.ndarray:
    """Pack a ``[dW0, db0, ...]`` list into the network's flat layout."""
    return np.concatenate([np.ravel(g) for g in grads])


@dataclass
class AdamState:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    @classmethod
    def for_network(cls, net: QNetwork, **kw):
        return cls(m=np.zeros_like(net.flat), v=np.zeros_like(net.flat), **kw)

    def apply(self, params, grads):
        """In-place bias-corrected Adam update of the flat vector ``params``."""
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        self.m *= b1
        self.m += (1.0 - b1) * grads
        self.v *= b2
        self.v += (1.0 - b2) * grads * grads
        params -= (self.learning_rate / c1) * self.m / (np.sqrt(self.v / c2) + self.eps)


def train_minibatch(net, target_net, adam, batch, gamma, clip_norm=None) -> float:
    """One Adam step on a batch of ``(state, action, reward, next_state)``.

    ``batch`` may be a sequence of tuples or a tuple of stacked arrays.
    Returns the pre-update loss.
    """
    if isinstance(batch, tuple) and len(batch) == 4 and np.ndim(batch[1]) == 1:
        states, actions, rewards, next_states = batch
    else:
        if len(batch) < 1:
            raise ContractError("empty minibatch")
        states, actions, rewards, next_states = (np.array(c) for c in zip(*batch))
    targets = td_targets(rewards, next_states, target_net, gamma)
    loss, grads = loss_and_grads(net, states, actions, targets)
    grads = flatten_grads(net, grads)
    gnorm = float(np.sqrt(grads @ grads))
    if not np.isfinite(loss) or not np.isfinite(gnorm):
        raise NonFiniteError(
            "non-finite loss or gradient",
            {"loss": loss, "grad_norm": gnorm, "adam_step": adam.step,
             "max_abs_target": float(np.max(np.abs(targets)))},
        )
    if clip_norm is not None and gnorm > clip_norm:
        grads *= clip_norm / gnorm
    adam.apply(net.flat, grads)
    return loss


def sync_target(net: QNetwork, target_net: QNetwork = None) -> QNetwork:
    """Copy ``net`` into ``target_net`` (in place) or return a fresh copy."""
    if target_net is None:
        return net.copy()
    if target_net.layer_sizes != net.layer_sizes:
        raise ContractError("target and online networks differ in shape")
    target_net.flat[...] = net.flat
    return target_net


def save_snapshot(path, net: QNetwork, adam: AdamState = None, target: QNetwork = None):
    """Write an ``.npz`` snapshot.

    Layout (format ``srnassoc-qnet/1``): ``format``, ``layer_sizes``, then
    ``W{k}``/``b{k}`` for k = 0..L-1 in input-to-output order, each matrix
    row-major ``(fan_in, fan_out)``. Optional ``target_W{k}``/``target_b{k}``
    and Adam fields ``adam_hyper`` = [lr, beta1, beta2, eps], ``adam_step``,
    ``adam_m``/``adam_v`` as flat vectors in the order W0, b0, W1, b1, ...
    """
    arrays = {"format": np.array(SNAPSHOT_FORMAT), "layer_sizes": np.array(net.layer_sizes)}
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{k}"] = w
        arrays[f"b{k}"] = b
    if target is not None:
        for k, (w, b) in enumerate(zip(target.weights, target.biases)):
            arrays[f"target_W{k}"] = w
            arrays[f"target_b{k}"] = b
    if adam is not None:
        arrays["adam_hyper"] = np.array([adam.learning_rate, adam.beta1, adam.beta2, adam.eps])
        arrays["adam_step"] = np.array(adam.step)
        arrays["adam_m"] = adam.m
        arrays["adam_v"] = adam.v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_snapshot(path):
    """Inverse of ``save_snapshot``: returns ``(net, adam_or_None, target_or_None)``."""
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != SNAPSHOT_FORMAT:
            raise ContractError(f"unknown snapshot format {data['format']}")
        sizes = data["layer_sizes"].tolist()
        n_layers = len(sizes) - 1
        net = QNetwork(sizes, weights=[data[f"W{k}"] for k in range(n_layers)],
                       biases=[data[f"b{k}"] for k in range(n_layers)])
        target = None
        if "target_W0" in data:
            target = QNetwork(sizes, weights=[data[f"target_W{k}"] for k in range(n_layers)],
                              biases=[data[f"target_b{k}"] for k in range(n_layers)])
        adam = None
        if "adam_hyper" in data:
            lr, b1, b2, eps = data["adam_hyper"].tolist()
            adam = AdamState(lr, b1, b2, eps, int(data["adam_step"]),
                             data["adam_m"].copy(), data["adam_v"].copy())
    return net, adam, target

