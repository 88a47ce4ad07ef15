"""Deep linear (optionally tanh) networks over square layers, with either a
fixed set of additive shortcuts or learnable softmax-normalized shortcut
mixing, plus exact reverse-mode gradients for both.

Shortcut semantics: a shortcut i:j adds hidden state h_i after the layer-j
map, h_j = act(W_j h_{j-1} + sum_i h_i).  Source index 0 is the network
input, so e.g. the single shortcut 0:2 on a 3-layer net realizes
W3 (W2 W1 + I) X and the cascaded layout realizes prod_k (W_k + I) X.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ancre import AncreParams, coeff_gradients, normalize
from .tensor import ShapeError

__all__ = [
    "Topology",
    "TrainState",
    "ForwardTrace",
    "Gradients",
    "forward",
    "backward",
    "loss",
    "end_to_end_map",
]

WeightStack = list  # list of d x d float64 arrays, W_1 ... W_K


@dataclass(frozen=True)
class Topology:
    """A fixed shortcut layout: depth K plus a set of pairs (i, j), i < j <= K."""

    K: int
    shortcuts: frozenset = frozenset()

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"depth K must be >= 1, got {self.K}")
        object.__setattr__(self, "shortcuts", frozenset(tuple(p) for p in self.shortcuts))
        for (i, j) in self.shortcuts:
            if not (0 <= i < j <= self.K):
                raise ValueError(f"shortcut {(i, j)} violates 0 <= i < j <= K={self.K}")

    @classmethod
    def none(cls, K: int) -> "Topology":
        return cls(K=K)

    @classmethod
    def cascaded(cls, K: int) -> "Topology":
        return cls(K=K, shortcuts=frozenset((k - 1, k) for k in range(1, K + 1)))

    @classmethod
    def single(cls, i: int, j: int, K: int) -> "Topology":
        return cls(K=K, shortcuts=frozenset({(i, j)}))

    def incoming(self) -> list:
        """Per-layer source lists: incoming()[k] are the i with (i, k) present."""
        inc = [[] for _ in range(self.K + 1)]
        for (i, j) in sorted(self.shortcuts):
            inc[j].append(i)
        return inc

    def label(self) -> str:
        if not self.shortcuts:
            return "none"
        if self.shortcuts == frozenset((k - 1, k) for k in range(1, self.K + 1)):
            return "cascaded"
        return "+".join(f"{i}:{j}" for (i, j) in sorted(self.shortcuts))


@dataclass
class ForwardTrace:
    """Cached values from a forward pass, consumed by backward().

    hidden holds h_0 ... h_K with h_0 = X; mix_inputs holds the aggregated
    shortcut sums s_1 ... s_K (mixing mode only); pre_activation holds the
    pre-tanh values (tanh mode only); coeffs holds the softmax weights used.
    """

    hidden: list
    mix_inputs: list | None = None
    pre_activation: list | None = None
    coeffs: dict | None = None


@dataclass
class Gradients:
    weights: list
    coeffs: dict | None = None


@dataclass
class TrainState:
    """Weights, layout source (fixed topology XOR learnable mixing), and data.

    trunk applies to mixing mode only: with trunk on, layer k computes
    W_k h_{k-1} plus the convex shortcut mixture; with trunk off, the
    mixture itself is the layer input, h_k = act(W_k sum_i p_ik h_i).
    """

    weights: list
    X: np.ndarray
    Y: np.ndarray
    topology: Topology | None = None
    ancre: AncreParams | None = None
    nonlinearity: str = "none"
    trunk: bool = True

    def __post_init__(self):
        if (self.topology is None) == (self.ancre is None):
            raise ValueError("exactly one layout source required: topology or ancre")
        if self.nonlinearity not in ("none", "tanh"):
            raise ValueError(f"nonlinearity must be 'none' or 'tanh', got {self.nonlinearity!r}")
        K = len(self.weights)
        if K < 1:
            raise ValueError("need at least one layer")
        source_K = self.topology.K if self.topology is not None else self.ancre.K
        if source_K != K:
            raise ValueError(f"layout depth {source_K} != weight count {K}")
        d = self.weights[0].shape[0]
        for k, w in enumerate(self.weights, start=1):
            if w.shape != (d, d):
                raise ShapeError(f"layer {k}: expected shape {(d, d)}, got {w.shape}")
        if self.X.ndim != 2 or self.X.shape[0] != d:
            raise ShapeError(f"X must be {d} x n, got {self.X.shape}")
        if self.Y.shape != self.X.shape:
            raise ShapeError(f"Y shape {self.Y.shape} != X shape {self.X.shape}")

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    def copy(self) -> "TrainState":
        return replace(self, weights=[w.copy() for w in self.weights],
                       ancre=self.ancre.with_coeffs(self.ancre.c) if self.ancre else None)


def _check_finite_weights(weights) -> None:
    for k, w in enumerate(weights, start=1):
        if not np.all(np.isfinite(w)):
            raise ValueError(f"layer {k}: weight entries must be finite")


def _forward_arrays(weights, X, incoming, p, tanh: bool, trunk: bool):
    """Shared forward recurrence on raw arrays.

    Exactly one of incoming (fixed topology) and p (mixing weights) is set.
    Returns (hidden, mix_inputs, pre_activation).
    """
    K = len(weights)
    h = [X]
    mix = [None] if p is not None else None
    pre = [None] if tanh else None
    for k in range(1, K + 1):
        if p is None:
            z = weights[k - 1] @ h[k - 1]
            for i in incoming[k]:
                z = z + h[i]
        else:
            s = p[(0, k)] * h[0]
            for i in range(1, k):
                s = s + p[(i, k)] * h[i]
            if trunk:
                z = weights[k - 1] @ h[k - 1] + s
            else:
                z = weights[k - 1] @ s
            mix.append(s)
        if tanh:
            pre.append(z)
            z = np.tanh(z)
        h.append(z)
    return h, mix, pre


def _backward_arrays(weights, X, Y, incoming, p, tanh, trunk, h, mix):
    """Reverse accumulation through the hidden recurrence.

    Visits layers K..1, accumulating the adjoint of every h_i over all of
    its uses: the next layer's map plus every shortcut (or mixture) it
    feeds.  Returns (weight_grads, p_grads) with p_grads = dL/dp per pair
    (mixing mode only; the softmax chain is applied by the caller).
    """
    K = len(weights)
    adj = [None] * (K + 1)
    adj[K] = h[K] - Y
    wgrads = [None] * K
    p_grads = {} if p is not None else None
    for k in range(K, 0, -1):
        delta = adj[k]
        if tanh:
            delta = delta * (1.0 - h[k] * h[k])
        if p is None:
            wgrads[k - 1] = delta @ h[k - 1].T
            back = weights[k - 1].T @ delta
            adj[k - 1] = back if adj[k - 1] is None else adj[k - 1] + back
            for i in incoming[k]:
                adj[i] = delta.copy() if adj[i] is None else adj[i] + delta
        elif trunk:
            wgrads[k - 1] = delta @ h[k - 1].T
            back = weights[k - 1].T @ delta
            adj[k - 1] = back if adj[k - 1] is None else adj[k - 1] + back
            for i in range(k):
                p_grads[(i, k)] = float(np.sum(delta * h[i]))
                contrib = p[(i, k)] * delta
                adj[i] = contrib if adj[i] is None else adj[i] + contrib
        else:
            wgrads[k - 1] = delta @ mix[k].T
            back = weights[k - 1].T @ delta
            for i in range(k):
                p_grads[(i, k)] = float(np.sum(back * h[i]))
                contrib = p[(i, k)] * back
                adj[i] = contrib if adj[i] is None else adj[i] + contrib
    return wgrads, p_grads


def _layout(state: TrainState, coeffs: dict | None = None):
    """Resolve (incoming, p) for a state; coeffs optionally overrides ancre.c."""
    if state.topology is not None:
        return state.topology.incoming(), None
    params = state.ancre if coeffs is None else state.ancre.with_coeffs(coeffs)
    return None, normalize(params)


def forward(state: TrainState):
    """Run the hidden recurrence; returns (output, trace) with output = h_K."""
    _check_finite_weights(state.weights)
    incoming, p = _layout(state)
    h, mix, pre = _forward_arrays(state.weights, state.X, incoming, p,
                                  state.nonlinearity == "tanh", state.trunk)
    return h[-1], ForwardTrace(hidden=h, mix_inputs=mix, pre_activation=pre, coeffs=p)


def loss(output: np.ndarray, Y: np.ndarray) -> float:
    """Half squared Frobenius residual, 0.5 * ||output - Y||_F^2."""
    if output.shape != Y.shape:
        raise ShapeError(f"loss shape mismatch: {output.shape} vs {Y.shape}")
    r = output - Y
    return 0.5 * float(np.sum(r * r))


def backward(state: TrainState, trace: ForwardTrace) -> Gradients:
    """Exact gradients of loss(forward(state), state.Y) w.r.t. every weight
    and, in mixing mode, every raw coefficient (through the softmax Jacobian)."""
    K = state.K
    if len(trace.hidden) != K + 1:
        raise ValueError(f"stale trace: {len(trace.hidden) - 1} layers cached, state has {K}")
    if trace.hidden[0].shape != state.X.shape or not np.array_equal(trace.hidden[0], state.X):
        raise ValueError("stale trace: cached input does not match state.X")
    if (trace.coeffs is None) != (state.ancre is None):
        raise ValueError("stale trace: layout mode does not match state")
    incoming, p = (state.topology.incoming(), None) if state.topology is not None \
        else (None, trace.coeffs)
    wgrads, p_grads = _backward_arrays(
        state.weights, state.X, state.Y, incoming, p,
        state.nonlinearity == "tanh", state.trunk, trace.hidden, trace.mix_inputs)
    cgrads = None
    if p_grads is not None:
        cgrads = coeff_gradients(state.ancre, p, p_grads)
    return Gradients(weights=wgrads, coeffs=cgrads)


def loss_and_gradients(state: TrainState, weights=None, coeffs=None):
    """One fused forward/backward pass on raw arrays (integrator hot path).

    weights/coeffs default to the state's own parameters.  Equivalent to
    forward + loss + backward; kept lean because gradient-flow integration
    evaluates it hundreds of thousands of times.
    """
    if weights is None:
        weights = state.weights
    incoming, p = _layout(state, coeffs)
    tanh = state.nonlinearity == "tanh"
    h, mix, _ = _forward_arrays(weights, state.X, incoming, p, tanh, state.trunk)
    r = h[-1] - state.Y
    value = 0.5 * float(np.sum(r * r))
    wgrads, p_grads = _backward_arrays(weights, state.X, state.Y, incoming, p,
                                       tanh, state.trunk, h, mix)
    cgrads = None
    if p_grads is not None:
        params = state.ancre if coeffs is None else state.ancre.with_coeffs(coeffs)
        cgrads = coeff_gradients(params, p, p_grads)
    return value, wgrads, cgrads


def end_to_end_map(weights, topology: Topology, nonlinearity: str = "none") -> np.ndarray:
    """The effective linear operator M with forward output = M @ X.

    Computed by running the forward recurrence on the identity; only
    meaningful without a nonlinearity.
    """
    if nonlinearity != "none":
        raise ValueError("end_to_end_map is only defined for linear networks")
    _check_finite_weights(weights)
    d = weights[0].shape[0]
    h, _, _ = _forward_arrays(weights, np.eye(d), topology.incoming(), None, False, True)
    return h[-1]
