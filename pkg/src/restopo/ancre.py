"""Learnable shortcut coefficients with softmax normalization.

Every candidate shortcut i:j (0 <= i < j <= K, source 0 is the network
input) carries a raw coefficient c_ij.  A temperature softmax turns the
raw coefficients into convex weights p_ij, either per destination layer
("ingoing": sum over sources i < j equals 1) or per source layer
("outgoing": sum over destinations j > i equals 1).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Pair",
    "AncreParams",
    "candidate_pairs",
    "normalization_groups",
    "normalize",
    "coeff_gradients",
    "heatmap",
    "heatmap_csv",
    "HEATMAP_SENTINEL",
]

Pair = tuple[int, int]

# Encodes "undefined" heatmap cells (i >= j) in the matrix and its CSV form.
HEATMAP_SENTINEL = -99.0

MODES = ("ingoing", "outgoing")


def candidate_pairs(K: int) -> list[Pair]:
    """All shortcut candidates (i, j) with 0 <= i < j <= K."""
    return [(i, j) for j in range(1, K + 1) for i in range(j)]


@dataclass(frozen=True)
class AncreParams:
    """Raw coefficients plus the normalization recipe.

    c maps every candidate pair to a raw real coefficient; the full
    candidate set of K(K+1)/2 pairs must be present.
    """

    K: int
    c: dict[Pair, float]
    mode: str = "ingoing"
    temperature: float = 0.1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"depth K must be >= 1, got {self.K}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        expected = set(candidate_pairs(self.K))
        got = set(self.c)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(
                f"coefficient set must cover all {len(expected)} pairs i<j<=K; "
                f"missing={missing} extra={extra}"
            )
        for pair, val in self.c.items():
            if not np.isfinite(val):
                raise ValueError(f"coefficient {pair} is not finite: {val}")

    @classmethod
    def uniform(cls, K: int, mode: str = "ingoing", temperature: float = 0.1) -> "AncreParams":
        """All raw coefficients zero, i.e. uniform weights within each group."""
        return cls(K=K, c={pair: 0.0 for pair in candidate_pairs(K)}, mode=mode,
                   temperature=temperature)

    def with_coeffs(self, c: dict[Pair, float]) -> "AncreParams":
        return replace(self, c=dict(c))


def normalization_groups(params: AncreParams) -> list[list[Pair]]:
    """The pair groups over which the softmax normalizes.

    Ingoing: one group per destination j (sources i = 0..j-1).
    Outgoing: one group per source i (destinations j = i+1..K).
    """
    K = params.K
    if params.mode == "ingoing":
        return [[(i, j) for i in range(j)] for j in range(1, K + 1)]
    return [[(i, j) for j in range(i + 1, K + 1)] for i in range(K)]


def normalize(params: AncreParams) -> dict[Pair, float]:
    """Softmax weights p with max-subtraction for overflow safety.

    Each normalization group of the result sums to 1 and every p lies in
    (0, 1].
    """
    p: dict[Pair, float] = {}
    tau = params.temperature
    for group in normalization_groups(params):
        z = np.array([params.c[pair] for pair in group]) / tau
        z -= z.max()
        e = np.exp(z)
        e /= e.sum()
        for pair, val in zip(group, e):
            p[pair] = float(val)
    return p


def coeff_gradients(params: AncreParams, p: dict[Pair, float],
                    p_grads: dict[Pair, float]) -> dict[Pair, float]:
    """Chain dL/dp through the softmax Jacobian to get dL/dc.

    Per group, the Jacobian is (diag(p) - p p^T)/tau, so
    dL/dc_k = p_k (q_k - sum_i p_i q_i) / tau with q = dL/dp.
    """
    grads: dict[Pair, float] = {}
    tau = params.temperature
    for group in normalization_groups(params):
        pv = np.array([p[pair] for pair in group])
        qv = np.array([p_grads.get(pair, 0.0) for pair in group])
        avg = float(pv @ qv)
        for pair, pk, qk in zip(group, pv, qv):
            grads[pair] = float(pk * (qk - avg) / tau)
    return grads


def heatmap(params: AncreParams) -> np.ndarray:
    """(K+1) x (K+1) matrix of per-row log10 ratios of the softmax weights.

    Entry (j, i) for i < j is log10(p_ij / max_i' p_i'j); rows are indexed
    by destination j, columns by source i.  The per-row maximum therefore
    sits at 0 and less-used shortcuts are negative.  Cells with i >= j
    (including the whole j = 0 row) carry the sentinel value -99.

    Normalized weights p are used rather than raw coefficients: raw
    coefficients may be negative, which has no meaningful log ratio.
    Only defined for ingoing normalization, where rows are the
    normalization groups.
    """
    if params.mode != "ingoing":
        raise ValueError("heatmap requires ingoing normalization")
    K = params.K
    p = normalize(params)
    m = np.full((K + 1, K + 1), HEATMAP_SENTINEL)
    for j in range(1, K + 1):
        row = np.array([p[(i, j)] for i in range(j)])
        ratios = np.log10(row / row.max())
        m[j, :j] = ratios
    return m


def heatmap_csv(matrix: np.ndarray) -> str:
    """Serialize a heatmap matrix: header 'j\\i,0,...,K', 6 significant digits."""
    K = matrix.shape[0] - 1
    lines = ["j\\i," + ",".join(str(i) for i in range(K + 1))]
    for j in range(K + 1):
        cells = [f"{matrix[j, i]:.6g}" for i in range(K + 1)]
        lines.append(f"{j}," + ",".join(cells))
    return "\n".join(lines) + "\n"
