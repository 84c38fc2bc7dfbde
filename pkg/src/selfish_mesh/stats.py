"""Statistical classification of a monitor's neighbors.

Pipeline, run independently at every monitor over the neighbors it watches:

1. Pearson chi-squared homogeneity tests compare each FSM row of two neighbors' transition
   matrices. The number of rejected rows ``S`` gives the similarity ``L = alpha ** S``.
2. The dissimilarity ``d_rs`` measures how inconsistently ``r`` and ``s`` relate to every third
   neighbor. It does not use ``L_rs`` itself.
3. Single-linkage agglomerative clustering on ``d`` yields a dendrogram.
4. Each neighbor gets a cooperation score from its own transition counts.
5. Cuts of the dendrogram into k = 2, 3, ... clusters are gated by a one-way ANOVA p-value
   ``P_k`` against ``beta``.
"""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
from loguru import logger
from scipy import optimize, special

from selfish_mesh.monitor import M_STATES, TransitionMatrix
from selfish_mesh.topology import NodeId
from selfish_mesh.utils.errors import DomainError, InsufficientData

COOPERATIVE_TRANSITIONS: frozenset[tuple[int, int]] = frozenset({(3, 4), (6, 7), (4, 7), (3, 7)})
"""Completed cooperative actions (set G)."""

SELFISH_TRANSITIONS: frozenset[tuple[int, int]] = frozenset({(3, 5), (6, 8)})
"""Failures to forward after receipt (set B)."""


class Verdict(StrEnum):
    """Classification of one node."""

    COOPERATIVE = "Cooperative"
    SELFISH = "Selfish"
    UNASCERTAINED = "Unascertained"


@dataclass(frozen=True)
class DetectorParams:
    """Knobs of the statistical detector."""

    alpha: float = 0.1
    beta: float = 0.4
    m: int = M_STATES
    min_row_total: int = 5


@dataclass(frozen=True)
class PearsonResult:
    """Outcome of one row homogeneity test."""

    chi2: float
    reject: bool
    applicable: bool = True


@dataclass(frozen=True)
class RejectionVector:
    """``B_i`` for every FSM row and their sum ``S``."""

    bits: tuple[int, ...]

    @property
    def S(self) -> int:  # noqa: N802
        """Number of rejected rows."""
        return sum(self.bits)


@dataclass(frozen=True)
class Similarity:
    """Result of comparing two transition matrices."""

    L: float
    S: int
    rejections: RejectionVector


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise ``L`` over the monitored neighbors, in ``labels`` order."""

    labels: tuple[NodeId, ...]
    values: npt.NDArray[np.float64]

    def index(self, node: NodeId) -> int:
        """Row of ``node``."""
        return self.labels.index(node)


@dataclass(frozen=True)
class DissimilarityMatrix:
    """Pairwise ``d`` over the monitored neighbors, in ``labels`` order."""

    labels: tuple[NodeId, ...]
    values: npt.NDArray[np.float64]


@dataclass(frozen=True)
class Merge:
    """One agglomeration step."""

    left: tuple[NodeId, ...]
    right: tuple[NodeId, ...]
    height: float


@dataclass(frozen=True)
class Dendrogram:
    """Single-linkage merge sequence over ``labels``."""

    labels: tuple[NodeId, ...]
    merges: tuple[Merge, ...]

    def cut(self, k: int) -> list[tuple[NodeId, ...]]:
        """Partition into ``k`` clusters by replaying the first ``R - k`` merges.

        Clusters are sorted tuples, ordered by their smallest member.

        Raises:
            DomainError: If ``k`` is not in ``[1, R]``.
        """
        size = len(self.labels)
        if not 1 <= k <= max(size, 1):
            msg = f"Cannot cut {size} nodes into {k} clusters"
            raise DomainError(msg)

        cluster_of = {label: (label,) for label in self.labels}
        for merge in self.merges[: size - k]:
            joined = tuple(sorted(cluster_of[merge.left[0]] + cluster_of[merge.right[0]]))
            for member in joined:
                cluster_of[member] = joined

        return sorted(set(cluster_of.values()), key=lambda c: c[0])


@dataclass
class ClassificationResult:
    """Verdicts of one monitor over its neighbors, with the evidence behind them."""

    verdicts: dict[NodeId, Verdict]
    scores: dict[NodeId, float]
    p_sequence: list[tuple[int, float]] = field(default_factory=list)
    chosen_k: int | None = None

    def to_dict(self) -> dict:
        """JSON-friendly rendering."""
        return {
            "verdicts": {str(n): v.value for n, v in self.verdicts.items()},
            "scores": {str(n): s for n, s in self.scores.items()},
            "p_sequence": [[k, p] for k, p in self.p_sequence],
            "chosen_k": self.chosen_k,
        }


@dataclass
class DetectionReport:
    """Everything one detection run at one monitor produced."""

    similarity: SimilarityMatrix
    dissimilarity: DissimilarityMatrix
    dendrogram: Dendrogram
    result: ClassificationResult


@lru_cache(maxsize=256)
def chi2_critical(df: int, alpha: float) -> float:
    """Upper-tail critical value of the chi-squared distribution.

    Solves ``Q(df / 2, x / 2) = alpha`` for ``x``, where ``Q`` is the regularized upper
    incomplete gamma function.

    Args:
        df: Degrees of freedom, at least 1.
        alpha: Upper-tail probability in (0, 1).

    Returns:
        ``x`` with ``P(chi2_df > x) = alpha``, accurate to 1e-9.

    Raises:
        DomainError: On invalid arguments.

    >>> round(chi2_critical(7, 0.1), 3)
    12.017
    """
    if int(df) != df or df < 1:
        msg = f"df must be a positive integer, got {df}"
        raise DomainError(msg)
    if not 0 < alpha < 1:
        msg = f"alpha must lie in (0, 1), got {alpha}"
        raise DomainError(msg)

    half = df / 2.0

    def excess(x: float) -> float:
        return float(special.gammaincc(half, x / 2.0)) - alpha

    upper = float(df) + 10.0
    while excess(upper) > 0:
        upper *= 2.0

    return float(optimize.brentq(excess, 0.0, upper, xtol=1e-12, maxiter=500))


def _row_chi2(
    rows_r: npt.NDArray[np.int64], rows_s: npt.NDArray[np.int64]
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    """Chi-squared statistic per row for stacked rows of two matrices.

    Returns:
        ``(chi2, F_r, F_s)`` arrays with one entry per row.
    """
    a = np.asarray(rows_r, dtype=np.float64)
    b = np.asarray(rows_s, dtype=np.float64)
    total_r = a.sum(axis=-1, keepdims=True)
    total_s = b.sum(axis=-1, keepdims=True)
    column = a + b
    grand = total_r + total_s

    share = np.divide(column, grand, out=np.zeros_like(column), where=grand > 0)
    expected_r = total_r * share
    expected_s = total_s * share

    chi2 = np.divide(
        (a - expected_r) ** 2, expected_r, out=np.zeros_like(a), where=expected_r > 0
    ) + np.divide((b - expected_s) ** 2, expected_s, out=np.zeros_like(b), where=expected_s > 0)

    return (
        chi2.sum(axis=-1),
        total_r[..., 0].astype(np.int64),
        total_s[..., 0].astype(np.int64),
    )


def pearson_row_test(
    row_r: Sequence[int] | npt.NDArray[np.int64],
    row_s: Sequence[int] | npt.NDArray[np.int64],
    alpha: float,
    min_row_total: int = DetectorParams.min_row_total,
) -> PearsonResult:
    """Two-sample chi-squared homogeneity test of one FSM row.

    Columns empty in both rows are skipped. When either row has fewer than ``min_row_total``
    transitions the test is inapplicable and does not reject.

    Args:
        row_r: Outgoing counts of one state for neighbor r.
        row_s: Outgoing counts of the same state for neighbor s.
        alpha: Significance of the test.
        min_row_total: Smallest row total for which the test is applied.

    Returns:
        The statistic and whether homogeneity is rejected.

    >>> pearson_row_test([10, 0, 0, 0, 0, 0, 0, 0], [0, 10, 0, 0, 0, 0, 0, 0], 0.1)
    PearsonResult(chi2=20.0, reject=True, applicable=True)
    """
    a = np.asarray(row_r, dtype=np.int64)
    b = np.asarray(row_s, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1:
        msg = "rows must be one-dimensional and of equal length"
        raise DomainError(msg)
    if (a < 0).any() or (b < 0).any():
        msg = "counts must be non-negative"
        raise DomainError(msg)

    chi2, total_r, total_s = _row_chi2(a, b)
    value = float(chi2)
    if total_r < min_row_total or total_s < min_row_total:
        return PearsonResult(chi2=value, reject=False, applicable=False)

    return PearsonResult(chi2=value, reject=value > chi2_critical(a.size - 1, alpha))


def similarity_L(  # noqa: N802
    tr: TransitionMatrix, ts: TransitionMatrix, params: DetectorParams
) -> Similarity:
    """Similarity of two neighbors: ``alpha`` to the number of rejected row tests.

    Args:
        tr: Transition matrix of neighbor r.
        ts: Transition matrix of neighbor s.
        params: Supplies ``alpha``, ``m`` and ``min_row_total``.

    Returns:
        ``L`` in (0, 1] together with ``S`` and the per-row rejection bits.
    """
    chi2, total_r, total_s = _row_chi2(tr.counts, ts.counts)
    applicable = (total_r >= params.min_row_total) & (total_s >= params.min_row_total)
    bits = applicable & (chi2 > chi2_critical(params.m - 1, params.alpha))
    rejections = RejectionVector(tuple(int(bit) for bit in bits))
    return Similarity(L=params.alpha**rejections.S, S=rejections.S, rejections=rejections)


def similarity_matrix(
    matrices: Mapping[NodeId, TransitionMatrix], params: DetectorParams
) -> SimilarityMatrix:
    """``L`` for every pair of neighbors; the diagonal is 1."""
    labels = tuple(sorted(matrices))
    size = len(labels)
    values = np.ones((size, size), dtype=np.float64)
    for i in range(size):
        for j in range(i + 1, size):
            value = similarity_L(matrices[labels[i]], matrices[labels[j]], params).L
            values[i, j] = values[j, i] = value
    return SimilarityMatrix(labels, values)


class DissimilarityTerms(NamedTuple):
    """Intermediate sums of ``d_rs`` over the third neighbors ``t``."""

    shared: float
    """``n_rs``, the sum of ``min(L_rt, L_st)``."""
    r_total: float
    """``n_r/s``, the sum of ``L_rt``."""
    s_total: float
    """``n_s/r``, the sum of ``L_st``."""


def dissimilarity_terms(
    lmatrix: SimilarityMatrix, r: NodeId, s: NodeId
) -> DissimilarityTerms | None:
    """The sums behind ``d_rs``, or None when ``r`` and ``s`` have no third neighbor."""
    i, j = lmatrix.index(r), lmatrix.index(s)
    others = np.ones(len(lmatrix.labels), dtype=bool)
    others[[i, j]] = False
    if not others.any():
        return None

    l_rt = lmatrix.values[i, others]
    l_st = lmatrix.values[j, others]
    return DissimilarityTerms(
        shared=float(np.minimum(l_rt, l_st).sum()),
        r_total=float(l_rt.sum()),
        s_total=float(l_st.sum()),
    )


def dissimilarity(lmatrix: SimilarityMatrix, r: NodeId, s: NodeId) -> float:
    """Inconsistency of ``r``'s and ``s``'s similarities toward every third neighbor.

    With no third neighbor (fewer than three monitored nodes) the pairwise ``1 - L_rs`` is used.

    Args:
        lmatrix: Pairwise similarities.
        r: First node.
        s: Second node.

    Returns:
        ``d_rs`` in [0, 1]; zero when ``r`` and ``s`` have identical profiles.
    """
    if r == s:
        return 0.0

    terms = dissimilarity_terms(lmatrix, r, s)
    if terms is None:
        return float(1.0 - lmatrix.values[lmatrix.index(r), lmatrix.index(s)])

    d = 1.0 - terms.shared**2 / (terms.r_total * terms.s_total)
    return min(1.0, max(0.0, d))


def dissimilarity_matrix(lmatrix: SimilarityMatrix) -> DissimilarityMatrix:
    """``d`` for every pair; symmetric with a zero diagonal."""
    labels = lmatrix.labels
    size = len(labels)
    values = np.zeros((size, size), dtype=np.float64)
    for i in range(size):
        for j in range(i + 1, size):
            values[i, j] = values[j, i] = dissimilarity(lmatrix, labels[i], labels[j])
    return DissimilarityMatrix(labels, values)


def single_linkage(dist: DissimilarityMatrix) -> Dendrogram:
    """Agglomerate by the closest cross-cluster pair.

    Ties in linkage distance go to the cluster pair whose smallest members are
    lexicographically smallest, so the merge order is deterministic.

    Args:
        dist: Symmetric zero-diagonal dissimilarities.

    Returns:
        The dendrogram; merge heights are non-decreasing.
    """
    labels = dist.labels
    size = len(labels)
    link = np.array(dist.values, dtype=np.float64, copy=True)
    link[np.tril_indices(size)] = np.inf
    members: dict[int, list[int]] = {i: [i] for i in range(size)}
    merges: list[Merge] = []

    # Row i always holds the cluster whose smallest member is i, so the row-major first
    # minimum is the lexicographically smallest pair.
    for _ in range(size - 1):
        height = link.min()
        i, j = (int(x) for x in np.argwhere(link == height)[0])
        merges.append(
            Merge(
                left=tuple(labels[m] for m in members[i]),
                right=tuple(labels[m] for m in members[j]),
                height=float(height),
            )
        )
        members[i] = sorted(members[i] + members.pop(j))

        merged = np.minimum(
            np.concatenate([link[:i, i], link[i, i:]]),
            np.concatenate([link[:j, j], link[j, j:]]),
        )
        link[:i, i] = merged[:i]
        link[i, i + 1 :] = merged[i + 1 :]
        link[i, i] = np.inf
        link[j, :] = np.inf
        link[:, j] = np.inf

    return Dendrogram(labels=labels, merges=tuple(merges))


def cooperation_score(matrix: TransitionMatrix) -> float:
    """Mean count over cooperative transitions minus mean count over selfish ones.

    >>> cooperation_score(TransitionMatrix())
    0.0
    """
    good = sum(matrix[i, j] for i, j in COOPERATIVE_TRANSITIONS)
    bad = sum(matrix[i, j] for i, j in SELFISH_TRANSITIONS)
    return good / len(COOPERATIVE_TRANSITIONS) - bad / len(SELFISH_TRANSITIONS)


def anova_p(groups: Sequence[Sequence[float]]) -> float:
    """One-way ANOVA p-value of the group means.

    Args:
        groups: At least two non-empty groups of scores.

    Returns:
        The upper tail of ``F(k - 1, n - k)`` at the observed ratio. Exactly 1.0 when every score
        is identical, exactly 0.0 when groups are internally constant but means differ.

    Raises:
        InsufficientData: If a group is empty, fewer than two groups are given, or ``n <= k``.
    """
    k = len(groups)
    if k < 2 or any(len(g) == 0 for g in groups):  # noqa: PLR2004
        msg = "ANOVA needs at least two non-empty groups"
        raise InsufficientData(msg)

    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    n = sum(a.size for a in arrays)
    if n <= k:
        msg = f"ANOVA needs more observations ({n}) than groups ({k})"
        raise InsufficientData(msg)

    pooled = np.concatenate(arrays)
    if np.all(pooled == pooled[0]):
        return 1.0

    grand_mean = pooled.mean()
    between = sum(a.size * (a.mean() - grand_mean) ** 2 for a in arrays)
    within = sum(((a - a.mean()) ** 2).sum() for a in arrays)
    if within == 0:
        return 0.0 if between > 0 else 1.0

    df_between, df_within = k - 1, n - k
    ratio = (between / df_between) / (within / df_within)
    x = df_within / (df_within + df_between * ratio)
    return float(special.betainc(df_within / 2.0, df_between / 2.0, x))


def classify(
    dendrogram: Dendrogram,
    matrices: Mapping[NodeId, TransitionMatrix],
    params: DetectorParams,
) -> ClassificationResult:
    """Walk the dendrogram cuts and decide which neighbors are selfish.

    For ``k = 2 .. R`` the neighbors' cooperation scores are grouped by ``cut(k)``. If
    ``P_k < beta`` the lowest-mean cluster is Selfish and everyone else Cooperative. If
    ``P_k`` rises above the previous ``P`` (with ``P_1 = 1``) everyone is Cooperative. When
    neither happens the neighbors are Unascertained.

    Args:
        dendrogram: Single-linkage dendrogram over the same nodes as ``matrices``.
        matrices: Aggregated transition matrix per neighbor.
        params: Supplies ``beta``.

    Returns:
        Verdicts, scores and the ``P_k`` sequence.
    """
    labels = dendrogram.labels
    scores = {node: cooperation_score(matrices[node]) for node in labels}
    p_sequence: list[tuple[int, float]] = []
    previous = 1.0

    for k in range(2, len(labels) + 1):
        partition = dendrogram.cut(k)
        try:
            p_k = anova_p([[scores[node] for node in cluster] for cluster in partition])
        except InsufficientData:
            continue
        p_sequence.append((k, p_k))

        if p_k < params.beta:
            lowest = min(partition, key=lambda c: float(np.mean([scores[n] for n in c])))
            verdicts = {
                node: Verdict.SELFISH if node in lowest else Verdict.COOPERATIVE for node in labels
            }
            return ClassificationResult(verdicts, scores, p_sequence, chosen_k=k)

        if p_k > previous:
            return ClassificationResult(
                dict.fromkeys(labels, Verdict.COOPERATIVE), scores, p_sequence, chosen_k=k
            )
        previous = p_k

    return ClassificationResult(dict.fromkeys(labels, Verdict.UNASCERTAINED), scores, p_sequence)


def detect_neighborhood(
    matrices: Mapping[NodeId, TransitionMatrix], params: DetectorParams
) -> DetectionReport:
    """Run the whole statistical pipeline over one monitor's neighbors.

    Args:
        matrices: Aggregated transition matrix per monitored neighbor.
        params: Detector parameters.

    Returns:
        The similarity and dissimilarity matrices, dendrogram and classification.
    """
    lmatrix = similarity_matrix(matrices, params)
    dmatrix = dissimilarity_matrix(lmatrix)
    dendrogram = single_linkage(dmatrix)
    result = classify(dendrogram, matrices, params)
    logger.trace(
        f"DETECT: {len(lmatrix.labels)} neighbors, P_k {result.p_sequence}, k={result.chosen_k}"
    )
    return DetectionReport(lmatrix, dmatrix, dendrogram, result)
