# type: ignore
"""Test the statistical classification pipeline."""

import itertools

import numpy as np
import pytest
from scipy import stats as scipy_stats

from selfish_mesh.monitor import TransitionMatrix
from selfish_mesh.stats import (
    COOPERATIVE_TRANSITIONS,
    SELFISH_TRANSITIONS,
    Dendrogram,
    DetectorParams,
    DissimilarityMatrix,
    Merge,
    SimilarityMatrix,
    Verdict,
    anova_p,
    chi2_critical,
    classify,
    cooperation_score,
    detect_neighborhood,
    dissimilarity,
    dissimilarity_matrix,
    dissimilarity_terms,
    pearson_row_test,
    similarity_L,
    single_linkage,
)
from selfish_mesh.utils import DomainError, InsufficientData


def _matrix(cells: dict[tuple[int, int], int]) -> TransitionMatrix:
    matrix = TransitionMatrix()
    for (i, j), count in cells.items():
        matrix.record(i, j, count)
    return matrix


def _brute_force_partitions(values: np.ndarray) -> dict[int, list[tuple[int, ...]]]:
    """Naive single linkage re-scanning every cross-cluster pair after each merge."""
    size = len(values)
    clusters = [[i] for i in range(size)]
    partitions = {size: [tuple(c) for c in clusters]}
    while len(clusters) > 1:
        best = None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            link = min(values[x, y] for x in clusters[a] for y in clusters[b])
            if best is None or link < best[0]:
                best = (link, a, b)
        _, a, b = best
        clusters[a] = sorted(clusters[a] + clusters.pop(b))
        clusters.sort(key=lambda c: c[0])
        partitions[len(clusters)] = [tuple(c) for c in clusters]
    return partitions


@pytest.mark.parametrize(
    ("df", "alpha", "expected"),
    [(7, 0.1, 12.017), (1, 0.5, 0.4549)],
)
def test_chi2_critical_table(df, alpha, expected):
    """Test chi2_critical against tabulated values."""
    assert chi2_critical(df, alpha) == pytest.approx(expected, abs=1e-3)


@pytest.mark.parametrize("df", [1, 2, 5, 7, 30, 200])
@pytest.mark.parametrize("alpha", [0.001, 0.05, 0.1, 0.5, 0.9])
def test_chi2_critical_reference(df, alpha):
    """Test chi2_critical against scipy's inverse survival function."""
    assert chi2_critical(df, alpha) == pytest.approx(scipy_stats.chi2.isf(alpha, df), rel=1e-9)


@pytest.mark.parametrize(("df", "alpha"), [(0, 0.1), (1.5, 0.1), (7, 0.0), (7, 1.0)])
def test_chi2_critical_domain(df, alpha):
    """Test chi2_critical rejects invalid arguments."""
    with pytest.raises(DomainError):
        chi2_critical(df, alpha)


def test_chi2_critical_limit():
    """Test that the critical value vanishes as alpha approaches 1."""
    assert chi2_critical(3, 1 - 1e-9) < 1e-2


def test_pearson_row_test_examples():
    """Test pearson_row_test on hand-computed rows."""
    # WHEN both rows are identical
    result = pearson_row_test([3, 4, 0, 0, 0, 0, 0, 0], [3, 4, 0, 0, 0, 0, 0, 0], 0.1)
    assert result.chi2 == pytest.approx(0.0, abs=1e-12)
    assert not result.reject

    # WHEN every transition went to a different column
    result = pearson_row_test([10, 0, 0, 0, 0, 0, 0, 0], [0, 10, 0, 0, 0, 0, 0, 0], 0.1)
    assert result.chi2 == 20.0
    assert result.reject

    # WHEN either row is too thin
    assert not pearson_row_test([0] * 8, [0] * 8, 0.1).applicable
    result = pearson_row_test([4, 0, 0, 0, 0, 0, 0, 0], [0, 10, 0, 0, 0, 0, 0, 0], 0.1)
    assert not result.applicable
    assert not result.reject

    with pytest.raises(DomainError):
        pearson_row_test([1, 2], [1, 2, 3], 0.1)
    with pytest.raises(DomainError):
        pearson_row_test([1, -2], [1, 2], 0.1)


def test_pearson_row_test_reference():
    """Test the statistic against scipy's contingency test on random rows."""
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        rows = rng.integers(0, 15, size=(2, 8))
        rows[0, 0] += 1
        rows[1, 1] += 1

        table = rows[:, rows.sum(axis=0) > 0]
        expected = scipy_stats.chi2_contingency(table, correction=False)[0]
        result = pearson_row_test(rows[0], rows[1], 0.1, min_row_total=1)

        assert abs(result.chi2 - expected) <= 1e-9
        assert result.reject == (expected > chi2_critical(7, 0.1))


def test_similarity_L():
    """Test similarity_L."""
    params = DetectorParams()
    honest = _matrix({(3, 4): 20, (4, 7): 10, (6, 7): 6})

    same = similarity_L(honest, honest.copy(), params)
    assert same.L == 1.0
    assert same.S == 0

    # WHEN two rows are distributed differently
    other = _matrix({(3, 5): 20, (4, 5): 10, (6, 7): 6})
    result = similarity_L(honest, other, params)
    assert result.S == 2
    assert result.rejections.bits == (0, 0, 1, 1, 0, 0, 0, 0)
    assert result.L == pytest.approx(0.01)


def test_dissimilarity_worked_example():
    """Test d for two nodes with opposite similarity profiles."""
    values = np.ones((5, 5))
    values[0, 2:] = values[2:, 0] = (1.0, 1.0, 0.1)
    values[1, 2:] = values[2:, 1] = (0.1, 0.1, 1.0)
    values[0, 1] = values[1, 0] = 0.01
    lmatrix = SimilarityMatrix(labels=(0, 1, 2, 3, 4), values=values)

    terms = dissimilarity_terms(lmatrix, 0, 1)
    assert terms.shared == pytest.approx(0.3)
    assert terms.r_total == pytest.approx(2.1)
    assert terms.s_total == pytest.approx(1.2)
    assert dissimilarity(lmatrix, 0, 1) == pytest.approx(27 / 28, abs=1e-12)

    # L_rs itself does not enter the result
    values[0, 1] = values[1, 0] = 1.0
    assert dissimilarity(lmatrix, 0, 1) == pytest.approx(27 / 28, abs=1e-12)


def test_dissimilarity_properties():
    """Test d on random similarity matrices."""
    rng = np.random.default_rng(11)
    for _ in range(2500):
        size = int(rng.integers(3, 7))
        upper = np.triu(rng.choice([1.0, 0.1, 0.01, 0.001], size=(size, size)), k=1)
        values = upper + upper.T + np.eye(size)
        lmatrix = SimilarityMatrix(labels=tuple(range(size)), values=values)

        dmatrix = dissimilarity_matrix(lmatrix)
        assert ((dmatrix.values >= 0) & (dmatrix.values <= 1)).all()
        assert np.array_equal(dmatrix.values, dmatrix.values.T)
        assert (np.diag(dmatrix.values) == 0).all()

    # WHEN two nodes relate identically to every third node
    values = np.array(
        [
            [1.0, 0.1, 0.5, 0.01],
            [0.1, 1.0, 0.5, 0.01],
            [0.5, 0.5, 1.0, 0.3],
            [0.01, 0.01, 0.3, 1.0],
        ]
    )
    lmatrix = SimilarityMatrix(labels=(0, 1, 2, 3), values=values)
    assert dissimilarity(lmatrix, 0, 1) == pytest.approx(0.0, abs=1e-15)


def test_dissimilarity_pairwise_fallback():
    """Test that two-node neighborhoods fall back to 1 - L."""
    lmatrix = SimilarityMatrix(labels=(4, 9), values=np.array([[1.0, 0.1], [0.1, 1.0]]))

    assert dissimilarity_terms(lmatrix, 4, 9) is None
    assert dissimilarity(lmatrix, 4, 9) == pytest.approx(0.9)
    assert dissimilarity(lmatrix, 4, 4) == 0.0


def test_single_linkage_examples():
    """Test single_linkage on small matrices."""
    dist = DissimilarityMatrix(
        labels=(0, 1, 2),
        values=np.array([[0.0, 0.1, 0.9], [0.1, 0.0, 0.8], [0.9, 0.8, 0.0]]),
    )
    dendrogram = single_linkage(dist)
    assert dendrogram.merges == (
        Merge(left=(0,), right=(1,), height=0.1),
        Merge(left=(0, 1), right=(2,), height=0.8),
    )
    assert dendrogram.cut(2) == [(0, 1), (2,)]
    assert dendrogram.cut(3) == [(0,), (1,), (2,)]
    assert dendrogram.cut(1) == [(0, 1, 2)]

    # WHEN every distance ties
    # THEN the smallest members merge first
    flat = DissimilarityMatrix(labels=(3, 5, 7, 8), values=np.full((4, 4), 0.5) - 0.5 * np.eye(4))
    assert [(m.left, m.right) for m in single_linkage(flat).merges] == [
        ((3,), (5,)),
        ((3, 5), (7,)),
        ((3, 5, 7), (8,)),
    ]

    for k in (0, 4):
        with pytest.raises(DomainError):
            dendrogram.cut(k)


def test_single_linkage_oracle():
    """Test single_linkage partitions against a brute-force agglomeration."""
    rng = np.random.default_rng(5)
    for _ in range(100):
        upper = np.triu(rng.integers(1, 6, size=(10, 10)) / 5.0, k=1)
        values = upper + upper.T
        dendrogram = single_linkage(DissimilarityMatrix(labels=tuple(range(10)), values=values))

        heights = [m.height for m in dendrogram.merges]
        assert heights == sorted(heights)

        expected = _brute_force_partitions(values)
        for k in range(1, 11):
            assert dendrogram.cut(k) == expected[k]


@pytest.mark.parametrize(
    ("cells", "expected"),
    [
        ({}, 0.0),
        ({(3, 4): 6, (6, 7): 2}, 2.0),
        ({(3, 5): 4}, -2.0),
        ({(3, 4): 4, (3, 5): 2, (1, 3): 50}, 0.0),
    ],
)
def test_cooperation_score(cells, expected):
    """Test cooperation_score."""
    assert cooperation_score(_matrix(cells)) == expected


def test_cooperation_score_monotone():
    """Test that cooperative counts only raise the score and selfish counts only lower it."""
    rng = np.random.default_rng(3)
    for _ in range(200):
        matrix = TransitionMatrix(rng.integers(0, 10, size=(8, 8)))
        base = cooperation_score(matrix)
        for cell in COOPERATIVE_TRANSITIONS:
            better = matrix.copy()
            better.record(*cell, times=int(rng.integers(1, 5)))
            assert cooperation_score(better) >= base
        for cell in SELFISH_TRANSITIONS:
            worse = matrix.copy()
            worse.record(*cell, times=int(rng.integers(1, 5)))
            assert cooperation_score(worse) <= base


def test_anova_p():
    """Test anova_p."""
    assert anova_p([[1, 1, 1], [5, 5, 5]]) == 0.0
    assert anova_p([[2, 2, 2], [2, 2], [2]]) == 1.0

    expected = scipy_stats.f_oneway([1, 2, 3], [2, 3, 4]).pvalue
    assert anova_p([[1, 2, 3], [2, 3, 4]]) == pytest.approx(expected, abs=1e-8)

    rng = np.random.default_rng(8)
    for _ in range(100):
        groups = [rng.normal(size=int(rng.integers(2, 6))).tolist() for _ in range(3)]
        expected = scipy_stats.f_oneway(*groups).pvalue
        assert anova_p(groups) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("groups", [[[1], [2]], [[], [1, 2]], [[1, 2, 3]], [[1], [2], [3]]])
def test_anova_p_insufficient(groups):
    """Test anova_p rejects degenerate groupings."""
    with pytest.raises(InsufficientData):
        anova_p(groups)


def test_classify_bimodal():
    """Test that the low-scoring cluster is flagged."""
    matrices = {n: _matrix({(3, 5): 10}) for n in (0, 1, 2)}
    matrices |= {n: _matrix({(3, 4): 20}) for n in (3, 4, 5)}

    report = detect_neighborhood(matrices, DetectorParams())
    result = report.result

    assert result.chosen_k == 2
    assert result.p_sequence == [(2, 0.0)]
    assert result.verdicts == {
        0: Verdict.SELFISH,
        1: Verdict.SELFISH,
        2: Verdict.SELFISH,
        3: Verdict.COOPERATIVE,
        4: Verdict.COOPERATIVE,
        5: Verdict.COOPERATIVE,
    }
    assert result.scores[0] == -5.0
    assert result.scores[3] == 5.0
    assert report.similarity.values[0, 3] == pytest.approx(0.1)
    assert report.dissimilarity.values[0, 1] == 0.0
    assert report.dendrogram.cut(2) == [(0, 1, 2), (3, 4, 5)]


def test_classify_identical():
    """Test that indistinguishable neighbors are never flagged."""
    matrices = {n: _matrix({(3, 4): 20, (4, 7): 5}) for n in range(6)}

    result = detect_neighborhood(matrices, DetectorParams()).result

    assert set(result.verdicts.values()) == {Verdict.UNASCERTAINED}
    assert all(p == 1.0 for _, p in result.p_sequence)
    assert result.chosen_k is None


def test_classify_rising_p():
    """Test that a rising P_k clears every neighbor."""
    # GIVEN scores 0..5 and a dendrogram that separates odd from even first
    matrices = {n: _matrix({(3, 4): 4 * n}) for n in range(6)}
    dendrogram = Dendrogram(
        labels=tuple(range(6)),
        merges=(
            Merge((1,), (3,), 0.1),
            Merge((1, 3), (5,), 0.2),
            Merge((0,), (4,), 0.3),
            Merge((0, 4), (2,), 0.4),
            Merge((0, 2, 4), (1, 3, 5), 0.5),
        ),
    )

    result = classify(dendrogram, matrices, DetectorParams())

    # THEN P_2 is above beta and P_3 rises above it
    (k2, p2), (k3, p3) = result.p_sequence
    assert (k2, k3) == (2, 3)
    assert 0.4 < p2 < p3
    assert result.chosen_k == 3
    assert set(result.verdicts.values()) == {Verdict.COOPERATIVE}
