import math

import numpy as np
import pytest

from oe_forge import pipeline
from oe_forge.embedstore import EmbeddingSet, LabelSpace
from oe_forge.errors import ParameterError, ShapeError, ValidationError, WindowUnderflowError
from oe_forge.gaussian_stats import class_log_densities, from_moments
from oe_forge.pipeline import (
    FilterConfig,
    ceil_fraction,
    exclude_labels,
    inject_noise,
    mahalanobis_filter,
    rank_window_filter,
    synthesize_virtual_outliers,
)


def text_set(rows, texts):
    meta = tuple({"text": t} for t in texts)
    return EmbeddingSet(data=np.asarray(rows, dtype=np.float32), meta=meta)


def angle_candidates(n):
    """Candidates on the unit circle; similarity rank to (1, 0) equals index."""
    angles = np.linspace(0.0, np.pi, n)
    rows = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return text_set(rows, [f"w{i}" for i in range(n)])


def one_class_images():
    return EmbeddingSet(data=np.array([[2.0, 0.0]], dtype=np.float32),
                        labels=np.array([0]))


# ------------------------------------------------------------- rank window

def test_rank_window_hand_example():
    cands = angle_candidates(6)
    out = rank_window_filter(cands, one_class_images(), FilterConfig(k=2, delta=2))
    # brute-force oracle: rank candidates by descending cosine similarity
    sims = cands.data.astype(np.float64) @ np.array([1.0, 0.0])
    order = np.argsort(-sims, kind="stable")
    expected = cands.data[order[2:4]]
    assert np.array_equal(out.embeddings.data, expected)
    assert out.trail[-1].params["k"] == 2


def test_rank_window_full():
    cands = angle_candidates(5)
    out = rank_window_filter(cands, one_class_images(), FilterConfig(k=0, delta=5))
    assert out.count == 5


def test_rank_window_duplicate_class_means():
    cands = angle_candidates(8)
    one = rank_window_filter(cands, one_class_images(), FilterConfig(k=1, delta=3))
    imgs2 = EmbeddingSet(data=np.array([[2.0, 0.0], [2.0, 0.0]], dtype=np.float32),
                         labels=np.array([0, 1]))
    two = rank_window_filter(cands, imgs2, FilterConfig(k=1, delta=3))
    assert np.array_equal(one.embeddings.data, two.embeddings.data)


@pytest.mark.parametrize("n", range(2, 21))
def test_rank_window_size_exhaustive(n):
    cands = angle_candidates(n)
    imgs = one_class_images()
    for k in range(0, n):
        for delta in range(1, n + 2):
            out = rank_window_filter(cands, imgs, FilterConfig(k=k, delta=delta))
            assert out.count == min(delta, n - k)


def test_rank_window_underflow():
    cands = angle_candidates(3)
    with pytest.raises(WindowUnderflowError, match="3"):
        rank_window_filter(cands, one_class_images(), FilterConfig(k=3, delta=1))


def test_rank_window_tie_breaks_by_row_index():
    rows = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]
    cands = text_set(rows, ["a", "b", "c"])
    out = rank_window_filter(cands, one_class_images(), FilterConfig(k=0, delta=2))
    assert out.embeddings.texts() == ["a", "c"]


def test_rank_window_needs_text():
    cands = EmbeddingSet(data=np.eye(2, dtype=np.float32))
    with pytest.raises(ValidationError):
        rank_window_filter(cands, one_class_images(), FilterConfig(k=0, delta=1))


def test_rank_window_dim_mismatch():
    cands = text_set(np.eye(3), ["a", "b", "c"])
    with pytest.raises(ShapeError):
        rank_window_filter(cands, one_class_images(), FilterConfig(k=0, delta=1))


# ---------------------------------------------------------- exclude labels

def test_exclude_labels_direct():
    cands = text_set(np.eye(2), ["a photo of dog", "a photo of lake"])
    out = exclude_labels(cands, LabelSpace(["dog", "cat"]))
    assert out.embeddings.texts() == ["a photo of lake"]


def test_exclude_labels_noop():
    cands = text_set(np.eye(3), ["x", "y", "z"])
    out = exclude_labels(cands, LabelSpace(["dog", "cat"]))
    assert out.count == 3


@pytest.mark.parametrize("variant", ["Dog", "DOG", "dOg", "a big DoG here"])
def test_exclude_labels_casefold(variant):
    cands = text_set(np.eye(2), [variant, "safe"])
    out = exclude_labels(cands, LabelSpace(["dog", "cat"]))
    assert out.embeddings.texts() == ["safe"]


def test_exclude_labels_random_casings(rng):
    base = "speckled newt in moss"
    keep = ["granite field", "open water"]
    for _ in range(50):
        cased = "".join(ch.upper() if rng.random() < 0.5 else ch for ch in base)
        cands = text_set(np.eye(3), [cased, keep[0], keep[1]])
        out = exclude_labels(cands, LabelSpace(["newt", "heron"]))
        assert out.embeddings.texts() == keep


def test_exclude_labels_empty_result_allowed():
    cands = text_set(np.eye(2), ["dog one", "dog two"])
    out = exclude_labels(cands, LabelSpace(["dog", "cat"]))
    assert out.count == 0


# ------------------------------------------------------------- mahalanobis

def single_mean_stats():
    return from_moments([[0.0, 0.0]], np.eye(2), [2])


def test_mahalanobis_filter_farthest():
    cands = text_set([[0, 0], [1, 0], [3, 0]], ["o", "m", "f"])
    out = mahalanobis_filter(cands, single_mean_stats(),
                             FilterConfig(p=1 / 3, direction="farthest"))
    assert out.embeddings.texts() == ["f"]
    assert out.trail[-1].params["cut_score"] == pytest.approx(-9.0)


def test_mahalanobis_filter_nearest():
    cands = text_set([[0, 0], [1, 0], [3, 0]], ["o", "m", "f"])
    out = mahalanobis_filter(cands, single_mean_stats(),
                             FilterConfig(p=1 / 3, direction="nearest"))
    assert out.embeddings.texts() == ["o"]


def test_mahalanobis_filter_keep_all_rank_order():
    cands = text_set([[1, 0], [3, 0], [0, 0]], ["m", "f", "o"])
    out = mahalanobis_filter(cands, single_mean_stats(), FilterConfig(p=1.0))
    assert out.embeddings.texts() == ["f", "m", "o"]


@pytest.mark.parametrize("p,n,expected", [
    (0.15, 100, 15),
    (0.15, 7, 2),
    (0.5, 3, 2),
    (1.0, 9, 9),
    (0.1, 10, 1),
    (0.2, 35, 7),
])
def test_ceil_fraction_guard(p, n, expected):
    assert ceil_fraction(p, n) == expected


@pytest.mark.parametrize("n", [1, 4, 10, 33, 100])
def test_mahalanobis_filter_count_exact(rng, n):
    cands = EmbeddingSet(data=rng.normal(size=(n, 2)).astype(np.float32))
    out = mahalanobis_filter(cands, single_mean_stats(), FilterConfig(p=0.15))
    assert out.count == math.ceil(round(0.15 * n, 9))


def test_mahalanobis_filter_tie_break(rng):
    rows = np.array([[2.0, 0.0], [0.0, 2.0], [1.0, 0.0]], dtype=np.float32)
    out = mahalanobis_filter(EmbeddingSet(data=rows), single_mean_stats(),
                             FilterConfig(p=1 / 3, direction="farthest"))
    assert np.array_equal(out.embeddings.data, rows[:1])


def test_filter_outputs_are_input_rows(rng):
    cands = EmbeddingSet(data=rng.normal(size=(30, 2)).astype(np.float32))
    out = mahalanobis_filter(cands, single_mean_stats(), FilterConfig(p=0.4))
    pool = {row.tobytes() for row in cands.data}
    assert all(row.tobytes() in pool for row in out.embeddings.data)


# ----------------------------------------------------------------- chained

def test_trail_chains_across_ops():
    cands = text_set([[0, 1], [1, 0], [2, 2], [0, 3]], ["dog a", "b", "c", "d"])
    step1 = exclude_labels(cands, LabelSpace(["dog", "cat"]))
    step2 = mahalanobis_filter(step1, single_mean_stats(), FilterConfig(p=0.5))
    assert [s.op for s in step2.trail] == ["exclude_labels", "mahalanobis_filter"]
    assert step2.trail[0].rows_out == step2.trail[1].rows_in
    assert step2.trail[1].rows_out == step2.count
    assert step2.provenance == "description"


def test_trail_validation():
    es = EmbeddingSet(data=np.eye(2, dtype=np.float32))
    bad = (pipeline.TrailStep("a", {}, 10, 5), pipeline.TrailStep("b", {}, 6, 2))
    with pytest.raises(ValidationError, match="trail broken"):
        pipeline.OutlierSet(embeddings=es, provenance="word", trail=bad)


# ----------------------------------------------------------------- synthesis

def test_synthesize_all_kept_in_draw_order():
    stats = from_moments([[0.0, 0.0], [5.0, 5.0]], np.eye(2), [3, 3])
    out = synthesize_virtual_outliers(stats, samples_per_class=4, keep_per_class=4, seed=9)
    rng = np.random.Generator(np.random.PCG64(9))
    expected = []
    for c in range(2):
        z = rng.standard_normal((4, 2))
        expected.append(stats.means[c] + z @ stats.factor.T)
    assert np.array_equal(out.embeddings.data, np.vstack(expected).astype(np.float32))
    assert out.provenance == "virtual"


def test_synthesize_keeps_lowest_density():
    stats = from_moments([[0.0, 0.0], [8.0, 8.0]], np.eye(2), [3, 3])
    t, m = 50, 10
    out = synthesize_virtual_outliers(stats, t, m, seed=3)
    rng = np.random.Generator(np.random.PCG64(3))
    for c in range(2):
        z = rng.standard_normal((t, 2))
        samples = stats.means[c] + z @ stats.factor.T
        dens = class_log_densities(stats, samples, c)
        kept = out.embeddings.data[c * m:(c + 1) * m].astype(np.float64)
        kept_dens = class_log_densities(stats, kept, c)
        discarded = sorted(dens)[m:]
        assert kept_dens.max() <= min(discarded) + 1e-9


def test_synthesize_deterministic():
    stats = from_moments([[0.0, 0.0], [3.0, 1.0]], np.eye(2), [2, 2])
    a = synthesize_virtual_outliers(stats, 6, 3, seed=42)
    b = synthesize_virtual_outliers(stats, 6, 3, seed=42)
    assert np.array_equal(a.embeddings.data, b.embeddings.data)


def test_synthesize_rejects_bad_keep():
    stats = single_mean_stats()
    with pytest.raises(ParameterError):
        synthesize_virtual_outliers(stats, 3, 4, seed=0)


# --------------------------------------------------------------------- noise

def test_inject_noise_zero_variance_bitwise(rng):
    es = EmbeddingSet(data=rng.normal(size=(5, 3)).astype(np.float32))
    out = inject_noise(es, 0.0, seed=1)
    assert np.array_equal(out.data, es.data)


def test_inject_noise_statistics():
    variance = 0.016
    es = EmbeddingSet(data=np.zeros((1000, 1000), dtype=np.float32))
    out = inject_noise(es, variance, seed=7)
    flat = out.data.astype(np.float64).ravel()
    n = flat.size
    assert abs(flat.var() - variance) < 0.05 * variance
    assert abs(flat.mean()) < 3.0 * np.sqrt(variance) / np.sqrt(n)


def test_inject_noise_deterministic(rng):
    es = EmbeddingSet(data=rng.normal(size=(4, 4)).astype(np.float32))
    assert np.array_equal(inject_noise(es, 0.01, 5).data, inject_noise(es, 0.01, 5).data)


def test_filter_config_validation():
    with pytest.raises(ParameterError):
        FilterConfig(k=-1)
    with pytest.raises(ParameterError):
        FilterConfig(delta=0)
    with pytest.raises(ParameterError):
        FilterConfig(p=0.0)
    with pytest.raises(ParameterError):
        FilterConfig(p=1.5)
    with pytest.raises(ParameterError):
        FilterConfig(direction="sideways")
    with pytest.raises(ParameterError):
        FilterConfig(noise_variance=-0.1)
