import numpy as np
import pytest

from app.services.similarity import (
    SimilarityError,
    l2_distance,
    linear_cka,
    pairwise_similarity,
    violin_summary,
)


@pytest.fixture
def outputs():
    return np.random.default_rng(8).dirichlet(np.ones(5), size=40)


def test_l2_identity_and_symmetry(outputs):
    other = np.random.default_rng(9).dirichlet(np.ones(5), size=40)
    assert l2_distance(outputs, outputs) == 0.0
    assert l2_distance(outputs, other) == pytest.approx(l2_distance(other, outputs))


def test_l2_constant_offset():
    a = np.zeros((6, 4))
    assert l2_distance(a, a + 0.3) == pytest.approx(0.3 * np.sqrt(4))


def test_l2_is_not_scale_invariant(outputs):
    assert l2_distance(outputs, 2 * outputs) > 0.0


def test_cka_invariances(outputs):
    q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(5, 5)))
    assert linear_cka(outputs, outputs) == pytest.approx(1.0, abs=1e-9)
    assert linear_cka(outputs, 2.0 * outputs) == pytest.approx(1.0, abs=1e-9)
    assert linear_cka(outputs, outputs @ q) == pytest.approx(1.0, abs=1e-9)


def test_cka_of_unrelated_outputs_is_below_one(outputs):
    other = np.random.default_rng(10).normal(size=(40, 5))
    assert linear_cka(outputs, other) < 1.0 - 1e-9


def test_degenerate_inputs_rejected(outputs):
    with pytest.raises(SimilarityError):
        linear_cka(np.ones((10, 3)), np.ones((10, 3)))
    with pytest.raises(SimilarityError):
        l2_distance(outputs[:1], outputs[:1])
    with pytest.raises(SimilarityError):
        l2_distance(outputs, outputs[:, :3])
    with pytest.raises(SimilarityError):
        linear_cka(outputs, outputs[:10])


def test_pairwise_groups(make_record):
    records = [make_record(s, r) for s in range(2) for r in range(2)]
    rows = pairwise_similarity(records, step=-1, metric="l2")
    assert len(rows) == 6
    assert sum(r["group"] == "within" for r in rows) == 2
    assert all(r["step"] == 0 for r in rows)
    summary = violin_summary(rows)
    assert summary["within"]["count"] == 2 and summary["across"]["count"] == 4
    assert summary["across"]["min"] <= summary["across"]["median"] <= summary["across"]["max"]
    with pytest.raises(SimilarityError):
        pairwise_similarity(records, metric="cosine")
