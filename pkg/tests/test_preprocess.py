import numpy as np
import pytest

from modelwatch.core import Record
from modelwatch.drift.preprocess import (
    DimensionMismatch,
    ModelUnavailable,
    RandomProjection,
    project_random,
    reduce_bbsd,
)
from modelwatch.encoding import RecordEncoder, encode_numeric

from conftest import RuleModel, reference_from_array


def test_projection_seeded_and_shaped():
    v = np.random.default_rng(0).normal(size=(10, 6))
    a = project_random(v, 3, seed=11)
    assert a.shape == (10, 3)
    np.testing.assert_array_equal(a, project_random(v, 3, seed=11))
    assert not np.allclose(a, project_random(v, 3, seed=12))


def test_projection_is_linear():
    p = RandomProjection(5, 2, seed=1)
    rng = np.random.default_rng(1)
    u, w = rng.normal(size=(1, 5)), rng.normal(size=(1, 5))
    np.testing.assert_allclose(p(2 * u + w), 2 * p(u) + p(w), atol=1e-12)


def test_projection_entry_variance_is_one_over_k():
    p = RandomProjection(400, 50, seed=3)
    assert p.matrix.var() == pytest.approx(1 / 50, rel=0.05)


def test_projection_preserves_norms_roughly():
    v = np.random.default_rng(2).normal(size=(200, 100))
    z = project_random(v, 60, seed=0)
    ratio = np.linalg.norm(z, axis=1) ** 2 / np.linalg.norm(v, axis=1) ** 2
    assert abs(np.median(ratio) - 1) < 0.15


def test_projection_dimension_errors():
    with pytest.raises(DimensionMismatch):
        RandomProjection(3, 4)
    with pytest.raises(DimensionMismatch):
        RandomProjection(3, 2)(np.zeros((2, 4)))


def test_bbsd_uses_model_outputs():
    recs = [Record((0.9, 0.1)), Record((0.2, 0.4))]
    out = reduce_bbsd(recs, RuleModel())
    np.testing.assert_array_equal(out, [[0, 1], [1, 0]])


def test_bbsd_wraps_client_failures():
    class Broken:
        def predict(self, instances):
            raise ConnectionError("down")

    with pytest.raises(ModelUnavailable):
        reduce_bbsd([Record((1.0,))], Broken())


def test_encoder_standardizes_and_one_hots(mixed_schema):
    from modelwatch.core import ReferenceSet

    ref = ReferenceSet(mixed_schema, [Record((1.0, "red", 5.0)), Record((3.0, "blue", 5.0))])
    enc = RecordEncoder(ref)
    # score is constant on the reference and dropped
    assert enc.names == ["age", "color=red", "color=green", "color=blue"]
    out = enc.transform(ref.records)
    np.testing.assert_allclose(out[:, 0], [-1 / np.sqrt(2), 1 / np.sqrt(2)])
    np.testing.assert_array_equal(out[:, 1:], [[1, 0, 0], [0, 0, 1]])
    assert RecordEncoder(ref, drop_first=True).dim == 3


def test_encode_numeric_raw():
    ref = reference_from_array(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(encode_numeric(ref.records, ref.schema), [[1, 2], [3, 4]])
