import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline

from divasim.device import permute_bits
from divasim.ecc import ShuffleLayout, correctable_fraction, synthetic_log
from divasim.estimators import DivaShuffler, RowMappingEstimator
from divasim.harness import ErrorLog
from divasim.mapping import estimate_row_mapping


def test_row_mapping_estimator_matches_function():
    perm = (2, 0, 1, 3)
    counts = permute_bits(np.arange(16), perm).astype(float)
    est = RowMappingEstimator().fit(counts)
    assert est.permutation_ == estimate_row_mapping(counts).permutation == perm
    assert est.score(counts) == 1.0
    assert np.array_equal(est.predict(np.arange(16)), permute_bits(np.arange(16), perm))
    assert est.transform([3, 4]).shape == (2, 1)
    with pytest.raises(ValueError):
        est.predict([16])


def test_row_mapping_params_and_clone():
    est = RowMappingEstimator(nbits=3, method="greedy")
    assert est.get_params() == {"nbits": 3, "method": "greedy"}
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    with pytest.raises(NotFittedError):
        twin.predict([0])


def test_row_mapping_rejects_nan():
    with pytest.raises(ValueError):
        RowMappingEstimator().fit([0.0, np.nan, 1.0, 2.0])


def test_shuffler_matches_function():
    log = synthetic_log(2, 500)
    sh = DivaShuffler().fit(log)
    assert sh.layout_ == ShuffleLayout.diva()
    assert sh.score(log) == correctable_fraction(log, ShuffleLayout.diva())
    assert sh.transform(log).bit_count() == log.bit_count()
    assert np.isnan(sh.score(ErrorLog.empty()))
    with pytest.raises(TypeError):
        DivaShuffler().fit(np.zeros(3))
    with pytest.raises(NotFittedError):
        DivaShuffler().transform(log)


def test_shuffler_in_a_pipeline():
    log = synthetic_log(5, 300)
    pipe = Pipeline([("shuffle", DivaShuffler(layout="rotate"))])
    out = pipe.fit(log).transform(log)
    back = DivaShuffler(layout=ShuffleLayout.rotation().inverse()).fit(out).transform(out)
    assert back == log
    assert clone(pipe).get_params()["shuffle__layout"] == "rotate"
