import numpy as np
import pytest
from sklearn.base import clone

from helpers import TINY
from msgc import MSGCForecaster, synthesize, windowize
from msgc.exceptions import DimensionError
from msgc.network import init_parameters


@pytest.fixture(scope="module")
def dataset():
    table, graph = synthesize(n_nodes=4, days=7, interval_minutes=60, seed=3)
    return windowize(table, 2, 2), graph


def make(**kw):
    return MSGCForecaster(**{**TINY, "interval_minutes": 60.0, "max_epochs": 2, **kw})


def test_sklearn_parameter_protocol():
    est = make(seed=3)
    assert est.get_params()["seed"] == 3
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    est.set_params(fusion_dim=4)
    assert est.get_config().fusion_dim == 4


def test_fit_predict_shapes_and_raw_units(dataset):
    ds, graph = dataset
    est = make().fit(ds, graph=graph)
    pred = est.predict(ds.test)
    assert pred.shape == ds.test.y.shape
    assert abs(pred.mean() - ds.test.y.mean()) < 5 * ds.test.y.std()
    assert len(est.history_) == 2
    m = est.evaluate(ds)
    assert len(m["per_step"]) == 2 and est.score(ds) == -m["MAE"]


def test_checkpoint_round_trip_is_bitwise(dataset, tmp_path):
    ds, graph = dataset
    est = make().fit(ds, graph=graph)
    est.save(tmp_path / "a.zip")
    back = MSGCForecaster.load(tmp_path / "a.zip")
    back.save(tmp_path / "b.zip")
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()
    np.testing.assert_array_equal(back.predict(ds.test), est.predict(ds.test))
    assert back.evaluate(ds) == est.evaluate(ds)


def test_zero_epochs_keeps_initialization(dataset):
    ds, graph = dataset
    est = make(max_epochs=0).fit(ds, graph=graph)
    init = init_parameters(est.get_config())
    for k, v in init.items():
        np.testing.assert_array_equal(est.params_[k], v.data)
    assert est.history_ == []


def test_warm_start_resume_matches_uninterrupted_run(dataset, tmp_path):
    ds, graph = dataset
    full = make(max_epochs=3).fit(ds, graph=graph)
    part = make(max_epochs=1).fit(ds, graph=graph)
    part.save(tmp_path / "p.zip")
    resumed = MSGCForecaster.load(tmp_path / "p.zip")
    resumed.set_params(max_epochs=3, warm_start=True)
    resumed.fit(ds, graph=graph)
    assert resumed.history_ == full.history_
    for k in full.params_:
        np.testing.assert_array_equal(resumed.params_[k], full.params_[k])


def test_mismatched_windows_are_rejected(dataset):
    ds, graph = dataset
    with pytest.raises(DimensionError):
        make(n_input_steps=3).fit(ds, graph=graph)
    with pytest.raises(DimensionError):
        make(interval_minutes=5.0).fit(ds, graph=graph)
    other, _ = synthesize(n_nodes=5, days=7, interval_minutes=60, seed=1)
    with pytest.raises(DimensionError):
        make().fit(windowize(other, 2, 2), graph=graph)


def test_precomputed_embeddings_are_used(dataset):
    ds, graph = dataset
    sp = np.zeros((4, 8))
    tp = np.ones((7 * 24, 8))
    est = make(max_epochs=0).fit(ds, graph=graph, spatial_embedding=sp, temporal_embedding=tp)
    np.testing.assert_array_equal(est.constants_["spatial_embedding"], sp)
    with pytest.raises(DimensionError):
        make(max_epochs=0).fit(ds, graph=graph, spatial_embedding=sp, temporal_embedding=tp[:5])
