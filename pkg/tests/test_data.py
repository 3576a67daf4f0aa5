import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msgc.data import (count_windows, export, ingest, inject_faults, subsample, synthesize,
                       windowize)
from msgc.exceptions import DatasetTooSmallError, IngestionError


def write(path, text):
    path.write_text(text)
    return path


def test_ingest_dense_and_gap(tmp_path):
    full = write(tmp_path / "a.csv", "timestamp,node_id,feature_0\n"
                 "2020-01-06T00:00:00,a,1\n2020-01-06T00:00:00,b,2\n"
                 "2020-01-06T00:05:00,a,3\n2020-01-06T00:05:00,b,4\n"
                 "2020-01-06T00:10:00,a,5\n2020-01-06T00:10:00,b,6\n")
    t = ingest(full)
    assert t.values.shape == (3, 2, 1) and t.mask.all()
    assert t.interval_minutes == 5.0 and t.node_ids == ["a", "b"]
    lines = full.read_text().splitlines()
    gap = write(tmp_path / "b.csv", "\n".join(lines[:4] + lines[5:]) + "\n")
    t = ingest(gap)
    assert (~t.mask).sum() == 1 and not t.mask[1, 1, 0]


def test_ingest_missing_timestamp_row_is_a_gap(tmp_path):
    p = write(tmp_path / "r.csv", "timestamp,node_id,feature_0\n"
              "2020-01-06T00:00:00,a,1\n2020-01-06T00:10:00,a,3\n")
    t = ingest(p, interval_minutes=5)
    assert t.n_steps == 3 and not t.mask[1].any()
    p = write(tmp_path / "s.csv", "timestamp,node_id,feature_0\n2020-01-06T00:00:00,a,1\n"
              "2020-01-06T00:05:00,a,2\n2020-01-06T00:10:00,a,2\n2020-01-06T00:20:00,a,3\n")
    t = ingest(p)
    assert t.n_steps == 5 and t.mask[:, 0, 0].tolist() == [True, True, True, False, True]


def test_ingest_errors_name_the_problem(tmp_path):
    irregular = write(tmp_path / "i.csv", "timestamp,node_id,feature_0\n"
                      "2020-01-06T00:00:00,a,1\n2020-01-06T00:05:00,a,1\n"
                      "2020-01-06T00:10:00,a,1\n2020-01-06T00:13:00,a,1\n")
    with pytest.raises(IngestionError, match="00:10:00 -> 2020-01-06T00:13:00"):
        ingest(irregular)
    unknown = write(tmp_path / "u.csv", "timestamp,node_id,feature_0\n"
                    "2020-01-06T00:00:00,zz,1\n2020-01-06T00:05:00,zz,1\n")
    with pytest.raises(IngestionError, match="zz"):
        ingest(unknown, ["a"])
    with pytest.raises(IngestionError):
        ingest(write(tmp_path / "c.csv", "when,who,v\n1,2,3\n"))


def test_export_ingest_round_trip_is_bitwise(tmp_path):
    table, _ = synthesize(n_nodes=3, days=1, interval_minutes=30, seed=2)
    table.mask[4, 1, 0] = False
    table.values[4, 1, 0] = 0.0
    export(table, tmp_path / "r.csv")
    back = ingest(tmp_path / "r.csv", table.node_ids)
    np.testing.assert_array_equal(back.values, table.values)
    np.testing.assert_array_equal(back.mask, table.mask)
    np.testing.assert_array_equal(back.timestamps, table.timestamps)


def test_window_count_and_alignment():
    table, _ = synthesize(n_nodes=2, days=1, interval_minutes=144, seed=0)  # 10 steps
    assert table.n_steps == 10 and count_windows(10, 3, 3) == 10 - 3 - 3 + 1
    ds = windowize(table, 3, 3, split=(1.0, 1.0))
    assert len(ds.train) == 5
    np.testing.assert_array_equal(ds.train.y[0, 0], table.values[3])
    with pytest.raises(DatasetTooSmallError):
        windowize(table.take(0, 5), 3, 3)


def test_splits_are_chronological_and_disjoint():
    table, _ = synthesize(n_nodes=2, days=3, interval_minutes=60, seed=0)
    ds = windowize(table, 3, 2)
    b1, b2 = ds.boundaries
    assert (b1, b2) == (int(0.7 * 72), int(0.8 * 72))
    tr, va, te = ds.train, ds.val, ds.test
    assert (tr.start + 5).max() <= b1 and va.start.min() >= b1 and (va.start + 5).max() <= b2
    assert te.start.min() >= b2
    assert tr.timestamps.max() < va.timestamps.min() and va.timestamps.max() < te.timestamps.min()


def test_windows_flatten_back_to_the_series():
    table, _ = synthesize(n_nodes=3, days=2, interval_minutes=60, seed=1)
    ds = windowize(table, 4, 2)
    values, mask, slots = ds.train.series()
    n = values.shape[0]
    np.testing.assert_array_equal(values, table.values[:n])
    np.testing.assert_array_equal(slots, table.slots()[:n])


def test_weekly_slots_start_on_monday():
    table, _ = synthesize(n_nodes=2, days=8, interval_minutes=60, start="2012-03-05T00:00:00")
    slots = table.slots()
    assert slots[0] == 0 and slots[24] == 24 and slots[7 * 24] == 0 and slots.max() == 167


def test_fault_injection_counts_and_purity():
    table, _ = synthesize(n_nodes=5, days=1, interval_minutes=7.2, seed=0)  # 200 x 5 cells
    assert table.mask.sum() == 1000
    out = inject_faults(table, 0.3, seed=4)
    assert ((out.values == 0) & (table.values != 0)).sum() == 300
    np.testing.assert_array_equal(out.mask, table.mask)
    np.testing.assert_array_equal(inject_faults(table, 0.3, seed=4).values, out.values)
    np.testing.assert_array_equal(inject_faults(table, 0.0, seed=4).values, table.values)
    assert not inject_faults(table, 1.0).values.any()
    with pytest.raises(ValueError):
        inject_faults(table, 1.2)


def test_fault_injection_restricted_rows():
    table, _ = synthesize(n_nodes=2, days=1, interval_minutes=60, seed=0)
    out = inject_faults(table, 1.0, rows=slice(20, None))
    np.testing.assert_array_equal(out.values[:20], table.values[:20])
    assert not out.values[20:].any()


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 1.0), st.integers(0, 5))
def test_subsample_keeps_proportion_of_days_with_uniform_spacing(prop, seed):
    table, _ = synthesize(n_nodes=2, days=10, interval_minutes=120, seed=0)
    out = subsample(table, prop, seed)
    assert out.n_steps == max(1, round(prop * 10)) * 12
    spacing = np.diff(out.timestamps).astype(np.int64)
    assert np.all(spacing == 7200)


def test_subsample_edge_cases():
    table, _ = synthesize(n_nodes=2, days=10, interval_minutes=120, seed=0)
    assert subsample(table, 1.0).n_steps == table.n_steps
    assert subsample(table, 0.5).n_steps == 5 * 12
    with pytest.raises(DatasetTooSmallError):
        subsample(table, 0.1, min_steps=100)
    scattered = subsample(table, 0.5, seed=3, contiguous=False)
    assert scattered.n_steps == table.n_steps and scattered.mask.sum() == table.mask.sum() // 2


def test_synthesis_is_seed_deterministic():
    a, ga = synthesize(n_nodes=4, days=2, seed=9)
    b, gb = synthesize(n_nodes=4, days=2, seed=9)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(ga.travel_time, gb.travel_time)


def test_cross_correlation_peaks_at_travel_lag():
    table, graph = synthesize(n_nodes=6, days=14, seed=3, noise=0.0, seasonal_amplitude=0.0)
    x = table.values[:, :, 0]
    x = x - x.mean(0)
    lags = graph.meta["lags"]
    checked = 0
    for i in range(6):
        for j in range(6):
            if i == j or graph.adjacency[i, j] <= 0:
                continue
            cc = [np.dot(x[:-L or None, i], x[L:, j]) / (len(x) - L) for L in range(0, 12)]
            assert abs(int(np.argmax(cc)) - lags[i, j]) <= 1
            checked += 1
    assert checked > 0


def test_independent_sinusoids_without_diffusion():
    table, graph = synthesize(n_nodes=3, days=5, interval_minutes=10, seed=1, diffusion=0.0,
                              shock_scale=0.0, noise=0.0)
    x = table.values[:, :, 0]
    phases = graph.meta["phases"]
    t = 144
    for lag in (1, 7, 36):
        c = np.corrcoef(x[:, 0], np.roll(x[:, 1], -lag))[0, 1]
        assert c == pytest.approx(np.cos(2 * np.pi * lag / t + phases[1] - phases[0]), abs=1e-9)
