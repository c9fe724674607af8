"""Ingestion contracts, filtering, steady-state compression, and splits."""

import io

import numpy as np
import pytest

from chokevfm import pipeline
from chokevfm.errors import ConfigurationError, IngestionError
from chokevfm.fluids import PhysicalConstants
from chokevfm.pipeline import (
    FILTER_RULES,
    WellDataset,
    attach_lagged_fractions,
    draw_validation_chunks,
    filter_samples,
    ingest,
    split,
    steady_state_compress,
    write_csv,
)

HEADER = "timestamp,p1_pa,p2_pa,t1_k,t2_k,choke_frac,qo_m3s,qg_m3s,qw_m3s"


def csv_stream(rows):
    return io.StringIO("\n".join([HEADER, *rows]) + "\n")


def row(ts, p1=1.2e7, p2=3e6, t1=350.0, t2=345.0, u=0.5, qo=0.01, qg=0.05, qw=0.004):
    return f"{ts},{p1},{p2},{t1},{t2},{u},{qo},{qg},{qw}"


def make_series(n, dt=60.0, start=0.0, **kw):
    cols = {
        "timestamp": start + np.arange(n) * dt,
        "p1": np.full(n, 1.2e7),
        "p2": np.full(n, 3e6),
        "t1": np.full(n, 350.0),
        "t2": np.full(n, 345.0),
        "u": np.full(n, 0.5),
        "q_o": np.full(n, 0.01),
        "q_g": np.full(n, 0.05),
        "q_w": np.full(n, 0.004),
    }
    for key, values in kw.items():
        assert key in cols, key
        cols[key] = np.asarray(values, dtype=float)
    return cols


class TestIngest:
    def test_well_formed_file(self):
        cols = ingest(csv_stream([row("2020-01-01T00:00:00+00:00"),
                                  row("2020-01-01T00:01:00+00:00"),
                                  row("2020-01-01T00:02:00+00:00")]))
        assert len(cols["timestamp"]) == 3
        assert cols["p1"][0] == 1.2e7

    def test_missing_column_named(self):
        bad = HEADER.replace(",p2_pa", "")
        with pytest.raises(IngestionError, match="p2_pa"):
            ingest(io.StringIO(bad + "\n"))

    def test_out_of_order_timestamp_reports_row(self):
        with pytest.raises(IngestionError, match="row 3"):
            ingest(csv_stream([row("2020-01-01T00:02:00+00:00"),
                               row("2020-01-01T00:01:00+00:00")]))

    def test_duplicate_timestamp_rejected(self):
        with pytest.raises(IngestionError, match="duplicate"):
            ingest(csv_stream([row("2020-01-01T00:01:00+00:00"),
                               row("2020-01-01T00:01:00+00:00")]))

    def test_unparseable_value_reports_column_and_row(self):
        bad = row("2020-01-01T00:00:00+00:00").replace("0.5", "half")
        with pytest.raises(IngestionError, match="choke_frac"):
            ingest(csv_stream([bad]))

    def test_round_trip_through_csv(self, tmp_path):
        cols = make_series(5, u=np.linspace(0.2, 0.9, 5))
        path = tmp_path / "well.csv"
        write_csv(cols, path)
        back = ingest(path)
        for name, values in cols.items():
            np.testing.assert_array_equal(back[name], values)


class TestFilters:
    def test_negative_pressure_dropped_with_rule(self):
        cols = make_series(3, p1=[1.2e7, -1e5, 1.2e7])
        kept, report = filter_samples(cols)
        assert len(kept["timestamp"]) == 2
        assert report.counts == {"nonpositive pressure": 1}
        assert report.dropped_rows == [(1, "nonpositive pressure")]

    def test_healthy_sample_retained(self):
        kept, report = filter_samples(make_series(1))
        assert report.n_dropped == 0 and len(kept["timestamp"]) == 1

    def test_all_invalid_gives_empty_series_and_complete_report(self):
        cols = make_series(4, u=[2.0, -0.5, 2.0, 3.0])
        kept, report = filter_samples(cols)
        assert len(kept["timestamp"]) == 0
        assert report.n_dropped == 4
        assert sum(report.counts.values()) == 4

    def test_rule_coverage(self):
        cols = make_series(
            6,
            p1=[-1.0, 1.2e7, 1.2e7, 1.2e7, 1.2e7, 2e6],
            t1=[350.0, -1.0, 350.0, 350.0, 350.0, 350.0],
            u=[0.5, 0.5, 1.5, 0.5, 0.5, 0.5],
            q_o=[0.01, 0.01, 0.01, -0.01, 0.0, 0.01],
            q_g=[0.05, 0.05, 0.05, 0.05, 0.0, 0.05],
            q_w=[0.004, 0.004, 0.004, 0.004, 0.0, 0.004],
        )
        _, report = filter_samples(cols)
        assert [rule for _, rule in report.dropped_rows] == list(FILTER_RULES)
        assert sum(report.counts.values()) == report.n_dropped == 6
        assert report.retained_fraction == 0.0

    def test_report_text_round(self):
        _, report = filter_samples(make_series(2, p2=[3e6, 2e7]))
        text = report.to_text()
        assert "reversed pressure differential" in text
        assert "retained 1" in text


class TestSteadyStateCompression:
    def test_constant_series_one_point_per_window(self):
        cols = make_series(120, dt=60.0)  # two hours at one-minute sampling
        out = steady_state_compress(cols, window_seconds=3600.0, tolerance=0.02)
        assert len(out["timestamp"]) == 2
        assert out["p1"][0] == 1.2e7

    def test_step_change_gives_two_points(self):
        p1 = np.concatenate([np.full(60, 1.2e7), np.full(60, 0.8e7)])
        cols = make_series(120, dt=60.0, p1=p1)
        out = steady_state_compress(cols, window_seconds=7200.0, tolerance=0.02)
        assert len(out["timestamp"]) == 2
        assert out["p1"][0] == pytest.approx(1.2e7)
        assert out["p1"][1] == pytest.approx(0.8e7)

    def test_white_noise_zero_tolerance_empty(self):
        rng = np.random.default_rng(0)
        cols = make_series(100, dt=60.0, p1=1.2e7 + rng.normal(0, 1e5, 100))
        out = steady_state_compress(cols, window_seconds=3600.0, tolerance=0.0)
        assert len(out["timestamp"]) == 0

    def test_medians_collapse_noise_within_tolerance(self):
        rng = np.random.default_rng(1)
        cols = make_series(60, dt=60.0, p1=1.2e7 * (1 + rng.uniform(-0.005, 0.005, 60)))
        out = steady_state_compress(cols, window_seconds=3600.0, tolerance=0.02)
        assert len(out["timestamp"]) == 1
        assert out["p1"][0] == pytest.approx(np.median(cols["p1"]))
        assert out["timestamp"][0] == cols["timestamp"][-1]

    def test_sparse_samples_pass_through(self):
        cols = make_series(5, dt=7200.0)  # sparser than the window
        out = steady_state_compress(cols, window_seconds=3600.0, tolerance=0.02)
        for name in cols:
            np.testing.assert_array_equal(out[name], cols[name])

    def test_idempotent_on_own_output(self):
        rng = np.random.default_rng(2)
        p1 = np.concatenate([
            np.full(180, 1.2e7) * (1 + rng.uniform(-0.004, 0.004, 180)),
            np.full(180, 0.9e7) * (1 + rng.uniform(-0.004, 0.004, 180)),
        ])
        cols = make_series(360, dt=60.0, p1=p1)
        once = steady_state_compress(cols, window_seconds=3600.0, tolerance=0.02)
        twice = steady_state_compress(once, window_seconds=3600.0, tolerance=0.02)
        for name in once:
            np.testing.assert_array_equal(twice[name], once[name])

    def test_invalid_window_rejected(self):
        with pytest.raises(ConfigurationError):
            steady_state_compress(make_series(3), window_seconds=0.0, tolerance=0.02)


class TestLaggedFractions:
    def test_uses_strictly_earlier_samples_only(self):
        qo = np.linspace(0.01, 0.02, 5)
        cols = make_series(5, q_o=qo, q_g=np.zeros(5), q_w=np.zeros(5))
        out, dropped = attach_lagged_fractions(cols, PhysicalConstants())
        assert dropped == 1
        assert len(out["timestamp"]) == 4
        # oil-only predecessor: fractions are (0, 1, 0) regardless of q magnitude
        np.testing.assert_array_equal(out["eta_o"], np.ones(4))
        # timestamps shifted: first retained sample is the second input sample
        np.testing.assert_array_equal(out["timestamp"], cols["timestamp"][1:])

    def test_fraction_values_from_previous_rates(self):
        constants = PhysicalConstants(rho_o_sc=850.0, rho_g_sc=0.8, rho_w_sc=1000.0)
        cols = make_series(2, q_o=[0.01, 0.02], q_g=[0.05, 0.0], q_w=[0.004, 0.0])
        out, _ = attach_lagged_fractions(cols, constants)
        m = np.array([0.8 * 0.05, 850.0 * 0.01, 1000.0 * 0.004])
        expected = m / m.sum()
        assert out["eta_g"][0] == pytest.approx(expected[0], rel=1e-12)
        assert out["eta_o"][0] == pytest.approx(expected[1], rel=1e-12)
        assert out["eta_w"][0] == pytest.approx(expected[2], rel=1e-12)

    def test_retained_samples_satisfy_point_invariants(self):
        rng = np.random.default_rng(3)
        cols = make_series(
            50,
            q_o=rng.uniform(0.005, 0.02, 50),
            q_g=rng.uniform(0.0, 0.1, 50),
            q_w=rng.uniform(0.0, 0.01, 50),
            u=rng.uniform(0.1, 0.9, 50),
        )
        kept, _ = filter_samples(cols)
        out, _ = attach_lagged_fractions(kept, PhysicalConstants())
        ds = WellDataset("w", out)
        for point in ds.points():
            point.validate()


class TestSplit:
    def _dataset(self, days=365, dt_hours=6.0):
        n = int(days * 24 / dt_hours)
        cols = make_series(n, dt=dt_hours * 3600.0)
        cols["eta_g"] = np.full(n, 0.1)
        cols["eta_o"] = np.full(n, 0.6)
        cols["eta_w"] = np.full(n, 0.3)
        return WellDataset("w", cols)

    def test_last_three_months_are_test(self):
        ds = split(self._dataset(365), test_span_days=90.0, seed=1)
        t = ds.columns["timestamp"]
        cutoff = t.max() - 90.0 * 86400.0
        np.testing.assert_array_equal(ds.partition == "test", t > cutoff)

    def test_zero_validation_fraction(self):
        ds = split(self._dataset(200), validation_fraction=0.0, seed=1)
        assert not np.any(ds.partition == "validation")

    def test_same_seed_same_partition(self):
        a = split(self._dataset(365), seed=7)
        b = split(self._dataset(365), seed=7)
        np.testing.assert_array_equal(a.partition, b.partition)

    def test_partitions_disjoint_and_cover(self):
        ds = split(self._dataset(365), seed=3)
        labels = set(np.unique(ds.partition))
        assert labels <= {"train", "validation", "test"}
        assert len(ds.partition) == ds.n

    def test_validation_inside_training_period(self):
        ds = split(self._dataset(365), seed=3)
        t = ds.columns["timestamp"]
        assert t[ds.partition == "validation"].max() < t[ds.partition == "test"].min()

    def test_validation_fraction_met(self):
        ds = split(self._dataset(365), validation_fraction=0.2, seed=3)
        region = ds.partition != "test"
        fraction = np.mean(ds.partition[region] == "validation")
        assert fraction >= 0.2

    def test_short_history_rejected(self):
        with pytest.raises(ConfigurationError):
            split(self._dataset(80), test_span_days=90.0)

    def test_chunkless_training_window_rejected(self):
        with pytest.raises(ConfigurationError, match="chunk"):
            split(self._dataset(100), test_span_days=90.0, chunk_days=14.0, seed=0)

    def test_chunks_are_contiguous_in_time(self):
        t = np.arange(0, 60 * 86400.0, 21600.0)
        mask = draw_validation_chunks(t, 0.2, 14 * 86400.0, seed=5)
        chunk_ids = np.floor((t - t.min()) / (14 * 86400.0)).astype(int)
        selected = set(chunk_ids[mask])
        for cid in selected:
            np.testing.assert_array_equal(mask[chunk_ids == cid], True)


class TestPrepareWell:
    def test_end_to_end(self, tmp_path):
        rng = np.random.default_rng(4)
        n = 600
        cols = make_series(
            n,
            dt=600.0,
            p1=1.2e7 * (1 + rng.uniform(-0.003, 0.003, n)),
            q_o=rng.uniform(0.008, 0.012, n),
            q_g=rng.uniform(0.04, 0.06, n),
            q_w=rng.uniform(0.002, 0.006, n),
        )
        path = tmp_path / "well.csv"
        write_csv(cols, path)
        dataset, report = pipeline.prepare_well(path, "W01", window_seconds=3600.0, tolerance=0.02)
        assert report.n_input == n
        assert dataset.n > 10
        assert "eta_o" in dataset.columns
        for point in dataset.points():
            point.validate()
