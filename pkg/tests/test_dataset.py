import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_dataset
from ttc.dataset import (
    CMAPSS_CHANNELS,
    DataError,
    DuffingConfig,
    LabeledDataset,
    TimeSeries,
    add_noise_snr,
    draw_nus,
    drop_constant_channels,
    generate_duffing_dataset,
    label_by_median_lifespan,
    load_cmapss,
    load_csv_dataset,
    save_csv_dataset,
    simulate_duffing,
    truncate_cycles,
    write_cmapss,
)


def _cmapss_lines(unit_lengths, seed=0):
    rng = np.random.default_rng(seed)
    lines = []
    for u, T in enumerate(unit_lengths, start=1):
        for t in range(1, T + 1):
            vals = rng.normal(size=24)
            lines.append(" ".join([str(u), str(t)] + [f"{v:.6f}" for v in vals]))
    return "\n".join(lines) + "\n"


class TestTimeSeries:
    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            TimeSeries("a", [[1.0, np.nan]], ("x", "y"))

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            TimeSeries("a", np.zeros((0, 2)), ("x", "y"))

    def test_name_count_must_match(self):
        with pytest.raises(DataError):
            TimeSeries("a", np.zeros((3, 2)), ("x",))

    def test_values_are_read_only(self):
        s = TimeSeries("a", np.zeros((3, 2)), ("x", "y"))
        with pytest.raises(ValueError):
            s.values[0, 0] = 1.0

    def test_dataset_requires_shared_sensors(self):
        a = TimeSeries("a", np.zeros((3, 2)), ("x", "y"))
        b = TimeSeries("b", np.zeros((3, 2)), ("x", "z"))
        with pytest.raises(DataError):
            LabeledDataset((a, b), [0, 1])

    def test_labels_binary(self):
        a = TimeSeries("a", np.zeros((3, 2)), ("x", "y"))
        with pytest.raises(DataError):
            LabeledDataset((a,), [2])


class TestCmapss:
    def test_two_units(self, tmp_path):
        p = tmp_path / "train.txt"
        p.write_text(_cmapss_lines([192, 150]))
        ds = load_cmapss(p)
        assert len(ds) == 2
        assert ds.series[0].length == 192
        assert ds.n_channels == 24
        assert ds.sensor_names == CMAPSS_CHANNELS
        assert list(ds.lifespans) == [192, 150]

    def test_wrong_column_count_names_line(self, tmp_path):
        text = _cmapss_lines([3]).splitlines()
        text[1] = " ".join(text[1].split()[:25])
        p = tmp_path / "bad.txt"
        p.write_text("\n".join(text))
        with pytest.raises(DataError, match=":2:"):
            load_cmapss(p)

    def test_non_numeric(self, tmp_path):
        text = _cmapss_lines([3]).splitlines()
        parts = text[2].split()
        parts[5] = "abc"
        text[2] = " ".join(parts)
        p = tmp_path / "bad.txt"
        p.write_text("\n".join(text))
        with pytest.raises(DataError, match=":3:"):
            load_cmapss(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.txt"
        p.write_text("")
        with pytest.raises(DataError):
            load_cmapss(p)

    def test_load_write_load_idempotent(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text(_cmapss_lines([5, 7, 4], seed=3))
        first = load_cmapss(p)
        write_cmapss(first, tmp_path / "b.txt")
        second = load_cmapss(tmp_path / "b.txt")
        assert first.fingerprint() == second.fingerprint()
        assert list(first.lifespans) == list(second.lifespans)


class TestLabeling:
    def _with_spans(self, spans):
        series = tuple(TimeSeries(str(i), np.zeros((2, 1)), ("x",)) for i in range(len(spans)))
        return LabeledDataset(series, np.zeros(len(spans)), {"lifespans": list(spans)})

    def test_median_split(self):
        ds = label_by_median_lifespan(self._with_spans([100, 200, 300, 400]))
        assert ds.labels.tolist() == [1, 1, 0, 0]

    def test_all_equal_warns_and_labels_zero(self, caplog):
        caplog.set_level(logging.WARNING, logger="ttc.dataset")
        ds = label_by_median_lifespan(self._with_spans([50, 50, 50]))
        assert ds.labels.tolist() == [0, 0, 0]
        assert "unbalanced" in caplog.text

    def test_lifespan_range_preserved(self):
        spans = [128, 200, 300, 525]
        ds = label_by_median_lifespan(self._with_spans(spans))
        assert min(ds.lifespans) == 128 and max(ds.lifespans) == 525

    def test_needs_two_units(self):
        with pytest.raises(DataError):
            label_by_median_lifespan(self._with_spans([10]))

    @given(st.lists(st.integers(100, 400), min_size=2, max_size=30), st.randoms(use_true_random=False))
    def test_invariant_to_unit_order(self, spans, rnd):
        ds = self._with_spans(spans)
        labels = dict(zip(ds.unit_ids, label_by_median_lifespan(ds).labels))
        perm = list(range(len(spans)))
        rnd.shuffle(perm)
        shuffled = label_by_median_lifespan(ds.subset(perm))
        assert all(labels[u] == y for u, y in zip(shuffled.unit_ids, shuffled.labels))


class TestTruncate:
    def test_cuts_long_keeps_short(self):
        a = TimeSeries("a", np.zeros((200, 1)), ("x",))
        b = TimeSeries("b", np.zeros((30, 1)), ("x",))
        ds = truncate_cycles(LabeledDataset((a, b), [0, 1]), 50)
        assert [s.length for s in ds.series] == [50, 30]
        assert ds.labels.tolist() == [0, 1]

    def test_n_must_be_positive(self, toy):
        with pytest.raises(ValueError):
            truncate_cycles(toy, 0)


class TestDuffing:
    def test_healthy_orbit_bounded(self):
        s = simulate_duffing(0.29, DuffingConfig())
        assert s.values.shape == (200, 2)
        assert np.max(np.abs(s.values[:, 0])) < 10

    def test_undamped_linear_matches_closed_form(self):
        # x'' + x = 0, x(0)=0, v(0)=0.1  ->  x = 0.1 sin t
        cfg = DuffingConfig(amplitude=0.0, cubic_coeff=0.0, stiffness=1.0)
        s = simulate_duffing(0.0, cfg)
        assert np.max(np.abs(s.values[:, 0] - 0.1 * np.sin(s.times))) < 1e-6

    def test_damped_linear_rms(self):
        nu = 0.2
        cfg = DuffingConfig(amplitude=0.0, cubic_coeff=0.0, stiffness=1.0)
        s = simulate_duffing(nu, cfg)
        wd = math.sqrt(1 - nu**2 / 4)
        exact = 0.1 / wd * np.exp(-nu * s.times / 2) * np.sin(wd * s.times)
        assert np.sqrt(np.mean((s.values[:, 0] - exact) ** 2)) < 1e-6

    def test_deterministic(self):
        a = simulate_duffing(0.31, DuffingConfig())
        b = simulate_duffing(0.31, DuffingConfig())
        assert a.values.tobytes() == b.values.tobytes()

    def test_non_finite_nu(self):
        with pytest.raises(ValueError):
            simulate_duffing(float("nan"), DuffingConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DuffingConfig(samples_per_class=0)
        with pytest.raises(ValueError):
            DuffingConfig(output_length=1)
        with pytest.raises(ValueError):
            DuffingConfig(amplitude=float("inf"))

    def test_dataset_balanced_and_reproducible(self):
        cfg = DuffingConfig(samples_per_class=1, seed=5)
        a, b = generate_duffing_dataset(cfg), generate_duffing_dataset(cfg)
        assert len(a) == 2 and a.labels.tolist() == [0, 1]
        assert a.fingerprint() == b.fingerprint()

    def test_nu_draw_means(self):
        cfg = DuffingConfig(samples_per_class=500, seed=11)
        healthy, faulty = draw_nus(cfg)
        bound = 3 * cfg.nu_std / math.sqrt(500)
        assert abs(healthy.mean() - 0.290) < bound
        assert abs(faulty.mean() - 0.325) < bound
        assert len(healthy) == len(faulty) == 500

    def test_noise_levels_share_dissipation_draws(self):
        a = generate_duffing_dataset(DuffingConfig(samples_per_class=2, snr_db=10.0, seed=2))
        b = generate_duffing_dataset(DuffingConfig(samples_per_class=2, seed=2))
        assert a.metadata["nu"] == b.metadata["nu"]


class TestNoise:
    def _const(self, value=2.0, n=10_000):
        return TimeSeries("c", np.full((n, 1), value), ("x",))

    def test_clean_is_identity(self):
        s = self._const()
        assert add_noise_snr(s, math.inf, 0) is s

    def test_noise_std(self):
        noisy = add_noise_snr(self._const(), 20.0, 0)
        assert abs(np.std(noisy.values - 2.0) - 0.2) / 0.2 < 0.05

    def test_power_ratio_10_vs_40(self):
        s = self._const()
        p10 = np.mean((add_noise_snr(s, 10.0, 1).values - 2.0) ** 2)
        p40 = np.mean((add_noise_snr(s, 40.0, 2).values - 2.0) ** 2)
        assert abs(p10 / p40 / 1e3 - 1) < 0.10

    def test_deterministic_given_seed(self):
        s = self._const(n=100)
        assert np.array_equal(add_noise_snr(s, 10, 3).values, add_noise_snr(s, 10, 3).values)

    def test_40db_changes_rms_below_one_percent(self, duffing_clean_small):
        for i, s in enumerate(duffing_clean_small.series):
            noisy = add_noise_snr(s, 40.0, i)
            rms0 = np.sqrt(np.mean(s.values**2, axis=0))
            rms1 = np.sqrt(np.mean(noisy.values**2, axis=0))
            assert np.all(np.abs(rms1 / rms0 - 1) < 0.01)


class TestManifest:
    def _write(self, tmp_path, units, files):
        for name, text in files.items():
            (tmp_path / name).write_text(text)
        m = tmp_path / "manifest.json"
        m.write_text(json.dumps({"name": "t", "units": units}))
        return m

    def test_two_units_three_sensors(self, tmp_path):
        m = self._write(
            tmp_path,
            [{"id": "a", "csv_path": "a.csv", "label": 0}, {"id": "b", "csv_path": "b.csv", "label": 1}],
            {"a.csv": "x,y,z\n1,2,3\n4,5,6\n", "b.csv": "x,y,z\n1,2,3\n"},
        )
        ds = load_csv_dataset(m)
        assert len(ds) == 2 and ds.n_channels == 3

    def test_extra_column_names_unit(self, tmp_path):
        m = self._write(
            tmp_path,
            [{"id": "a", "csv_path": "a.csv", "label": 0}, {"id": "b", "csv_path": "b.csv", "label": 1}],
            {"a.csv": "x,y\n1,2\n", "b.csv": "x,y,z\n1,2,3\n"},
        )
        with pytest.raises(DataError, match="unit b"):
            load_csv_dataset(m)

    def test_ragged_row_names_unit(self, tmp_path):
        m = self._write(tmp_path, [{"id": "a", "csv_path": "a.csv", "label": 0}], {"a.csv": "x,y\n1,2\n1,2,3\n"})
        with pytest.raises(DataError, match="unit a"):
            load_csv_dataset(m)

    def test_empty_body(self, tmp_path):
        m = self._write(tmp_path, [{"id": "a", "csv_path": "a.csv", "label": 0}], {"a.csv": "x,y\n"})
        with pytest.raises(DataError):
            load_csv_dataset(m)

    def test_missing_label(self, tmp_path):
        m = self._write(tmp_path, [{"id": "a", "csv_path": "a.csv"}], {"a.csv": "x\n1\n"})
        with pytest.raises(DataError, match="label"):
            load_csv_dataset(m)

    def test_round_trip(self, tmp_path):
        ds = make_dataset(lifespans=True)
        save_csv_dataset(ds, tmp_path / "d")
        back = load_csv_dataset(tmp_path / "d" / "manifest.json")
        assert back.fingerprint() == ds.fingerprint()
        assert list(back.lifespans) == list(ds.lifespans)


def test_drop_constant_channels():
    X = np.column_stack([np.arange(5.0), np.ones(5)])
    ds = LabeledDataset((TimeSeries("a", X, ("v", "c")), TimeSeries("b", X + [1, 0], ("v", "c"))), [0, 1])
    assert drop_constant_channels(ds).sensor_names == ("v",)
