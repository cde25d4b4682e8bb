import numpy as np
import pytest

from sibstate import dataio
from sibstate.dataio import (
    CellRecord,
    RawCycle,
    compute_soc_targets,
    compute_soh,
    parse_cell,
    resample,
    scale_current,
    scale_voltage,
    split_cycles,
)
from sibstate.errors import (
    DataError,
    ParseError,
    ReferenceCapacityError,
    SchemaError,
    SplitError,
)

PROFILE_3CYC = "\n".join(
    ["cycle,time_s,voltage_v,current_a"]
    + [f"{k},{t},{2.2 + 0.01 * t},{5.0}" for k in (1, 2, 3) for t in (0, 30, 60, 90)]
) + "\n"
CAPACITY_3CYC = "cycle,discharge_capacity_ah\n1,9.9\n2,9.95\n3,10.0\n"


class TestScaling:
    @pytest.mark.parametrize("volts,expected", [(4.0, 1.0), (2.15, 0.0), (3.075, 0.5)])
    def test_voltage_fixed_points(self, volts, expected):
        assert scale_voltage(volts) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("amps,expected", [(5.0, 1.0), (0.5, 0.0), (2.75, 0.5)])
    def test_current_fixed_points(self, amps, expected):
        assert scale_current(amps) == pytest.approx(expected, abs=1e-15)

    def test_no_clamping(self):
        assert scale_voltage(4.5) > 1.0
        assert scale_current(0.1) < 0.0

    def test_affine_property(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b, alpha = rng.uniform(-10, 10, 3)
            for f in (scale_voltage, scale_current):
                mixed = f(alpha * a + (1 - alpha) * b)
                assert mixed == pytest.approx(alpha * f(a) + (1 - alpha) * f(b), abs=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(DataError):
            scale_voltage(float("nan"))
        with pytest.raises(DataError):
            scale_current(float("inf"))


class TestParseCell:
    def test_reference_capacity_from_cycle_3(self):
        rec = parse_cell(PROFILE_3CYC, CAPACITY_3CYC, "c", 25.0)
        assert rec.reference_capacity_ah == 10.0
        assert [c.cycle_index for c in rec.cycles] == [1, 2, 3]

    def test_exclusion_removes_cycle(self):
        rec = parse_cell(PROFILE_3CYC, CAPACITY_3CYC, "c", 25.0, excluded_cycles=[2])
        assert [c.cycle_index for c in rec.cycles] == [1, 3]

    def test_empty_profile_is_parse_error(self):
        with pytest.raises(ParseError):
            parse_cell("", CAPACITY_3CYC, "c", 25.0)

    def test_malformed_row_names_line(self):
        bad = PROFILE_3CYC + "3,not_a_number,3.0,5.0\n"
        with pytest.raises(ParseError, match="line 14"):
            parse_cell(bad, CAPACITY_3CYC, "c", 25.0)

    def test_missing_capacity_is_schema_error(self):
        with pytest.raises(SchemaError, match=r"\[2\]"):
            parse_cell(PROFILE_3CYC, "cycle,discharge_capacity_ah\n1,9.9\n3,10.0\n",
                       "c", 25.0)

    def test_missing_reference_cycle(self):
        profile = "cycle,time_s,voltage_v,current_a\n1,0,2.2,5\n1,30,2.3,5\n"
        with pytest.raises(ReferenceCapacityError):
            parse_cell(profile, "cycle,discharge_capacity_ah\n1,9.9\n", "c", 25.0)

    def test_temperature_range_enforced(self):
        with pytest.raises(DataError):
            parse_cell(PROFILE_3CYC, CAPACITY_3CYC, "c", 60.0)


class TestResample:
    def test_values_reproduced_at_aligned_knots(self):
        cyc = RawCycle(1, [0.0, 30.0, 60.0], [2.15, 3.0, 4.0], [5.0, 5.0, 5.0], 10.0)
        grid, v, _ = resample(cyc)
        assert np.array_equal(grid, [0.0, 30.0, 60.0])
        assert np.array_equal(v, [2.15, 3.0, 4.0])

    def test_linear_midpoint(self):
        cyc = RawCycle(1, [0.0, 60.0], [3.0, 4.0], [5.0, 5.0], 10.0)
        _, v, _ = resample(cyc)
        assert v[1] == pytest.approx(3.5, abs=1e-15)

    def test_grid_extends_to_last_multiple(self):
        times = np.linspace(0.0, 95.0, 20)
        cyc = RawCycle(1, times, np.full(20, 3.0), np.full(20, 5.0), 10.0)
        grid, _, _ = resample(cyc)
        assert np.array_equal(grid, [0.0, 30.0, 60.0, 90.0])

    def test_duplicate_timestamps_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            RawCycle(1, [0.0, 30.0, 30.0], [3.0, 3.1, 3.2], [5.0] * 3, 10.0)

    def test_grid_aligned_roundtrip_property(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = rng.integers(2, 40)
            times = np.arange(n) * 30.0
            v = rng.uniform(2.0, 4.2, n)
            i = rng.uniform(0.4, 5.2, n)
            _, vr, ir = resample(RawCycle(1, times, v, i, 10.0))
            assert np.allclose(vr, v, atol=1e-12) and np.allclose(ir, i, atol=1e-12)


class TestSocTargets:
    def test_constant_current_uniform_accumulation(self):
        soc = compute_soc_targets(np.array([5.0, 5.0, 5.0, 5.0]))
        assert np.allclose(soc, [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-15)

    def test_last_point_exactly_one(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            soc = compute_soc_targets(rng.uniform(0.1, 5.0, rng.integers(2, 200)))
            assert soc[-1] == 1.0
            assert soc[0] == 0.0
            assert np.all(np.diff(soc) >= 0)

    def test_trapezoid_against_fine_grid_quadrature(self):
        # piecewise-linear current: the trapezoid rule is exact, so a dense
        # numeric integral of the interpolant must agree to rounding error
        currents = np.array([5.0, 5.0, 0.5, 0.5])
        soc = compute_soc_targets(currents, period_s=30.0)
        grid = np.arange(4) * 30.0
        fine = np.linspace(0.0, 90.0, 90001)
        i_fine = np.interp(fine, grid, currents)
        cum = np.concatenate([[0.0], np.cumsum(
            0.5 * (i_fine[1:] + i_fine[:-1]) * np.diff(fine))])
        oracle = cum[np.searchsorted(fine, grid)] / cum[-1]
        assert np.allclose(soc, oracle, atol=1e-9)
        # frozen values from the trapezoid evaluation by hand
        assert np.allclose(soc, [0.0, 150.0 / 247.5, 232.5 / 247.5, 1.0], atol=1e-12)

    def test_zero_total_charge_rejected(self):
        with pytest.raises(DataError, match="zero total"):
            compute_soc_targets(np.zeros(5))

    def test_negative_current_rejected(self):
        with pytest.raises(DataError):
            compute_soc_targets(np.array([5.0, -0.1, 5.0]))


class TestSoh:
    @pytest.mark.parametrize("q, q3, expected", [
        (10.0, 10.0, 1.0),
        (8.0, 10.0, 0.8),
        (10.3, 10.0, 1.03),  # early-life capacity rise puts SOH above 1
    ])
    def test_ratio(self, q, q3, expected):
        assert compute_soh(q, q3) == pytest.approx(expected, abs=1e-15)

    def test_identity_property(self):
        rng = np.random.default_rng(3)
        for q in rng.uniform(0.1, 20.0, 50):
            assert compute_soh(q, q) == 1.0

    def test_bad_reference(self):
        with pytest.raises(ReferenceCapacityError):
            compute_soh(10.0, 0.0)


class TestSplit:
    @pytest.mark.parametrize("n, expected", [
        (100, (70, 10, 20)),
        (10, (7, 1, 2)),
        (13, (9, 1, 3)),
    ])
    def test_floor_rule(self, n, expected):
        tr, va, te = split_cycles(n)
        assert (len(tr), len(va), len(te)) == expected

    def test_too_few_cycles(self):
        with pytest.raises(SplitError):
            split_cycles(9)

    def test_disjoint_exhaustive_chronological(self):
        for n in range(10, 60):
            tr, va, te = split_cycles(n)
            assert sorted(tr + va + te) == list(range(n))
            assert not set(tr) & set(va) and not set(va) & set(te)
            assert max(tr) < min(va) and max(va) < min(te)


class TestManifestRoundtrip:
    def test_prepare_parses_and_splits(self, tmp_path):
        (tmp_path / "p.csv").write_text(PROFILE_3CYC)
        (tmp_path / "q.csv").write_text(CAPACITY_3CYC)
        (tmp_path / "manifest.json").write_text(
            '{"cells": [{"label": "x", "temperature_c": 25.0, '
            '"profile_path": "p.csv", "capacity_path": "q.csv"}]}')
        cells = dataio.prepare_dataset(tmp_path / "manifest.json", do_split=False)
        assert len(cells) == 1 and len(cells[0].cycles) == 3
        cyc = cells[0].cycles[0]
        assert cyc.n_samples == 4
        assert cyc.soc_targets[-1] == 1.0
        assert cells[0].cycles[2].soh_target == 1.0

    def test_cache_reuse(self, tmp_path):
        (tmp_path / "p.csv").write_text(PROFILE_3CYC)
        (tmp_path / "q.csv").write_text(CAPACITY_3CYC)
        (tmp_path / "manifest.json").write_text(
            '{"cells": [{"label": "x", "temperature_c": 25.0, '
            '"profile_path": "p.csv", "capacity_path": "q.csv"}]}')
        cache = tmp_path / "cache"
        first = dataio.prepare_dataset(tmp_path / "manifest.json", cache_dir=cache,
                                       do_split=False)
        assert (cache / "x.npz").exists()
        # poison the source files: a cache hit must not re-read them
        (tmp_path / "p.csv").write_text("garbage")
        second = dataio.prepare_dataset(tmp_path / "manifest.json", cache_dir=cache,
                                        do_split=False)
        assert np.array_equal(first[0].cycles[0].v_scaled, second[0].cycles[0].v_scaled)
