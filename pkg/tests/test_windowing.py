import numpy as np
import pytest

from sibstate.dataio import PreparedCycle, scale_current, scale_voltage
from sibstate.errors import DataError
from sibstate.windowing import (
    WindowConfig,
    build_segments,
    dump_segments_csv,
    segment_features,
    segment_time_span,
)


def make_cycle(v, i, soc=None, index=1):
    v = np.asarray(v, dtype=np.float64)
    n = len(v)
    return PreparedCycle(
        cycle_index=index, v_scaled=v, i_scaled=np.asarray(i, dtype=np.float64),
        soc_targets=np.linspace(0, 1, n) if soc is None else np.asarray(soc),
        soh_target=0.97, q_target_ah=9.7)


def brute_force_segments(v, i, window_size):
    """Independent oracle: materialize the prepended series, slice it."""
    pad = [0.0] * (window_size - 1)
    vp, ip = pad + list(v), pad + list(i)
    out = []
    for s in range(1, len(v) + 1):
        out.append(np.array([vp[s - 1:s - 1 + window_size],
                             ip[s - 1:s - 1 + window_size]]))
    return out


class TestBuildSegments:
    def test_documented_small_case(self):
        cyc = make_cycle([0.1, 0.2, 0.3], [0.9, 0.9, 0.9])
        segs = build_segments(cyc, WindowConfig(window_size=4), 25.0)
        assert len(segs.segments) == 3
        assert np.array_equal(segs.segments[0].feature[0], [0, 0, 0, 0.1])
        assert np.array_equal(segs.segments[2].feature[0], [0, 0.1, 0.2, 0.3])
        assert np.array_equal(segs.segments[2].feature[1], [0, 0.9, 0.9, 0.9])

    def test_prepend_constants_scale_to_zero(self):
        # zero padding is the scaled image of resting at 2.15 V / 0.5 A
        assert scale_voltage(2.15) == 0.0
        assert scale_current(0.5) == 0.0
        cyc = make_cycle([0.5], [0.7])
        segs = build_segments(cyc, WindowConfig(window_size=8), 0.0)
        assert len(segs.segments) == 1
        assert np.array_equal(segs.segments[0].feature[:, :7], np.zeros((2, 7)))

    def test_targets_and_metadata(self):
        cyc = make_cycle([0.1, 0.2], [0.5, 0.6], soc=[0.0, 1.0], index=42)
        segs = build_segments(cyc, WindowConfig(window_size=2), 45.0)
        assert segs.cycle_index == 42
        assert segs.temperature_c == 45.0
        assert [s.position for s in segs.segments] == [1, 2]
        assert [s.soc_target for s in segs.segments] == [0.0, 1.0]
        assert segs.soh_target == 0.97 and segs.q_target_ah == 9.7

    def test_segment_count_equals_sample_count(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n = int(rng.integers(1, 60))
            cyc = make_cycle(rng.normal(size=n), rng.normal(size=n))
            segs = build_segments(cyc, WindowConfig(window_size=8), 25.0)
            assert len(segs.segments) == n

    def test_no_padding_at_or_beyond_window_size(self):
        rng = np.random.default_rng(1)
        n, w = 20, 8
        v = rng.uniform(0.5, 1.0, n)  # strictly positive: any zero is padding
        cyc = make_cycle(v, v)
        segs = build_segments(cyc, WindowConfig(window_size=w), 25.0)
        for seg in segs.segments:
            if seg.position >= w:
                assert np.all(seg.feature != 0.0)
            else:
                assert np.sum(seg.feature[0] == 0.0) == w - seg.position

    def test_sliding_consistency(self):
        rng = np.random.default_rng(2)
        cyc = make_cycle(rng.normal(size=30), rng.normal(size=30))
        segs = build_segments(cyc, WindowConfig(window_size=8), 25.0).segments
        for a, b in zip(segs, segs[1:]):
            assert np.array_equal(a.feature[:, 1:], b.feature[:, :-1])

    def test_bitwise_match_with_bruteforce_oracle(self):
        rng = np.random.default_rng(3)
        for w in (2, 4, 8, 128):
            for _ in range(8):
                n = int(rng.integers(1, 51))
                v = rng.normal(size=n)
                i = rng.normal(size=n)
                segs = build_segments(make_cycle(v, i), WindowConfig(window_size=w), 25.0)
                oracle = brute_force_segments(v, i, w)
                assert len(segs.segments) == n
                for got, want in zip(segs.segments, oracle):
                    assert np.array_equal(got.feature, want)

    def test_empty_cycle_rejected(self):
        with pytest.raises(DataError):
            segment_features(np.array([]), np.array([]), WindowConfig(window_size=4))


class TestSegmentFeatures:
    def test_position_selection_matches_full(self):
        rng = np.random.default_rng(4)
        v, i = rng.normal(size=40), rng.normal(size=40)
        cfg = WindowConfig(window_size=16)
        full = segment_features(v, i, cfg)
        picked = segment_features(v, i, cfg, positions=[3, 17, 40])
        assert np.array_equal(picked, full[[2, 16, 39]])

    def test_out_of_range_positions(self):
        with pytest.raises(DataError):
            segment_features(np.ones(5), np.ones(5), WindowConfig(window_size=4),
                             positions=[6])


class TestSpan:
    @pytest.mark.parametrize("w, period, expected", [
        (128, 30.0, 3810.0),
        (2, 30.0, 30.0),
        (4, 30.0, 90.0),
    ])
    def test_time_span(self, w, period, expected):
        assert segment_time_span(WindowConfig(window_size=w, period_s=period)) == expected

    def test_window_size_validated(self):
        with pytest.raises(ValueError):
            WindowConfig(window_size=1)


def test_debug_dump_roundtrip(tmp_path):
    cyc = make_cycle([0.1, 0.2], [0.3, 0.4])
    segs = build_segments(cyc, WindowConfig(window_size=4), 25.0)
    path = tmp_path / "segments.csv"
    dump_segments_csv(segs, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 2 * 2  # two segments x two rows
    first = lines[0].split(",")
    assert first[:3] == ["1", "1", "0"]
    assert [float(x) for x in first[3:]] == [0.0, 0.0, 0.0, 0.1]
