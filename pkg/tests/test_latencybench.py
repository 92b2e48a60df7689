"""Tests for the latency benchmark: percentile math, report serialization,
and live probes over all three measurement paths."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iohrt.latencybench import (
    BenchError,
    BenchTarget,
    LatencyReport,
    parse_report,
    percentile,
    probe_datagram,
    probe_end_to_end,
    probe_stream,
    render_report,
    report_to_json,
    run_bench,
)

from conftest import DeviceClient, wait_until


class TestPercentile:
    def test_nearest_rank_on_known_set(self):
        values = [float(v) for v in range(1, 101)]  # 1..100
        assert percentile(values, 50) == 50.0
        assert percentile(values, 95) == 95.0
        assert percentile(values, 99) == 99.0
        assert percentile(values, 100) == 100.0
        assert percentile(values, 1) == 1.0

    def test_small_sets(self):
        assert percentile([7.5], 50) == 7.5
        assert percentile([7.5], 99) == 7.5
        assert percentile([10.0, 20.0], 50) == 10.0
        assert percentile([10.0, 20.0], 51) == 20.0
        assert percentile([10.0, 20.0], 95) == 20.0

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            percentile([], 50)
        with pytest.raises(ValueError):
            percentile([1.0], 0)
        with pytest.raises(ValueError):
            percentile([1.0], 101)

    @given(st.lists(st.floats(0.001, 1e6), min_size=1, max_size=200))
    @settings(max_examples=100, deadline=None)
    def test_percentiles_are_ordered_and_members(self, values):
        values = sorted(values)
        p50 = percentile(values, 50)
        p95 = percentile(values, 95)
        p99 = percentile(values, 99)
        assert values[0] <= p50 <= p95 <= p99 <= values[-1]
        for p in (p50, p95, p99):
            assert p in values


class TestReportSerialization:
    def make_report(self):
        report = LatencyReport()
        report.add_path("stream", 3, [(0, 0.25), (1, 0.5), (2, 0.125)])
        report.add_path("datagram", 4, [(0, 1.0), (2, 2.0)])  # one lost
        return report

    def test_roundtrip_exact(self):
        report = self.make_report()
        assert parse_report(render_report(report)) == report

    def test_csv_shape(self):
        text = render_report(self.make_report())
        lines = text.strip().splitlines()
        assert lines[0] == "path,probe_index,latency_ms"
        data = [line for line in lines if not line.startswith("#")][1:]
        assert data[0] == "stream,0,0.25"
        footers = [line for line in lines if line.startswith("#")]
        assert len(footers) == 2
        assert "path=datagram" in footers[1]
        assert "lost=2" in footers[1]

    def test_stats(self):
        report = self.make_report()
        stream = report.stats("stream")
        assert stream["requested"] == 3
        assert stream["lost"] == 0
        assert stream["min_ms"] == 0.125
        assert stream["max_ms"] == 0.5
        assert math.isclose(stream["mean_ms"], (0.25 + 0.5 + 0.125) / 3)
        datagram = report.stats("datagram")
        assert datagram["lost"] == 2
        assert datagram["received"] == 2

    def test_all_probes_lost_still_renders(self):
        report = LatencyReport()
        report.add_path("e2e", 5, [])
        text = render_report(report)
        parsed = parse_report(text)
        assert parsed == report
        assert parsed.stats("e2e")["lost"] == 5
        assert "min_ms" not in parsed.stats("e2e")

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_report("nope\n")
        with pytest.raises(ValueError):
            parse_report("path,probe_index,latency_ms\nstream,0,1.0\n")  # no footer
        with pytest.raises(ValueError):
            parse_report("path,probe_index,latency_ms\n# path=x\n")  # no requested

    @given(
        st.dictionaries(
            st.sampled_from(["stream", "datagram", "e2e"]),
            st.lists(st.floats(1e-6, 1e5), max_size=40),
            min_size=1,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_roundtrip_property(self, data):
        report = LatencyReport()
        for path, values in data.items():
            samples = [(i, ms) for i, ms in enumerate(values)]
            report.add_path(path, len(values) + 1, samples)
        assert parse_report(render_report(report)) == report

    def test_json_rendering(self):
        import json

        out = json.loads(report_to_json(self.make_report()))
        assert out["stream"]["received"] == 3
        assert out["datagram"]["samples"] == [[0, 1.0], [2, 2.0]]


class TestLiveProbes:
    def bench_target(self, harness):
        return BenchTarget(
            host="127.0.0.1",
            http_port=harness.gateway.http_port,
            device_port=harness.gateway.device_port,
            frame_port=harness.gateway.frame_port,
        )

    def test_stream_probe_measures_every_round_trip(self, harness):
        samples = probe_stream(self.bench_target(harness), 25)
        assert [i for i, _ in samples] == list(range(25))
        assert all(0 < ms < 5000 for _, ms in samples)

    def test_datagram_probe_measures_every_round_trip(self, harness):
        samples = probe_datagram(self.bench_target(harness), 25)
        assert [i for i, _ in samples] == list(range(25))
        assert all(0 < ms < 5000 for _, ms in samples)

    def test_e2e_probe_round_trips_through_robot(self, harness, client, run_fleet):
        run_fleet([{
            "kind": "robot", "id": "bench-bot", "scenario": "generic",
            "state_rate_hz": 50.0,
        }])
        viewer = harness.auth_headers(client, "view-ann", "viewe-pass-1")
        wait_until(lambda: client.get(
            "/api/devices/bench-bot", headers=viewer).status_code == 200)
        samples = probe_end_to_end(
            self.bench_target(harness), 10,
            username="op-kim", password="opera-pass-1", robot_id="bench-bot",
        )
        assert [i for i, _ in samples] == list(range(10))
        assert all(0 < ms < 5000 for _, ms in samples)
        # the robot is released and the bench session closed afterwards
        detail = client.get("/api/devices/bench-bot", headers=viewer).json()
        assert detail["controller"] is None
        # zero-displacement probing left the setpoint where it started
        assert detail["setpoint"] == [0.0, 0.0, 0.0]

    def test_e2e_counts_unresponsive_robot_as_lost(self, harness, client):
        robot = DeviceClient(harness.device_addr, "bench-mute")
        try:
            robot.hello("robot", dof=1, pose=[0.0], control={
                "gamma": 1.0, "m": 0.0, "dt_max": 0.1, "v_max": [1.0],
                "workspace": [[-1.0, 1.0]], "k_p": 1.0,
            })
            samples = probe_end_to_end(
                self.bench_target(harness), 3,
                username="op-kim", password="opera-pass-1",
                robot_id="bench-mute", timeout_s=0.4,
            )
            assert samples == []
        finally:
            robot.close()

    def test_e2e_requires_existing_robot(self, harness):
        with pytest.raises(BenchError):
            probe_end_to_end(
                self.bench_target(harness), 1,
                username="op-kim", password="opera-pass-1",
                robot_id="no-such-bot",
            )
        with pytest.raises(BenchError):
            probe_end_to_end(
                self.bench_target(harness), 1,
                username="op-kim", password="wrong-pass", robot_id="x",
            )

    def test_run_bench_compiles_report(self, harness):
        report = run_bench(self.bench_target(harness), ["stream", "datagram"], 10)
        assert set(report.samples) == {"stream", "datagram"}
        for path in ("stream", "datagram"):
            stats = report.stats(path)
            assert stats["requested"] == 10
            assert stats["lost"] == 0
            assert stats["min_ms"] <= stats["p50_ms"] <= stats["p95_ms"]
            assert stats["p95_ms"] <= stats["p99_ms"] <= stats["max_ms"]
        assert parse_report(render_report(report)) == report

    def test_run_bench_e2e_needs_credentials(self, harness):
        with pytest.raises(BenchError):
            run_bench(self.bench_target(harness), ["e2e"], 1)
        with pytest.raises(BenchError):
            run_bench(self.bench_target(harness), ["warp"], 1)
