import random
import tracemalloc

import pytest

from gpuforecast.domain import JobTelemetry, aggregate_targets
from gpuforecast.errors import ConfigError, DataError
from gpuforecast.ingest import (
    IngestConfig,
    expand_node_list,
    filter_irregular,
    iter_dcgm,
    job_from_dict,
    job_to_dict,
    join,
    parse_slurm,
    read_telemetry,
    write_telemetry,
)

from conftest import make_record, make_sample

SLURM_HEADER = (
    "job_id,user,job_name,account,category,req_cpus,req_nodes,req_gpus,"
    "req_mem_mb,time_limit_s,start_time,end_time,node_list,executable"
)
DCGM_HEADER = (
    "job_id,node,gpu_index,timestamp,gpu_utilization,fb_used,fb_free,"
    "sm_active,sm_occupancy,dram_active,fp64_active,tensor_active,power_usage"
)


def slurm_row(job_id="J1", nodes="nid000001", start=1_740_000_000, end=1_740_000_600, **over):
    row = {
        "job_id": job_id,
        "user": "alice",
        "job_name": "wl0",
        "account": "acct0",
        "category": "cat0",
        "req_cpus": "64",
        "req_nodes": str(len(expand_node_list(nodes))),
        "req_gpus": "4",
        "req_mem_mb": "256000",
        "time_limit_s": "3600",
        "start_time": str(start),
        "end_time": str(end),
        "node_list": nodes,
        "executable": "vasp_std",
    }
    row.update({k: str(v) for k, v in over.items()})
    return ",".join(row[k] for k in SLURM_HEADER.split(","))


def dcgm_row(job_id="J1", node="nid000001", gpu=0, ts=1_740_000_000, power=150.0, **over):
    row = {
        "job_id": job_id,
        "node": node,
        "gpu_index": str(gpu),
        "timestamp": str(ts),
        "gpu_utilization": "80.0",
        "fb_used": "10000.0",
        "fb_free": "30000.0",
        "sm_active": "0.8",
        "sm_occupancy": "0.5",
        "dram_active": "0.4",
        "fp64_active": "0.3",
        "tensor_active": "0.1",
        "power_usage": str(power),
    }
    row.update({k: str(v) for k, v in over.items()})
    return ",".join(row[k] for k in DCGM_HEADER.split(","))


class TestNodeList:
    def test_plain_and_semicolons(self):
        assert expand_node_list("nid001;nid002") == frozenset({"nid001", "nid002"})

    def test_bracket_range_expansion(self):
        # oracle: enumerate the range with its zero padding
        expected = frozenset(f"nid{i:03d}" for i in range(1, 5))
        assert expand_node_list("nid[001-004]") == expected

    def test_bracket_with_list(self):
        assert expand_node_list("nid[001-002,007]") == frozenset({"nid001", "nid002", "nid007"})

    def test_malformed(self):
        for bad in ("nid[001-", "nid[a-b]", "nid[]", "nid[004-001]", ""):
            with pytest.raises(DataError):
                expand_node_list(bad)


class TestParseSlurm:
    def test_valid_rows(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text(
            "\n".join([SLURM_HEADER, slurm_row("J1"), slurm_row("J2"), slurm_row("J3")]) + "\n"
        )
        result = parse_slurm(path)
        assert len(result.records) == 3
        assert result.rejected == []
        assert [r.job_id for r in result.records] == ["J1", "J2", "J3"]

    def test_unparseable_field_rejected_with_diagnostic(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text(
            "\n".join([SLURM_HEADER, slurm_row("J1"), slurm_row("J2", time_limit_s="unlimited")])
            + "\n"
        )
        result = parse_slurm(path)
        assert len(result.records) == 1
        assert len(result.rejected) == 1
        diag = result.rejected[0]
        assert diag.row == 3
        assert "time_limit_s" in diag.reason

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            parse_slurm(tmp_path / "nope.csv")

    def test_missing_column(self, tmp_path):
        path = tmp_path / "s.csv"
        path.write_text("job_id,user\nJ1,alice\n")
        with pytest.raises(DataError, match="missing mandatory columns"):
            parse_slurm(path)


class TestParseDcgm:
    def test_row_count(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = [dcgm_row(ts=1_740_000_000 + 10 * i) for i in range(10)]
        path.write_text("\n".join([DCGM_HEADER] + rows) + "\n")
        assert len(list(iter_dcgm(path))) == 10

    def test_out_of_range_ratio_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("\n".join([DCGM_HEADER, dcgm_row(sm_active="1.3")]) + "\n")
        rejected = []
        assert list(iter_dcgm(path, rejected)) == []
        assert len(rejected) == 1
        assert rejected[0].row == 2
        assert "sm_active" in rejected[0].reason

    def test_streaming_memory_independent_of_size(self, tmp_path):
        def peak_for(n_rows):
            path = tmp_path / f"d{n_rows}.csv"
            with path.open("w") as fh:
                fh.write(DCGM_HEADER + "\n")
                for i in range(n_rows):
                    fh.write(dcgm_row(ts=1_740_000_000 + 10 * i) + "\n")
            tracemalloc.start()
            count = sum(1 for _ in iter_dcgm(path))
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            assert count == n_rows
            return peak

        small = peak_for(1_000)
        big = peak_for(30_000)
        assert big < small + 150_000  # bounded buffer, not proportional to rows


class TestFilterIrregular:
    def test_regular_stream_kept(self):
        samples = [make_sample(timestamp=1_740_000_000 + t) for t in (0, 10, 20)]
        kept = list(filter_irregular(samples))
        assert [s.timestamp for s in kept] == [1_740_000_000, 1_740_000_010, 1_740_000_020]

    def test_sub_interval_point_dropped(self):
        samples = [make_sample(timestamp=1_740_000_000 + t) for t in (0, 3, 10, 20)]
        kept = [s.timestamp - 1_740_000_000 for s in filter_irregular(samples)]
        assert kept == [0, 10, 20]

    def test_matches_greedy_oracle_on_random_streams(self):
        from oracles import greedy_filter_indices

        rng = random.Random(13)
        cfg = IngestConfig()
        for _ in range(1000):
            ts = 0
            stamps = []
            for _ in range(rng.randint(1, 30)):
                ts += rng.randint(1, 15)
                stamps.append(1_740_000_000 + ts)
            samples = [make_sample(timestamp=t) for t in stamps]
            kept = [s.timestamp for s in filter_irregular(samples, cfg)]
            oracle = [
                stamps[i]
                for i in greedy_filter_indices(stamps, cfg.min_interval_s, cfg.interval_tolerance_s)
            ]
            assert kept == oracle

    def test_gap_invariant_per_key(self):
        rng = random.Random(17)
        cfg = IngestConfig()
        threshold = cfg.min_interval_s - cfg.interval_tolerance_s
        samples = []
        for gpu in range(3):
            ts = 1_740_000_000
            for _ in range(50):
                ts += rng.randint(2, 14)
                samples.append(make_sample(gpu_index=gpu, timestamp=ts))
        samples.sort(key=lambda s: s.timestamp)
        by_key = {}
        for s in filter_irregular(samples, cfg):
            by_key.setdefault((s.job_id, s.node, s.gpu_index), []).append(s.timestamp)
        for stamps in by_key.values():
            assert all(b - a >= threshold for a, b in zip(stamps, stamps[1:]))

    def test_unsorted_input_names_key(self):
        samples = [
            make_sample(timestamp=1_740_000_020),
            make_sample(timestamp=1_740_000_000),
        ]
        with pytest.raises(DataError, match="unsorted"):
            list(filter_irregular(samples))

    def test_interleaved_keys_independent(self):
        samples = [
            make_sample(gpu_index=0, timestamp=1_740_000_000),
            make_sample(gpu_index=1, timestamp=1_740_000_004),
            make_sample(gpu_index=0, timestamp=1_740_000_010),
            make_sample(gpu_index=1, timestamp=1_740_000_014),
        ]
        assert len(list(filter_irregular(samples))) == 4

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            IngestConfig(min_interval_s=0)
        with pytest.raises(ConfigError):
            IngestConfig(interval_tolerance_s=10.0)


class TestJoin:
    def test_simple_match(self):
        rec = make_record()
        samples = [make_sample(timestamp=1_740_000_000 + 10 * i) for i in range(4)]
        result = join([rec], samples)
        assert len(result.jobs) == 1
        assert len(result.jobs[0].samples) == 4
        assert result.orphan_count == 0
        assert result.jobs[0].targets is not None

    def test_sample_after_end_is_orphan(self):
        rec = make_record()
        result = join([rec], [make_sample(timestamp=rec.end_time + 10)])
        assert result.orphan_count == 1
        assert result.jobs[0].empty
        assert result.jobs[0].targets is None

    def test_counts_match_nested_loop_oracle(self):
        from oracles import nested_loop_join

        rng = random.Random(23)
        records = [
            make_record(job_id="J1", node_list=frozenset({"a"}), start_time=1000, end_time=2000),
            make_record(job_id="J2", node_list=frozenset({"a", "b"}), req_nodes=2, start_time=1500, end_time=2500),
            make_record(job_id="J3", node_list=frozenset({"c"}), start_time=0, end_time=900),
        ]
        samples = []
        for _ in range(200):
            samples.append(
                make_sample(
                    job_id=rng.choice(["J1", "J2", "J3", "JX"]),
                    node=rng.choice(["a", "b", "c", "d"]),
                    timestamp=rng.randint(0, 3000),
                )
            )
        result = join(records, samples)
        oracle_counts, oracle_orphans = nested_loop_join(records, samples)
        assert {j.record.job_id: len(j.samples) for j in result.jobs} == oracle_counts
        assert result.orphan_count == oracle_orphans
        # conservation: every parsed sample is either attached or an orphan
        assert result.sample_count + result.orphan_count == len(samples)

    def test_duplicate_job_id_rejected(self):
        with pytest.raises(DataError, match="duplicate"):
            join([make_record(), make_record()], [])

    def test_application_filter(self):
        recs = [
            make_record(job_id="J1", executable="vasp_std"),
            make_record(job_id="J2", executable="lmp"),
        ]
        result = join(recs, [], IngestConfig(application_filter="vasp*"))
        assert [j.record.job_id for j in result.jobs] == ["J1"]
        assert result.filtered_job_count == 1

    def test_idempotent(self):
        rec = make_record()
        samples = [make_sample(timestamp=1_740_000_000 + 10 * i) for i in range(5)]
        first = join([rec], samples).jobs
        again = join([j.record for j in first], [s for j in first for s in j.samples]).jobs
        assert first == again


class TestTelemetryFile:
    def test_round_trip(self, tmp_path):
        rec = make_record()
        samples = tuple(make_sample(timestamp=1_740_000_000 + 10 * i) for i in range(4))
        job = JobTelemetry(record=rec, samples=samples, targets=aggregate_targets(samples))
        path = tmp_path / "jobs.jsonl"
        write_telemetry(path, [job])
        loaded = read_telemetry(path)
        assert loaded == [job]

    def test_dict_round_trip_exact_floats(self):
        job = JobTelemetry(
            record=make_record(),
            samples=(make_sample(power_usage=150.123456789012345),),
            targets=aggregate_targets([make_sample(power_usage=150.123456789012345)]),
        )
        assert job_from_dict(job_to_dict(job)) == job

    def test_corrupt_line(self, tmp_path):
        path = tmp_path / "jobs.jsonl"
        path.write_text("not json\n")
        with pytest.raises(DataError):
            read_telemetry(path)
