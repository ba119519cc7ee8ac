from __future__ import annotations

import pytest

from gpuforecast.domain import DcgmSample, JobTelemetry, SlurmJobRecord, aggregate_targets


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\n[acceptance] {name}: {'PASS' if report.passed else 'FAIL'}")


def make_record(**over) -> SlurmJobRecord:
    base = dict(
        job_id="J1",
        user="alice",
        job_name="wl0",
        account="acct0",
        category="cat0",
        req_cpus=64,
        req_nodes=1,
        req_gpus=4,
        req_mem=256000,
        time_limit=3600,
        start_time=1_740_000_000,
        end_time=1_740_000_600,
        node_list=frozenset({"nid000001"}),
        executable="vasp_std",
    )
    base.update(over)
    return SlurmJobRecord(**base)


def make_sample(**over) -> DcgmSample:
    base = dict(
        job_id="J1",
        node="nid000001",
        gpu_index=0,
        timestamp=1_740_000_000,
        gpu_utilization=80.0,
        fb_used=10000.0,
        fb_free=30000.0,
        sm_active=0.8,
        sm_occupancy=0.5,
        dram_active=0.4,
        fp64_active=0.3,
        tensor_active=0.1,
        power_usage=150.0,
    )
    base.update(over)
    return DcgmSample(**base)


def make_job(
    n_steps,
    gpus=1,
    job_id="J1",
    start=1_740_000_000,
    powers=None,
    skip=(),
    **record_over,
) -> JobTelemetry:
    """A gapless (unless ``skip``) single-node job with one sample per
    step per GPU. ``powers`` may be per-step scalars or per-step per-GPU
    lists."""
    samples = []
    for t in range(n_steps):
        if t in skip:
            continue
        for g in range(gpus):
            if powers is None:
                power = 150.0
            else:
                step = powers[t]
                power = float(step[g] if hasattr(step, "__len__") else step)
            samples.append(
                make_sample(job_id=job_id, gpu_index=g, timestamp=start + 10 * t, power_usage=power)
            )
    record = make_record(
        job_id=job_id, start_time=start, end_time=start + 10 * n_steps, **record_over
    )
    return JobTelemetry(
        record=record, samples=tuple(samples), targets=aggregate_targets(samples)
    )


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture
def sample_factory():
    return make_sample
