import math
import random

import pytest
from hypothesis import given, strategies as st

from gpuforecast.domain import (
    AggregateTargets,
    PowerBandScheme,
    aggregate_targets,
    band_of,
    mem_utilization,
)
from gpuforecast.errors import ConfigError, DataError

from conftest import make_record, make_sample


class TestMemUtilization:
    def test_zero_numerator(self):
        assert mem_utilization(0.0, 40000.0) == 0.0

    def test_symmetry_point(self):
        assert mem_utilization(20000.0, 20000.0) == 50.0

    def test_direct_arithmetic(self):
        # 100 * 4096 / 40960
        assert mem_utilization(4096.0, 36864.0) == pytest.approx(10.0, abs=1e-12)

    def test_degenerate_input(self):
        with pytest.raises(DataError):
            mem_utilization(0.0, 0.0)
        with pytest.raises(DataError):
            mem_utilization(-1.0, 10.0)

    @given(
        st.floats(min_value=0.0, max_value=1e8),
        st.floats(min_value=1e-6, max_value=1e8),
        st.floats(min_value=1e-6, max_value=1e6),
    )
    def test_scale_invariance(self, used, free, c):
        base = mem_utilization(used, free)
        scaled = mem_utilization(used * c, free * c)
        assert scaled == pytest.approx(base, abs=1e-9)
        assert 0.0 <= base <= 100.0


class TestAggregateTargets:
    def test_single_sample(self):
        t = aggregate_targets([make_sample()])
        assert t == AggregateTargets(80.0, 25.0, 150.0)

    def test_mean_of_pair(self):
        samples = [make_sample(power_usage=100.0), make_sample(power_usage=200.0)]
        assert aggregate_targets(samples).avg_power == 150.0

    def test_against_bruteforce(self):
        rng = random.Random(3)
        samples = [
            make_sample(
                gpu_utilization=rng.uniform(0, 100),
                fb_used=rng.uniform(0, 30000),
                fb_free=rng.uniform(1, 30000),
                power_usage=rng.uniform(0, 400),
                timestamp=1_740_000_000 + 10 * i,
            )
            for i in range(6)
        ]
        t = aggregate_targets(samples)
        assert t.max_gpu_utilization == max(s.gpu_utilization for s in samples)
        assert t.max_mem_utilization == max(
            100.0 * s.fb_used / (s.fb_used + s.fb_free) for s in samples
        )
        assert t.avg_power == pytest.approx(
            sum(s.power_usage for s in samples) / 6, rel=1e-12
        )

    def test_permutation_invariance(self):
        rng = random.Random(7)
        samples = [
            make_sample(power_usage=rng.uniform(0, 300), gpu_utilization=rng.uniform(0, 100))
            for _ in range(12)
        ]
        shuffled = samples[:]
        rng.shuffle(shuffled)
        assert aggregate_targets(samples) == aggregate_targets(shuffled)

    def test_empty_errors(self):
        with pytest.raises(DataError):
            aggregate_targets([])


class TestBandOf:
    SCHEME = PowerBandScheme((100.0, 150.0, 220.0))

    def test_boundary_is_upper_band(self):
        assert band_of(100.0, self.SCHEME) == 1

    def test_zero_power(self):
        assert band_of(0.0, self.SCHEME) == 0

    def test_interval_membership(self):
        assert band_of(151.0, self.SCHEME) == 2

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            band_of(-1.0, self.SCHEME)

    def test_partition_of_nonnegative_watts(self):
        rng = random.Random(11)
        for _ in range(1000):
            w = rng.uniform(0, 400)
            band = band_of(w, self.SCHEME)
            bounds = [0.0, *self.SCHEME.boundaries, math.inf]
            assert bounds[band] <= w < bounds[band + 1]

    def test_scheme_validation(self):
        with pytest.raises(ConfigError):
            PowerBandScheme((100.0, 100.0, 220.0))
        with pytest.raises(ConfigError):
            PowerBandScheme((100.0, 90.0, 220.0))


class TestTypeInvariants:
    def test_record_rejects_bad_times(self):
        with pytest.raises(DataError):
            make_record(end_time=1_739_999_999)

    def test_record_rejects_node_count_mismatch(self):
        with pytest.raises(DataError):
            make_record(req_nodes=2)

    def test_sample_rejects_out_of_range_ratio(self):
        with pytest.raises(DataError):
            make_sample(sm_active=1.3)

    def test_sample_rejects_bad_framebuffer(self):
        with pytest.raises(DataError):
            make_sample(fb_used=0.0, fb_free=0.0)

    def test_targets_ranges(self):
        with pytest.raises(DataError):
            AggregateTargets(120.0, 10.0, 100.0)
        with pytest.raises(DataError):
            AggregateTargets(50.0, 10.0, -1.0)
