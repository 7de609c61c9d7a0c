"""Evaluation metrics over episode records."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safegrasp.metrics import (
    average_return_normalized,
    average_violations,
    safety_driven_success_rate,
    success_rate,
    summarize,
)
from safegrasp.runlog import EpisodeRecord, ViolationCounts


def record(
    return_sum=0.0,
    steps=10,
    success=False,
    failed=False,
    **violations,
) -> EpisodeRecord:
    return EpisodeRecord(
        return_sum=return_sum,
        steps=steps,
        success=success,
        violations=ViolationCounts(**violations),
        terminated_by_failure=failed,
    )


episode_strategy = st.builds(
    record,
    return_sum=st.floats(-100.0, 100.0, allow_nan=False),
    steps=st.integers(1, 200),
    success=st.booleans(),
    failed=st.booleans(),
    collision=st.integers(0, 3),
    obstacle_collision=st.integers(0, 3),
    speed=st.integers(0, 3),
    velocity=st.integers(0, 3),
    velocity_during_collision=st.integers(0, 3),
)


class TestAverageReturnNormalized:
    def test_single_failed_episode(self):
        records = [record(return_sum=-5.0, steps=10, failed=True)]
        assert average_return_normalized(records) == pytest.approx(-0.5)

    def test_zero_returns_stay_zero(self):
        records = [record(return_sum=0.0, steps=s) for s in (3, 50, 117)]
        assert average_return_normalized(records) == 0.0

    def test_fallback_divisor_without_failures(self):
        records = [
            record(return_sum=1.0, steps=10),
            record(return_sum=3.0, steps=10),
        ]
        assert average_return_normalized(records) == pytest.approx(0.2)

    def test_divides_by_failed_episode_steps_only(self):
        records = [
            record(return_sum=4.0, steps=100),
            record(return_sum=2.0, steps=20, failed=True),
        ]
        # mean return 3.0 over mean failed steps 20
        assert average_return_normalized(records) == pytest.approx(0.15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            average_return_normalized([])


class TestAverageViolations:
    def test_two_episode_mean(self):
        records = [record(collision=1), record(collision=0)]
        assert average_violations(records)["collision"] == pytest.approx(0.5)

    def test_all_zero(self):
        means = average_violations([record(), record()])
        assert all(v == 0.0 for v in means.values())

    def test_synthetic_low_rate_fixture(self):
        # 1000 episodes carrying 48 collision events in total
        records = [record(collision=1) for _ in range(48)]
        records += [record() for _ in range(952)]
        assert average_violations(records)["collision"] == pytest.approx(0.048)

    def test_types_tracked_independently(self):
        records = [record(speed=2, velocity=1, obstacle_collision=3)]
        means = average_violations(records)
        assert means["speed"] == 2.0
        assert means["velocity"] == 1.0
        assert means["obstacle_collision"] == 3.0
        assert means["collision"] == 0.0


class TestSuccessRates:
    def test_basic_fraction(self):
        records = [record(success=True)] * 3 + [record()] * 7
        assert success_rate(records) == pytest.approx(0.3)

    def test_zero_successes(self):
        assert success_rate([record()] * 5) == 0.0

    def test_evaluation_fixture_success(self):
        # 157 successes out of 436 evaluation episodes
        records = [record(success=True) for _ in range(157)]
        records += [record() for _ in range(436 - 157)]
        assert success_rate(records) == pytest.approx(0.36, abs=0.005)

    def test_evaluation_fixture_safety_driven(self):
        # 150 clean successes, 7 successes with one violation, rest failures
        records = [record(success=True) for _ in range(150)]
        records += [record(success=True, speed=1) for _ in range(7)]
        records += [record() for _ in range(436 - 157)]
        assert safety_driven_success_rate(records) == pytest.approx(0.34, abs=0.005)
        assert success_rate(records) == pytest.approx(0.36, abs=0.005)

    def test_violating_success_counts_only_in_plain_rate(self):
        records = [record(success=True, speed=1)]
        assert success_rate(records) == 1.0
        assert safety_driven_success_rate(records) == 0.0

    def test_all_clean_successes_rates_coincide(self):
        records = [record(success=True)] * 4
        assert success_rate(records) == safety_driven_success_rate(records) == 1.0


class TestProperties:
    @given(st.lists(episode_strategy, min_size=1, max_size=40))
    @settings(max_examples=300, deadline=None)
    def test_safety_driven_never_exceeds_success_rate(self, records):
        sdr = safety_driven_success_rate(records)
        sr = success_rate(records)
        assert 0.0 <= sdr <= sr <= 1.0

    @given(st.lists(episode_strategy, min_size=2, max_size=20), st.randoms())
    @settings(max_examples=100, deadline=None)
    def test_permutation_invariance(self, records, rnd):
        shuffled = list(records)
        rnd.shuffle(shuffled)
        assert success_rate(records) == success_rate(shuffled)
        assert safety_driven_success_rate(records) == safety_driven_success_rate(
            shuffled
        )
        assert average_violations(records) == average_violations(shuffled)
        assert average_return_normalized(records) == pytest.approx(
            average_return_normalized(shuffled)
        )

    @given(
        st.lists(episode_strategy, min_size=1, max_size=15),
        st.lists(episode_strategy, min_size=1, max_size=15),
    )
    @settings(max_examples=100, deadline=None)
    def test_concatenation_is_size_weighted(self, left, right):
        combined = success_rate(left + right)
        expected = (
            success_rate(left) * len(left) + success_rate(right) * len(right)
        ) / (len(left) + len(right))
        assert combined == pytest.approx(expected)


class TestSummarize:
    def test_document_fields(self):
        records = [
            record(return_sum=-2.0, steps=30, success=True),
            record(return_sum=-7.0, steps=15, failed=True, collision=1),
        ]
        doc = summarize(records)
        assert doc["episodes"] == 2
        assert doc["total_steps"] == 45
        assert doc["success_count"] == 1
        assert doc["failed_episodes"] == 1
        assert doc["average_violations"]["collision"] == 0.5
        assert doc["success_rate"] == 0.5
