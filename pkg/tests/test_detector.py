import itertools
import math
import random

import pytest

from blesentry.analyzer import ResponseTimeSample, ingest
from blesentry.catalog import builtin_attackers, builtin_devices, find_attacker, find_device
from blesentry.detector import (
    Aggregation,
    Decision,
    DetectorConfig,
    EmptyHistogram,
    EmptySampleSource,
    ResponseHistogram,
    UnprofiledOperation,
    classify_sample,
    decision_region,
    format_verdict,
    likelihood_ratio,
    majority_verdict,
    probe_and_decide,
)
from blesentry.model import DeviceId, OperationKind
from blesentry.profiler import DeviceProfile, Mode, build_profile
from blesentry.simulator import SessionPlan, simulate_session

DEVICE = DeviceId("LEDBLE", "AA:BB:CC:DD:EE:01")
CFG = DetectorConfig(t_mitm=0.0022)

LEDBLE_READ_MODE = Mode(mean=0.03023, sigma=3.118399e-07, count=200, weight=1.0)


def make_profile(read_modes=(), write_modes=(), device=DEVICE):
    return DeviceProfile(
        device=device,
        read_handle=0x0003 if read_modes else None,
        write_handle=0x000B if write_modes else None,
        read_modes=tuple(read_modes),
        write_modes=tuple(write_modes),
        read_samples=sum(m.count for m in read_modes),
        write_samples=sum(m.count for m in write_modes),
        created_at=1.0,
    )


def make_sample(tr, op=OperationKind.READ):
    return ResponseTimeSample(device=DEVICE, op=op, handle=0x0003, tr=tr, request_ts=1.0, conn_id=1)


def tv_profile():
    modes = [Mode(mean=m, sigma=1.5e-5, count=100, weight=w) for m, w in
             ((0.050, 0.894), (0.100, 0.065), (0.150, 0.041))]
    return make_profile(read_modes=modes, device=DeviceId("SamsungTV", "AA:BB:CC:DD:EE:07"))


# --- decision regions ---------------------------------------------------------


def test_region_for_the_tight_bulb_mode():
    lo, hi = decision_region(LEDBLE_READ_MODE, t_mitm=0.0022)
    assert lo == pytest.approx(0.0302291, abs=1e-7)
    assert hi == pytest.approx(0.0324300, abs=1e-9)


def test_region_degenerate_sigma():
    lo, hi = decision_region(Mode(mean=0.05, sigma=0.0, count=10, weight=1.0), t_mitm=0.0022)
    assert lo == 0.05
    assert hi == 0.05 + 0.0022


def test_region_lower_bound_clamps_at_zero():
    # A wide-write mode: mean 0.01103, sigma sqrt(3.14348e-5) ~ 5.607e-3.
    mode = Mode(mean=0.01103, sigma=math.sqrt(3.14348e-5), count=200, weight=1.0)
    lo, hi = decision_region(mode, t_mitm=0.0022)
    assert lo == 0.0
    assert hi == pytest.approx(0.01323, abs=1e-9)


def test_region_arithmetic_across_the_catalog():
    for device in builtin_devices():
        for modes in (device.read_modes, device.write_modes):
            for generator_mode in modes:
                mode = Mode(mean=generator_mode.mean, sigma=generator_mode.sigma, count=1, weight=1.0)
                lo, hi = decision_region(mode, t_mitm=0.0022)
                assert lo <= mode.mean <= hi
                assert abs((hi - mode.mean) - 0.0022) < 1e-12


# --- per-sample classification --------------------------------------------------


def test_inside_the_region_is_benign():
    profile = make_profile(read_modes=[LEDBLE_READ_MODE])
    verdict = classify_sample(profile, make_sample(0.030230), CFG)
    assert verdict.decision is Decision.BENIGN
    assert verdict.matched_mode == LEDBLE_READ_MODE
    assert verdict.excess == 0.0


def test_minimum_relay_delay_is_caught():
    profile = make_profile(read_modes=[LEDBLE_READ_MODE])
    verdict = classify_sample(profile, make_sample(0.030230 + 0.0023), CFG)
    assert verdict.decision is Decision.ATTACK
    assert verdict.excess == pytest.approx(0.0001, abs=1e-6)


def test_multimodal_gaps_are_attack_territory():
    profile = tv_profile()
    assert classify_sample(profile, make_sample(0.100), CFG).decision is Decision.BENIGN
    verdict = classify_sample(profile, make_sample(0.075), CFG)
    assert verdict.decision is Decision.ATTACK
    assert verdict.excess == pytest.approx(0.075 - 0.0522, abs=1e-9)
    assert classify_sample(profile, make_sample(0.155), CFG).decision is Decision.ATTACK


def test_too_fast_samples_vote_below_region():
    profile = tv_profile()
    verdict = classify_sample(profile, make_sample(0.0499), CFG)
    assert verdict.decision is Decision.BELOW_REGION
    assert verdict.excess < 0


def test_region_boundaries_are_inclusive():
    profile = make_profile(read_modes=[Mode(mean=0.05, sigma=0.001, count=10, weight=1.0)])
    lo, hi = decision_region(profile.read_modes[0], CFG.t_mitm)
    assert classify_sample(profile, make_sample(lo), CFG).decision is Decision.BENIGN
    assert classify_sample(profile, make_sample(hi), CFG).decision is Decision.BENIGN


def test_unprofiled_operation_rejected():
    profile = make_profile(read_modes=[LEDBLE_READ_MODE])
    with pytest.raises(UnprofiledOperation):
        classify_sample(profile, make_sample(0.05, op=OperationKind.WRITE), CFG)


def test_attack_verdicts_never_flip_benign_as_time_grows():
    rng = random.Random(99)
    profile = tv_profile()
    for _ in range(200):
        tr = rng.uniform(0.049, 0.30)
        verdict = classify_sample(profile, make_sample(tr), CFG)
        if verdict.decision is Decision.ATTACK:
            bigger = tr + rng.uniform(0.0, 0.02)
            follow_up = classify_sample(profile, make_sample(bigger), CFG)
            assert follow_up.decision in (Decision.ATTACK, Decision.BENIGN)
            if follow_up.decision is Decision.BENIGN:
                # Re-entry is only possible through a higher mode's region.
                assert follow_up.matched_mode.mean > tr - CFG.t_mitm


def test_zero_miss_guarantee_for_tight_single_mode_devices():
    # Operations whose noise sits far below the 0.1 ms of headroom between
    # the slowest part of the detection floor and the fastest relay.
    cases = [("LEDBLE", "read"), ("LEDBLE", "write"), ("LYWSD03MMC", "read"), ("Medical", "read")]
    devices = builtin_devices()
    tools = builtin_attackers()
    for name, op_name in cases:
        device = find_device(devices, name)
        op = OperationKind.READ if op_name == "read" else OperationKind.WRITE
        benign_plan = SessionPlan(
            device=device,
            n_reads=200 if op is OperationKind.READ else 0,
            n_writes=0 if op is OperationKind.READ else 200,
            seed=55,
        )
        profile = build_profile(device.id, ingest(simulate_session(benign_plan)).samples)
        for tool in tools:
            plan = SessionPlan(
                device=device,
                n_reads=1000 if op is OperationKind.READ else 0,
                n_writes=0 if op is OperationKind.READ else 1000,
                attacker=tool,
                seed=77,
            )
            samples = ingest(simulate_session(plan)).samples
            assert all(
                classify_sample(profile, s, CFG).decision is Decision.ATTACK for s in samples
            )


# --- likelihood ratio -----------------------------------------------------------


def test_ratio_is_tiny_on_the_populated_bin():
    hist = ResponseHistogram.from_values([0.030230] * 200, bin_width=0.001)
    ratio = likelihood_ratio(hist, t_mitm=0.0022, tr=0.030230)
    assert ratio == pytest.approx(1e-9, rel=0.01)


def test_ratio_is_huge_at_the_shifted_bin():
    hist = ResponseHistogram.from_values([0.030230] * 200, bin_width=0.001)
    ratio = likelihood_ratio(hist, t_mitm=0.0022, tr=0.030230 + 0.0022)
    assert ratio > 1e6


def test_empty_histogram_rejected():
    with pytest.raises(EmptyHistogram):
        ResponseHistogram.from_values([], bin_width=0.001)


def test_ratio_agrees_with_the_region_test():
    device = find_device(builtin_devices(), "LEDBLE")
    benign_plan = SessionPlan(device=device, n_reads=200, n_writes=0, seed=31)
    benign = ingest(simulate_session(benign_plan)).samples
    profile = build_profile(device.id, benign)
    hist = ResponseHistogram.from_values([s.tr for s in benign])

    labeled = []
    fresh = SessionPlan(device=device, n_reads=200, n_writes=0, seed=32)
    labeled += ingest(simulate_session(fresh)).samples
    attacked = SessionPlan(
        device=device, n_reads=200, n_writes=0, attacker=builtin_attackers()[0], seed=33
    )
    labeled += ingest(simulate_session(attacked)).samples

    agree = 0
    for s in labeled:
        # No support under the benign view means the value is not explainable
        # as benign; the ratio test flags it just like the region test does.
        ratio_says_attack = likelihood_ratio(hist, 0.0022, s.tr) >= 1.0
        region_says_attack = classify_sample(profile, s, CFG).decision is Decision.ATTACK
        agree += ratio_says_attack == region_says_attack
    assert agree / len(labeled) >= 0.99


# --- probing and aggregation ------------------------------------------------------


class CountingSource:
    def __init__(self, samples):
        self._it = iter(samples)
        self.consumed = 0

    def __iter__(self):
        return self

    def __next__(self):
        value = next(self._it)
        self.consumed += 1
        return value


def test_benign_first_sample_terminates_the_probe():
    profile = make_profile(read_modes=[LEDBLE_READ_MODE])
    source = CountingSource([make_sample(0.030230), make_sample(0.030230), make_sample(0.5)])
    verdict = probe_and_decide(profile, source, CFG)
    assert source.consumed == 1
    assert verdict.final is Decision.BENIGN
    assert verdict.total == 1


def test_single_aggregation_flags_a_lone_attack():
    profile = make_profile(read_modes=[LEDBLE_READ_MODE])
    verdict = probe_and_decide(profile, [make_sample(0.040)], CFG)
    assert verdict.final is Decision.ATTACK
    assert verdict.total == 1
    assert verdict.attack_votes == 1


def test_majority_vote_arithmetic():
    profile = make_profile(read_modes=[LEDBLE_READ_MODE])
    cfg = DetectorConfig(t_mitm=0.0022, k_max=4, aggregation=Aggregation.MAJORITY)
    samples = [make_sample(0.040), make_sample(0.030230), make_sample(0.040), make_sample(0.040)]
    verdict = probe_and_decide(profile, samples, cfg)
    assert verdict.final is Decision.ATTACK  # 3 of 4
    assert verdict.attack_votes == 3
    assert verdict.total == 4


def test_probe_respects_the_budget():
    profile = make_profile(read_modes=[LEDBLE_READ_MODE])
    cfg = DetectorConfig(t_mitm=0.0022, k_max=3, aggregation=Aggregation.SINGLE)
    source = CountingSource([make_sample(0.040)] * 10)
    verdict = probe_and_decide(profile, source, cfg)
    assert verdict.total == 3
    assert source.consumed == 3


def test_below_region_votes_against_attack():
    profile = tv_profile()
    cfg = DetectorConfig(t_mitm=0.0022, k_max=3, aggregation=Aggregation.MAJORITY)
    samples = [make_sample(0.0499), make_sample(0.075), make_sample(0.0499)]
    verdict = probe_and_decide(profile, samples, cfg)
    assert verdict.final is Decision.BENIGN
    assert verdict.attack_votes == 1
    assert verdict.total == 3


def test_empty_source_rejected():
    profile = make_profile(read_modes=[LEDBLE_READ_MODE])
    with pytest.raises(EmptySampleSource):
        probe_and_decide(profile, [], CFG)


def test_majority_matches_brute_force_for_all_patterns():
    for k in range(1, 11):
        for pattern in itertools.product((Decision.ATTACK, Decision.BENIGN), repeat=k):
            expected = (
                Decision.ATTACK
                if sum(d is Decision.ATTACK for d in pattern) >= math.ceil(k / 2)
                else Decision.BENIGN
            )
            assert majority_verdict(pattern) is expected


def test_verdict_record_format():
    profile = make_profile(read_modes=[LEDBLE_READ_MODE])
    verdict = probe_and_decide(profile, [make_sample(0.040)], CFG)
    text = format_verdict(verdict, conn_id=3)
    assert text.splitlines()[0] == "LEDBLE/AA:BB:CC:DD:EE:01 conn=3 final=attack votes=1/1"
    assert "read  tr=0.040000 attack" in text
