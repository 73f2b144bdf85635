"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see every line; tolerances
are pinned here, not configurable.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from gmetro import codec, engine
from gmetro.codec import FecStatus
from gmetro.engine import Sim
from gmetro.lasers import ThermalDbrModel
from gmetro.link import FrequencyPlan
from gmetro.protocol import RuState, simulate_hold_loop
from gmetro.scenario import parse_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def report(criterion: str, passed: bool, detail: str):
    print(f"ACCEPT-{criterion} {'PASS' if passed else 'FAIL'} {detail}")
    assert passed, f"criterion {criterion}: {detail}"


def test_01_codec_exhaustive_single_error_correction():
    t0 = time.perf_counter()
    failures = 0
    for value in range(2**11):
        word = int(codec._ENCODE_TABLE[value])
        for k in range(15):
            data, status = codec._decode_int(word ^ (1 << k))
            if status is not FecStatus.CORRECTED or data != value:
                failures += 1
    elapsed = time.perf_counter() - t0
    report("01", failures == 0 and elapsed < 5.0,
           f"2^11 x 15 flips, failures={failures}, {elapsed:.2f}s")


def test_02_message_loss_statistics():
    p = 5e-6
    analytic = codec.expected_message_loss_interval(p)
    n_bits = 8 * 10**12  # >= 1e10 required; more for statistical weight
    mc = codec.simulate_message_loss_interval(p, n_bits, np.random.default_rng(20260809))
    rel = abs(mc - analytic) / analytic
    hours = analytic / 3600.0
    # 17 h is the field-reported loss interval for this channel class; the
    # continuous-stream closed form must land within one order of magnitude
    # (the deployed frame format and duty cycle are not modeled here)
    ratio = hours / 17.0
    ok = rel < 0.10 and abs(hours - 31.7) / 31.7 < 0.01 and 0.1 <= ratio <= 10.0
    report("02", ok,
           f"analytic={hours:.2f}h mc={mc / 3600.0:.2f}h rel={rel:.3f} "
           f"ratio_to_17h={ratio:.2f} (same order)")


def test_03_spectral_mask():
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    symbols = codec.manchester_encode(rng.integers(0, 2, 2**15))  # 2^16 symbols
    fraction, dc_db = codec.spectral_occupancy(symbols, baud_rate=100_000.0)
    elapsed = time.perf_counter() - t0
    ok = fraction >= 0.95 and dc_db <= -30.0 and elapsed < 1.0
    report("03", ok,
           f"in_band={fraction:.4f} dc_rel={dc_db:.1f}dB {elapsed:.2f}s")


def test_04_sweep_convergence_16_channels():
    t0 = time.perf_counter()
    scenario = parse_scenario((SCENARIOS / "tree16_sweep.gms").read_text())
    sim = Sim(scenario)
    trace, metrics = sim.run()
    wall = time.perf_counter() - t0
    plan = FrequencyPlan()
    offsets = [abs(ru.laser.emission().frequency_thz - plan.center_thz(ru.channel)) * 1e3
               for ru in sim.rus.values()]
    bound_s = sim.rus["ru00"].machine.sweep_plan.worst_case_s + 2.55
    worst = max(metrics.time_to_lock_s.values())
    ok = (len(metrics.time_to_lock_s) == 16
          and all(ru.machine.state in (RuState.LOCKED, RuState.HOLD)
                  for ru in sim.rus.values())
          and max(offsets) <= 1.0
          and metrics.min_crosstalk_margin_db >= 25.0
          and worst <= bound_s
          and wall < 10.0)
    report("04", ok,
           f"locked=16/16 max_off={max(offsets):.2f}GHz "
           f"margin={metrics.min_crosstalk_margin_db:.1f}dB "
           f"worst_lock={worst:.2f}s<=bound {bound_s:.2f}s wall={wall:.1f}s")


def test_05_hold_loop_24h():
    held = simulate_hold_loop(duration_s=86_400.0, seeds=range(20), enabled=True)
    free = simulate_hold_loop(duration_s=86_400.0, seeds=range(20), enabled=False)
    exceed_free = float(np.mean(free > 7.5))
    ok = bool(np.all(held <= 7.5)) and exceed_free >= 0.5
    report("05", ok,
           f"held_max={held.max():.2f}GHz<=7.5 "
           f"ablation_exceeds={exceed_free:.0%}>=50%")


def test_06_vernier_coincidence_law():
    rng = np.random.default_rng(6)
    linewidth = 2.0
    worst = 0.0
    for _ in range(20):
        df = float(rng.uniform(6.0, 10.0))
        q = int(rng.integers(9, 14))
        f1, f2 = (q - 1) * df, q * df
        # a tuned Vernier pair aligns its combs somewhere; anchor the combs
        # on a random coincidence and let the scan find the rest
        anchor = float(rng.uniform(190_500.0, 193_500.0))
        o1 = anchor % f1
        o2 = anchor % f2
        # independent brute-force scan over a 4 THz window
        grid = np.arange(190_000.0, 194_000.0, 0.05)
        front = np.abs((grid - o1 + f1 / 2) % f1 - f1 / 2)
        back = np.abs((grid - o2 + f2 / 2) % f2 - f2 / 2)
        hits = grid[(front <= 0.06) & (back <= 0.06)]
        clusters = [hits[0]]
        for h in hits[1:]:
            if h - clusters[-1] > 10 * linewidth:
                clusters.append(h)
        spacing = np.diff(clusters)
        expected = f1 * f2 / abs(f2 - f1)
        worst = max(worst, float(np.max(np.abs(spacing - expected))))
    report("06", worst <= linewidth,
           f"20 pairs, worst spacing error {worst:.3f}GHz <= {linewidth}GHz")


def test_07_laser_anchors():
    laser = ThermalDbrModel()
    shift = laser.bragg_peak_nm(laser.t_ref_k + 200.0) - laser.bragg_peak_nm(laser.t_ref_k)
    power = laser.heater_power_mw_for_shift(25.0)
    ok = abs(shift - 20.0) < 1e-9 and abs(power - 48.1) <= 0.1
    report("07", ok, f"200K->{shift:.3f}nm, 25nm@{power:.2f}mW")


def test_08_pairwise_self_tuning():
    scenario = parse_scenario((SCENARIOS / "pairwise.gms").read_text())
    assert scenario.mgmt.ber == 5e-6
    trace, metrics = engine.run(scenario)
    retries = trace.count("RETRY")
    ok = (trace.count("NMS") == 1
          and "ru0" in metrics.time_to_lock_s
          and retries > 0)
    report("08", ok,
           f"nms_events=1 lock={metrics.time_to_lock_s.get('ru0', float('nan')):.2f}s "
           f"retries={retries} ber=5e-6")


def test_09_horseshoe_protection():
    scenario = parse_scenario((SCENARIOS / "horseshoe_protection.gms").read_text())
    sim = Sim(scenario)
    trace, metrics = sim.run()
    east = [r for r in trace.records if r.kind == "SWITCH" and r.details == "co_w->co_e"]
    west = [r for r in trace.records if r.kind == "SWITCH" and r.details == "co_e->co_w"]
    final_paths = {name: sim.topology.active_path(name).co for name in sim.rus}
    wavelengths_kept = all(
        ru.machine.assigned_channel == ru.channel for ru in sim.rus.values())
    ok = (len(east) == 4 and len(west) == 4
          and set(metrics.protection_switch_s) == set(sim.rus)
          and all(v > 0 for v in metrics.protection_switch_s.values())
          and all(co == "co_w" for co in final_paths.values())
          and wavelengths_kept
          and all(ru.machine.state in (RuState.LOCKED, RuState.HOLD)
                  for ru in sim.rus.values()))
    worst = max(metrics.protection_switch_s.values())
    report("09", ok,
           f"4/4 relocked east then restored west, worst protection {worst:.3f}s")


def test_10_determinism_three_scenarios():
    mismatches = []
    for name in ("tree16_sweep.gms", "horseshoe_protection.gms", "pairwise.gms"):
        scenario = parse_scenario((SCENARIOS / name).read_text())
        a, _ = engine.run(scenario)
        b, _ = engine.run(scenario)
        if a.render() != b.render():
            mismatches.append(name)
    report("10", not mismatches,
           f"byte-identical traces on 3 scenarios{'; FAILED: ' + ', '.join(mismatches) if mismatches else ''}")
