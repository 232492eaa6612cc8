"""Acceptance suite: the eleven headline checks, one test each.

Every test prints a single [Cnn] PASS/FAIL line (run with ``pytest -s`` or
``-rA`` to see them) and asserts at its stated tolerance. Expensive
closed-loop runs come from session fixtures shared with the unit tests.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from saslock.atomic_data import parse_line_data, pump_repump_separation, serialize_line_data
from saslock.harness import ingest_scope_csv, manifold_window
from saslock.lineshape import (
    GaussianParams,
    LorentzianParams,
    doppler_fwhm,
    doppler_gaussian,
    lorentzian,
)
from saslock.plant import PlantConfig, RampConfig
from saslock.servo import (
    Disturbances,
    LockConfig,
    PidConfig,
    PidState,
    closed_loop_run,
    pid_step,
)
from saslock.spectrum import extract_markers, subdoppler_extrema


def check(cid, description, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[{cid}] {status} {description}" + (f" ({detail})" if detail else ""))
    assert ok, f"{cid} {description}: {detail}"


def test_c01_lineshape_closed_forms():
    lor = LorentzianParams(nu0=0.0, gamma_fwhm=6.0666e6)
    peak_exact = lorentzian(lor.nu0, lor) == 1.0

    half = brentq(lambda x: lorentzian(x, lor) - 0.5, 0, 10 * lor.gamma_fwhm, rtol=1e-15)
    lor_fwhm_ok = abs(2 * half - lor.gamma_fwhm) / lor.gamma_fwhm < 1e-9

    gauss = GaussianParams(nu0=0.0, fwhm=522.0e6)
    area, _ = quad(lambda x: doppler_gaussian(x, gauss), -10 * gauss.fwhm, 10 * gauss.fwhm,
                   limit=200)
    area_ok = abs(area - 1.0) < 1e-6

    center = doppler_gaussian(0.0, gauss)
    ghalf = brentq(lambda x: doppler_gaussian(x, gauss) - center / 2, 0, 5 * gauss.fwhm,
                   rtol=1e-15)
    gauss_fwhm_ok = abs(2 * ghalf - gauss.fwhm) / gauss.fwhm < 1e-9

    check(
        "C01",
        "line-shape closed forms (peak, FWHMs to 1e-9, unit area to 1e-6)",
        peak_exact and lor_fwhm_ok and area_ok and gauss_fwhm_ok,
        f"area={area:.9f}",
    )


def test_c02_doppler_width_against_oracle(table):
    kb, c = 1.380649e-23, 299792458.0
    mass = table.isotope("Rb87").mass
    temperature = 39.5 + 273.15
    nu0 = 384.230e12
    oracle = 2.0 * math.sqrt(2.0 * kb * temperature * math.log(2) / (mass * c * c)) * nu0
    got = doppler_fwhm(temperature, mass, nu0)
    check(
        "C02",
        "Doppler width matches the independent oracle within 1 kHz",
        abs(got - oracle) < 1e3 and abs(got - 522e6) < 1e6,
        f"{got / 1e6:.3f} MHz vs oracle {oracle / 1e6:.3f} MHz",
    )


def test_c03_pump_repump_separation(table):
    sep = pump_repump_separation(table)
    check(
        "C03",
        "pump-repump separation in [6.4, 6.7] GHz",
        6.4e9 <= sep <= 6.7e9,
        f"{sep / 1e9:.4f} GHz",
    )


def test_c04_depth_thresholds(sweep_run):
    report, _ = sweep_run
    by_name = {c.name: c for c in report.criteria}
    depths = (
        by_name["doppler_depth"].measured,
        by_name["hyperfine_depth"].measured,
        by_name["crossover_depth"].measured,
    )
    thresholds_ok = depths[0] > 30.0 and depths[1] > 2.5 and depths[2] > 15.0
    # The experimental column is declared non-reproducible and only echoed.
    declared = report.notes["experimental_reference_pct"] == {
        "doppler": 236.0, "hyperfine": 38.3, "crossover": 256.0,
    } and "not reproducible" in report.notes["experimental_reference_note"]
    check(
        "C04",
        "depth metrics clear the standard thresholds (30/2.5/15%)",
        thresholds_ok and declared and report.passed,
        "doppler=%.1f%% hyperfine=%.1f%% crossover=%.1f%%" % depths,
    )


def test_c05_feature_census(table, noise_off_cfg, clean_trace):
    window = manifold_window(table, noise_off_cfg)
    count = len(subdoppler_extrema(clean_trace, window))
    check(
        "C05",
        "noise-free Rb87 F=2 window holds exactly 6 saturation features",
        count == 6,
        f"count={count}",
    )


def test_c06_lock_engage_and_hold(lock_run):
    report, _ = lock_run
    by_name = {c.name: c for c in report.criteria}
    locked = by_name["lock_achieved"].passed
    rms_pct = by_name["post_lock_rms_error"].measured
    ctrl_pct = by_name["post_lock_control_stability"].measured
    check(
        "C06",
        "lock acquired; RMS error < 2% of pre-lock peak; control pk-pk < 1% FS",
        locked and rms_pct < 2.0 and ctrl_pct < 1.0,
        f"rms={rms_pct:.2f}%, control pk-pk={ctrl_pct:.3f}%",
    )


def test_c07_temperature_step_rejection(temp_step_pos, temp_step_neg):
    pos, _ = temp_step_pos
    neg, _ = temp_step_neg
    dv_pos = pos.measured["delta_control_v"]
    dv_neg = neg.measured["delta_control_v"]
    pos_ok = abs(dv_pos - 2.8) <= 0.02 * 2.8
    neg_ok = abs(dv_neg + 2.8) <= 0.02 * 2.8
    resettled = (
        abs(pos.measured["final_detuning_offset_hz"]) < 0.5e6
        and abs(neg.measured["final_detuning_offset_hz"]) < 0.5e6
    )
    check(
        "C07",
        "+/-0.1 K steps give +/-2.8 V (2%) and the detuning resettles to 0.5 MHz",
        pos.passed and neg.passed and pos_ok and neg_ok and resettled,
        f"dV(+)={dv_pos:.3f} V, dV(-)={dv_neg:.3f} V",
    )


def test_c08_fluorescence_proxy(fluorescence_run):
    report, _ = fluorescence_run
    m = report.measured
    by_name = {c.name: c for c in report.criteria}
    check(
        "C08",
        "fluorescence: locked >= 0.99, strictly decreasing, 0.5 at half-FWHM, dark at 3 FWHM",
        report.passed
        and m["brightness_locked"] >= 0.99
        and abs(m["brightness_low_detuning"] - 0.5) <= 0.005
        and m["brightness_large_detuning"] < 1e-10
        and by_name["monotone_decrease"].passed,
        f"F_locked={m['brightness_locked']:.4f}, F_large={m['brightness_large_detuning']:.2e}",
    )


def test_c09_determinism(sweep_run, sweep_rerun, lock_run, lock_rerun,
                         fluorescence_run, fluorescence_rerun):
    _, sweep1 = sweep_run
    _, sweep2 = sweep_rerun
    _, lock1 = lock_run
    _, lock2 = lock_rerun
    _, fluor1 = fluorescence_run
    _, fluor2 = fluorescence_rerun
    same = all(
        (d1 / name).read_bytes() == (d2 / name).read_bytes()
        for d1, d2, names in (
            (sweep1, sweep2, ("sweep_trace.csv", "sweep_report.json", "sweep_trace.svg")),
            (lock1, lock2, ("lock_timeseries.csv", "lock_report.json")),
            (fluor1, fluor2, ("fluorescence_report.json",)),
        )
        for name in names
    )
    check("C09", "reruns with the same config and seed are byte-identical", same)


def test_c10_controller_properties(table, default_cfg):
    # trapezoidal exactness on constant input
    cfg = PidConfig(kp=0.0, ki=1.0, kd=0.0)
    st = PidState()
    for _ in range(10):
        st, u = pid_step(cfg, st, 1.0, 0.1)
    trapezoid_ok = abs(u - 1.0) < 1e-12

    # clamping over randomized gains and inputs
    rng = np.random.default_rng(77)
    clamped_ok = True
    for _ in range(10_000):
        fuzz = PidConfig(
            kp=rng.uniform(-100, 100),
            ki=rng.uniform(-1000, 1000),
            kd=rng.uniform(-10, 10),
            offset=rng.uniform(-3, 3),
            output_min=-float(rng.uniform(0.1, 8)),
            output_max=float(rng.uniform(0.1, 8)),
            derivative_smoothing=int(rng.integers(1, 8)),
        )
        state = PidState()
        for _ in range(3):
            state, out = pid_step(fuzz, state, float(rng.normal(0, 20)),
                                  float(rng.uniform(1e-6, 1.0)))
            if not fuzz.output_min <= out <= fuzz.output_max:
                clamped_ok = False

    # wrong polarity diverges from the lock point
    plant = PlantConfig(base_detuning=0.5e9)
    ramp = RampConfig(span=3.0e9)
    common = dict(
        duration=0.15, noise_enabled=False, start_locked=True,
        disturbances=Disturbances(detuning_step_hz=0.2e6, detuning_step_time_s=0.01),
    )
    good = closed_loop_run(table, default_cfg.medium, plant, ramp, PidConfig(),
                           LockConfig(), **common)
    bad = closed_loop_run(table, default_cfg.medium, plant, ramp, PidConfig(),
                          LockConfig(polarity="-1", escape_span_hz=5e9), **common)
    k0 = int(np.searchsorted(bad.t, 0.0101))
    diverged = (
        np.abs(bad.error[k0:k0 + 100]).max() > 2 * abs(bad.error[k0])
        and abs(bad.detuning[-1] - bad.meta["lock_point_hz"])
        > 10 * abs(good.detuning[-1] - good.meta["lock_point_hz"])
    )
    check(
        "C10",
        "PID: exact trapezoid, clamp never violated (1e4 cases), wrong polarity diverges",
        trapezoid_ok and clamped_ok and diverged,
    )


def test_c11_round_trips(table, default_cfg, sweep_run):
    text = serialize_line_data(table)
    line_data_ok = parse_line_data(text) == table and serialize_line_data(
        parse_line_data(text)
    ) == text

    report, out = sweep_run
    trace = ingest_scope_csv(out / "sweep_trace.csv", table, default_cfg.ingest)
    markers = extract_markers(
        trace, manifold_window(table, default_cfg), default_cfg.markers.selection(),
        table, default_cfg.medium,
    )
    worst = max(
        abs(getattr(markers, key) - report.measured["markers_v"][key])
        / abs(report.measured["markers_v"][key])
        for key in "ABCD"
    )
    check(
        "C11",
        "line-data and sweep-CSV round trips (markers within 1%)",
        line_data_ok and worst < 0.01,
        f"worst marker deviation {worst * 100:.3f}%",
    )
