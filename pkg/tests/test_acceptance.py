"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line with the measured value and the
pinned tolerance, then asserts.  Run with ``pytest tests/test_acceptance.py -v``.
The Monte Carlo check runs 200 simulated drops and takes a few minutes.
"""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from quatmpc import cli, sim, verify


@pytest.fixture
def report(capsys):
    def emit(n, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title}: {detail}")
        assert ok, detail

    return emit


def checks_line(results):
    return "; ".join(f"{r.name} {r.max_error:.1e} <= {r.tolerance:.0e}" for r in results)


def test_01_quaternion_calculus(report):
    t0 = time.perf_counter()
    results = verify.quaternion_calculus(n=100)
    elapsed = time.perf_counter() - t0
    ok = len(results) == 5 and elapsed < 5.0
    for r in results:
        limit = 1e-4 if "Hessian" in r.name else 1e-5
        ok &= r.passed and r.tolerance <= limit
    report(1, "quaternion calculus vs finite differences", ok, f"{checks_line(results)}; {elapsed:.1f} s < 5 s")


def test_02_linearization(report):
    t0 = time.perf_counter()
    results = verify.linearization(n=100)
    elapsed = time.perf_counter() - t0
    ok = len(results) == 2 and all(r.passed and r.tolerance <= 1e-4 for r in results) and elapsed < 10.0
    report(2, "error-state linearization vs finite differences", ok, f"{checks_line(results)}; {elapsed:.1f} s < 10 s")


def test_03_oracle_equivalence(report):
    ric, qp = verify.riccati_oracle(), verify.qp_oracle()
    ok = ric.passed and ric.tolerance <= 1e-8 and qp.passed and qp.tolerance <= 1e-6
    report(3, "Riccati and dense QP oracles", ok, checks_line([ric, qp]))


def test_04_landing_target(report):
    r = verify.landing_bruteforce(n=1000, resolution=1e-4)
    report(4, "closed-form landing target vs yaw grid", r.passed and r.tolerance <= 1e-8, checks_line([r]))


def test_05_integrator(report):
    results = verify.integrator()
    limits = [1e-4, 1e-6, 1e-9]
    ok = len(results) == 3 and all(r.passed and r.tolerance <= t for r, t in zip(results, limits))
    report(5, "integrator checks", ok, checks_line(results))


@pytest.fixture(scope="module")
def trot_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("trot")
    t0 = time.perf_counter()
    code = cli.main(["run", "trot_attitude", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    summary = json.loads((out / "summary.json").read_text())
    telemetry = json.loads((out / "telemetry.json").read_text())
    return code, summary, telemetry, elapsed


def test_06_trot_attitude_tracking(report, trot_run):
    code, s, _, elapsed = trot_run
    rms = s["rms_attitude_error_deg"]
    ok = code == 0 and s["outcome"] == "completed" and s["duration"] >= 20.0 - 1e-9 and max(rms) <= 10.0 and elapsed < 120.0
    detail = f"per-axis RMS {np.round(rms, 2).tolist()} deg <= 10 deg, outcome {s['outcome']}, {elapsed:.0f} s < 120 s"
    report(6, "trot with sinusoidal body rates", ok, detail)


def test_07_disturbance_rejection(report):
    s = sim.load_scenario("disturbance")
    log = sim.run_scenario(s)
    t, X, Xr, _, _ = log.arrays()
    t_push = s.disturbances[0].time
    dev = np.linalg.norm(X[:, 0:3] - Xr[:, 0:3], axis=1)
    after = t >= t_push
    high = np.flatnonzero(after & (dev >= 0.03))
    recovery = (t[high[-1]] + s.physics_dt - t_push) if len(high) else 0.0
    peak = dev[after].max()
    ok = log.outcome == "completed" and t[-1] >= t_push + 3.0 and recovery <= 3.0
    detail = f"peak deviation {100 * peak:.1f} cm, below 3 cm for good {recovery:.2f} s after the push (<= 3 s)"
    report(7, "disturbance rejection", ok, detail)


def test_08_wall_standing(report):
    s = sim.load_scenario("wall_stand")
    q_log = sim.run_scenario(s)
    qs = q_log.summary
    _, X, Xr, _, _ = q_log.arrays()
    swing = math.degrees(max(np.linalg.norm(sim.attitude_errors(Xr, np.tile(Xr[0], (len(Xr), 1))), axis=1)))
    quat_ok = qs["outcome"] == "completed" and qs["duration"] >= 10.0 - 1e-9 and qs["steady_max_attitude_error_deg"] <= 5.0 and swing > 5.0
    e_log = sim.run_scenario(replace(s, controller="euler"))
    es = e_log.summary
    euler_fail = es["outcome"] in ("degraded", "diverged", "fall", "penetration") or es["max_attitude_error_deg"] > 45.0
    detail = (
        f"quaternion steady error {qs['steady_max_attitude_error_deg']:.2f} deg <= 5 deg over {qs['duration']:.0f} s "
        f"while the reference swings {swing:.1f} deg; Euler outcome {es['outcome']} at t = {es['duration']:.2f} s"
    )
    report(8, "wall standing at 90 deg pitch", quat_ok and euler_fail, detail)


def test_09_falling_cat_monte_carlo(report):
    t0 = time.perf_counter()
    q = sim.monte_carlo(100, "quaternion", base_seed=0)
    e = sim.monte_carlo(100, "euler", base_seed=0)
    elapsed = time.perf_counter() - t0
    seeds_match = [r["seed"] for r in q.records.values()] == [r["seed"] for r in e.records.values()]
    gap = q.success_rate - e.success_rate
    ok = seeds_match and q.trials == e.trials == 100 and q.success_rate >= 0.85 and gap >= 0.30 and elapsed < 600.0
    detail = (
        f"quaternion {q.success_rate:.2f} >= 0.85, Euler {e.success_rate:.2f}, "
        f"gap {100 * gap:.0f} points >= 30, {elapsed:.0f} s < 600 s"
    )
    report(9, "falling-robot Monte Carlo", ok, detail)


def test_10_humanoid_sweep(report):
    q = sim.humanoid_attitude_sweep("quaternion").summary
    e = sim.humanoid_attitude_sweep("euler").summary
    quat_ok = q["peak_reference_deg"] > 90.0 and q["peak_error_deg"] <= 15.0 and math.isnan(q["failure_reference_deg"])
    euler_fail = e["failure_reference_deg"] < 90.0
    detail = (
        f"quaternion peak error {q['peak_error_deg']:.2f} deg <= 15 deg through {q['peak_reference_deg']:.0f} deg; "
        f"Euler fails at {e['failure_reference_deg']:.1f} deg (< 90 deg)"
    )
    report(10, "humanoid pitch sweep", quat_ok and euler_fail, detail)


def test_11_solve_time(report, trot_run):
    _, _, tel, _ = trot_run
    s = sim.load_scenario("trot_attitude")
    ok = s.mpc.horizon == 37 and s.robot.nu == 12 and tel["ticks"] >= 500 and tel["median_solve_ms"] <= 20.0
    detail = f"median {tel['median_solve_ms']:.2f} ms <= 20 ms over {tel['ticks']} ticks, K = {s.mpc.horizon}, {s.robot.nu} force inputs"
    report(11, "warm-started solve time", ok, detail)
