"""Acceptance gate: eight end-to-end criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated in the terminal
summary. Runtime limits are asserted alongside the numerical checks.
"""
from __future__ import annotations

import json
import time

import numpy as np

from magfg.cli import main
from magfg.evaluation import DELTA_HI_REFERENCE, StudySpec, delta_hi_experiment, run_study, simulate_delta_pair
from magfg.graph import FactorGraph, GraphConfig
from magfg.logfile import ingest_csv, write_csv
from magfg.measurements import NoiseSpec
from magfg.simulator import TruthSpec, simulate
from magfg.solver import calibrate

from conftest import K600_PROFILE, fd_jacobian, jacobian_relative_error, measurements_near, random_state


def test_criterion_1_jacobian(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        state = random_state(rng, 21)
        graph = FactorGraph(measurements_near(rng, state))
        lin = graph.linearize(state)
        err = jacobian_relative_error(lin.L.toarray(), fd_jacobian(graph, state), residual=lin.y)
        worst = max(worst, float(err.max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 60.0
    acceptance(1, "analytic Jacobian vs finite differences", ok,
               f"worst relative error {worst:.2e} over 100 states, {elapsed:.1f} s")
    assert ok


def test_criterion_2_noiseless_recovery(acceptance):
    t0 = time.perf_counter()
    spec = TruthSpec(soft_iron_sigma=0.0)
    truth, meas = simulate(K600_PROFILE, spec, NoiseSpec.zero(), seed=600,
                           hard_iron_magnitude=5000.0, weighting=NoiseSpec())
    assert meas.k == 600
    rep = calibrate(meas, GraphConfig(field_q=10.0))
    elapsed = time.perf_counter() - t0
    s = rep.state
    e_hi = float(np.abs(s.h_hi - truth.params.h_hi).max())
    e_t = float(np.abs(s.t_vec - truth.params.t_vec).max())
    e_f = float(np.abs(s.fields - truth.fields).max())
    ok = (rep.converged and rep.iterations <= 15 and e_hi < 1e-4 and e_t < 1e-7
          and e_f < 1e-4 and elapsed < 60.0)
    acceptance(2, "zero-noise recovery at k = 600, 5000 nT", ok,
               f"h_hi {e_hi:.1e} nT, T {e_t:.1e}, field {e_f:.1e} nT, "
               f"{rep.iterations} iterations, {elapsed:.2f} s")
    assert ok


def test_criterion_3_sub_nanotesla(acceptance):
    t0 = time.perf_counter()
    res = run_study(StudySpec(runs=20, magnitudes=(5000.0,), estimators=("fg",), base_seed=3))
    elapsed = time.perf_counter() - t0
    eps = res.cell("fg", 5000.0)
    med, p90 = float(np.median(eps)), float(np.percentile(eps, 90))
    ok = eps.size == 20 and med < 1.0 and p90 < 5.0 and elapsed < 600.0
    acceptance(3, "20 noisy runs at 5000 nT", ok,
               f"median {med:.3f} nT, p90 {p90:.3f} nT, {elapsed:.1f} s")
    assert ok


def test_criterion_4_hard_iron_ordering(acceptance):
    t0 = time.perf_counter()
    res = run_study(StudySpec(runs=10, magnitudes=(0.0, 1000.0, 5000.0),
                              estimators=("fg", "twostep", "tl"), base_seed=4))
    elapsed = time.perf_counter() - t0
    means = {(e, m): float(res.cell(e, m).mean())
             for e in ("fg", "twostep", "tl") for m in (0.0, 1000.0, 5000.0)}
    ok = all(means[("fg", m)] < means[("twostep", m)] and means[("fg", m)] < means[("tl", m)]
             for m in (1000.0, 5000.0))
    ok = ok and means[("fg", 5000.0)] < 0.1 * means[("twostep", 5000.0)] and elapsed < 900.0
    detail = "; ".join(f"{m:g} nT: fg {means[('fg', m)]:.2f}, twostep {means[('twostep', m)]:.0f}, "
                       f"tl {means[('tl', m)]:.0f}" for m in (0.0, 1000.0, 5000.0))
    acceptance(4, "FG beats TWOSTEP and Tolles-Lawson", ok, f"mean eps_hi {detail}; {elapsed:.1f} s")
    assert ok


def test_criterion_5_time_varying_field(acceptance):
    t0 = time.perf_counter()
    res = run_study(StudySpec(runs=20, magnitudes=(5000.0,), field_qs=(10.0, 15.0),
                              estimators=("fg", "fg-fixed"), base_seed=5))
    elapsed = time.perf_counter() - t0
    ok, parts = elapsed < 900.0, []
    for q in (10.0, 15.0):
        free = float(np.median(res.cell("fg", field_q=q)))
        fixed = float(np.median(res.cell("fg-fixed", field_q=q)))
        rmse = float(np.mean(res.cell("fg", field_q=q, metric="rmse_field")))
        drift = float(np.mean(res.cell("fg-fixed", field_q=q, metric="drift_rms")))
        fixed_rmse = float(np.mean(res.cell("fg-fixed", field_q=q, metric="rmse_field")))
        ok = ok and free < fixed and rmse < drift
        parts.append(f"q={q:g}: median eps_hi {free:.3f} vs fixed {fixed:.3f} nT, "
                     f"mean rmse {rmse:.3f} vs drift {drift:.3f} nT "
                     f"(fixed-field graph rmse {fixed_rmse:.3f})")
    acceptance(5, "estimating the field beats fixing it", ok, "; ".join(parts) + f"; {elapsed:.1f} s")
    assert ok


def test_criterion_6_delta_workflow(acceptance):
    norms = []
    for seed in range(5):
        _, mb, _, ma = simulate_delta_pair(DELTA_HI_REFERENCE, seed=seed, noise=NoiseSpec())
        norms.append(delta_hi_experiment(mb, ma, DELTA_HI_REFERENCE).epsilon_norm)
    ok = max(norms) < 10.0
    acceptance(6, "hard-iron change recovery over 5 seeds", ok,
               "|epsilon| = " + ", ".join(f"{v:.2f}" for v in norms) + " nT")
    assert ok


def test_criterion_7_study_determinism(acceptance, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 7, "study": {"runs": 2, "magnitudes": [0.0, 5000.0]}}))
    for d in ("a", "b"):
        assert main(["study", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("study.csv", "summary.json"))
    acceptance(7, "study output is byte-identical across invocations", same,
               "study.csv and summary.json compared")
    assert same


def test_criterion_8_ingest_round_trip(acceptance, tmp_path):
    _, meas = simulate(seed=8)
    write_csv(tmp_path / "log.csv", meas)
    back = ingest_csv(tmp_path / "log.csv").to_measurements(NoiseSpec())
    diff = max(float(np.abs(getattr(back, f) - getattr(meas, f)).max())
               for f in ("t", "mag_vec", "mag_scalar", "gyro", "rpy", "cov_vec", "cov_gyro"))
    ok = back.equals(meas, atol=1e-12) and diff <= 1e-12
    acceptance(8, "CSV export and ingest round trip", ok, f"max difference {diff:.1e}")
    assert ok
