import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ablab import curves
from ablab.audit import (
    INEQUALITIES,
    AuditReport,
    InequalityRecord,
    audit_bounds,
    epsilon_theorem1,
    hypotheses,
    magnitudes,
    report_json,
    run_audit,
    sample_admissible_competitor,
    sample_axis_anchored_path,
    write_rows_csv,
)
from ablab.curves import HorizontalPath
from ablab.srmodel import AlphaSpec, ModelParams

ONE = AlphaSpec.constant(1.0)
MIN = ModelParams(5, 10, ONE)  # b even, b <= 2a
EPS = epsilon_theorem1(10)


def test_epsilon_theorem1():
    assert EPS == 1 / 65
    assert 12 ** (-0.2) / 8 == pytest.approx(0.07605, abs=1e-5)
    for b in range(1, 200):
        assert epsilon_theorem1(b) <= 1 / 65
    assert 0.125 * (2 + 10**6) ** (-2 / 10**6) == pytest.approx(0.125, rel=1e-4)
    with pytest.raises(ValueError):
        epsilon_theorem1(0)


def test_epsilon_theorem1_small_eps1():
    assert epsilon_theorem1(10, eps1=0.1) == pytest.approx(0.1 / 16)


# --- samples --------------------------------------------------------------

def test_magnitude_zero_is_gamma():
    path = sample_admissible_competitor(0, EPS, 0.0, MIN)
    assert np.all(path.states[:, 0] == 0.0)
    assert np.all(path.states[:, 2] == 0.0)
    assert curves.sr_length(path, MIN) == pytest.approx(2 * EPS, rel=1e-14)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("mag", [1e-6, 1e-3, 0.1, 1.0])
def test_samples_are_competitors(seed, mag):
    path = sample_admissible_competitor(seed, EPS, mag, MIN)
    d = curves.endpoint_defect(path, (0.0, EPS, 0.0))
    assert d.max_abs() < 1e-12
    assert np.max(np.abs(curves.node_speeds(path, MIN) - 1.0)) < 1e-8
    np.testing.assert_array_equal(path.start, [0.0, -EPS, 0.0])


def test_samples_are_deterministic():
    a = sample_admissible_competitor(7, EPS, 0.1, MIN)
    b = sample_admissible_competitor(7, EPS, 0.1, MIN)
    np.testing.assert_array_equal(a.dx, b.dx)


@pytest.mark.parametrize("b", [2, 4, 10])
def test_axis_anchored_paths(b):
    p = ModelParams(1, b, ONE)
    for seed in range(20):
        path = sample_axis_anchored_path(seed, p)
        P = curves.P_values(path, p)
        assert abs(P[0]) <= 1e-12 and abs(P[-1]) <= 1e-12
        assert 0.3 <= curves.P_dot_max(path, p) <= 1.0 + 1e-12


# --- gating and records ---------------------------------------------------

def test_gamma_satisfies_everything():
    g = sample_admissible_competitor(0, EPS, 0.0, MIN)
    rep = audit_bounds(g, EPS, MIN)
    assert rep.violations == 0
    row = rep.rows[0]
    assert row["beta"] == 0.0 and row["J"] == 0.0
    assert abs(row["tau_minus_2eps"]) < 1e-17
    for name in ("J_upper", "J_lower", "final_chain", "box_bound", "euclidean_comparison"):
        assert rep.records[name].applicable == 1, name


def test_hypotheses_listed_for_every_record():
    rep = AuditReport()
    for name, rec in rep.records.items():
        assert rec.hypotheses == INEQUALITIES[name][0]
        assert rec.to_dict()["hypotheses"] == list(INEQUALITIES[name][0])


def test_fast_path_makes_J_lower_not_applicable():
    p = ModelParams(1, 2, ONE)
    path = sample_axis_anchored_path(3, p)
    fast = HorizontalPath(path.start, path.dt / 10, path.dx, "generic")
    assert curves.P_dot_max(fast, p) > 1
    rep = audit_bounds(fast, 0.3, p)
    rec = rep.records["J_lower"]
    assert rec.samples == 1 and rec.applicable == 0 and rec.violations == 0


def test_odd_b_gates_P_records():
    p = ModelParams(1, 3, ONE)
    path = sample_admissible_competitor(1, EPS, 0.1, p)
    h = hypotheses(path, EPS, p)
    assert not h["b_even"] and not h["P_dot_le_1"]
    rep = audit_bounds(path, EPS, p)
    assert rep.records["J_lower"].applicable == 0
    assert rep.records["final_chain"].applicable == 0


def test_b_gt_2a_gates_J_upper():
    p = ModelParams(1, 10, ONE)
    rep = audit_bounds(sample_admissible_competitor(2, EPS, 0.01, p), EPS, p)
    assert rep.records["J_upper"].applicable == 0


def test_record_violation_accounting():
    rec = InequalityRecord("x", ())
    rec.add(True, 1.0, 1.0)
    rec.add(True, -1e-12, 1.0)  # within tolerance
    rec.add(True, -1e-3, 1.0)
    rec.add(False, -5.0, 1.0)
    assert (rec.samples, rec.applicable, rec.violations) == (4, 3, 1)
    assert rec.worst_slack == -1e-3


def test_informational_records_do_not_fail():
    rep = AuditReport()
    rep.records["sqrt_taylor_literal_lower"].add(True, -1.0, 1.0)
    assert rep.violations == 0 and rep.verdict == "pass"
    rep.records["J_lower"].add(True, -1.0, 1.0)
    assert rep.verdict == "fail"


# --- properties -----------------------------------------------------------

@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4, 6, 10]), st.integers(0, 6))
def test_J_lower_on_axis_anchored_paths(seed, b, a):
    p = ModelParams(a, b, ONE)
    path = sample_axis_anchored_path(seed, p)
    J, B = curves.functional_J(path, p), curves.beta(path, p)
    assert J >= B**3 / 8 * (1 - 1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-6, 1.0))
def test_u2_bounds_under_arclength(seed, mag):
    path = sample_admissible_competitor(seed, EPS, mag, MIN)
    rep = audit_bounds(path, EPS, MIN)
    assert rep.records["u2_bound_sqrt2"].violations == 0
    assert rep.records["u2_bound_2"].violations == 0
    assert rep.records["euclidean_comparison"].violations == 0


def test_literal_taylor_lower_fails_for_positive_t():
    # sqrt(1 - t) >= 1 - t/3 is false for small t > 0
    t = 0.1
    assert math.sqrt(1 - t) <= 1 - t / 2 + t * t / 4
    assert math.sqrt(1 - t) < 1 - t / 3
    g = sample_admissible_competitor(0, EPS, 0.1, MIN)
    rep = audit_bounds(g, EPS, MIN)
    assert rep.records["sqrt_taylor_literal_lower"].violations == 1
    assert rep.records["sqrt_taylor_two_sided"].violations == 0


# --- harness --------------------------------------------------------------

def test_magnitudes_cycle():
    m = magnitudes(40)
    assert m[0] == 0.0 and m[16] == 0.0
    assert m[1] == pytest.approx(1e-9) and m[15] == pytest.approx(1.0)


def test_run_audit_small():
    rep = run_audit(48, EPS, MIN, seed=0)
    assert rep.samples + rep.failed == 48
    assert rep.violations == 0 and rep.verdict == "pass"
    assert rep.records["J_lower"].applicable > 0
    assert rep.records["final_chain"].applicable > 0
    assert rep.records["box_bound"].applicable > 0
    assert [r["seed"] for r in rep.rows] == sorted(r["seed"] for r in rep.rows)


def test_run_audit_threads_identical():
    a = run_audit(16, EPS, MIN, seed=5)
    b = run_audit(16, EPS, MIN, seed=5, threads=4)
    assert report_json(a) == report_json(b)
    assert a.rows == b.rows


def test_report_outputs(tmp_path):
    rep = run_audit(8, EPS, MIN, seed=1)
    d = json.loads(report_json(rep))
    assert set(d) == {"samples", "failed_samples", "violations", "verdict", "records"}
    assert set(d["records"]) == set(INEQUALITIES)
    f = tmp_path / "rows.csv"
    write_rows_csv(rep.rows, f)
    lines = f.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["seed", "magnitude", "tau"]
    assert len(lines) == len(rep.rows) + 1
