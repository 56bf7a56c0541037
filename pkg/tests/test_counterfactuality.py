import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfcomm.counterfactuality import (
    REMOTE,
    ClassicalChannelModel,
    ResourceError,
    Verdict,
    build_history_family,
    classical_absence_channel,
    classify_by_histories,
    crossing_report,
    leakage_bits,
    loss_statistics,
    weak_trace,
)
from cfcomm.optics import Light, NullPostSelectionError, StructuralError, run_fock
from cfcomm.protocols import BobAction, build, build_nested_mzi, build_noh, build_salih, build_vaidman, build_zeno_chain


def mutual_information(pb, po):
    """Oracle: I(bit; abort) from the explicit joint table under a uniform bit."""
    joint = 0.5 * np.array([[pb, 1 - pb], [po, 1 - po]])
    px, py = joint.sum(axis=1), joint.sum(axis=0)
    mi = 0.0
    for i in range(2):
        for j in range(2):
            if joint[i, j] > 0:
                mi += joint[i, j] * math.log2(joint[i, j] / (px[i] * py[j]))
    return mi


# --- classical channel -------------------------------------------------------


def test_absence_channel_requires_biconditional():
    with pytest.raises(ValueError):
        classical_absence_channel(ClassicalChannelModel(biconditional=False), True)


def test_absence_channel_sign_costs_energy():
    model = ClassicalChannelModel()
    assert classical_absence_channel(model, True) == (True, True)
    assert classical_absence_channel(model, False) == (False, False)


# --- weak trace ----------------------------------------------------------------


def test_salih_blocked_d1_has_no_remote_presence():
    circuit, _ = build_salih(2, 4, True, BobAction.BLOCK)
    report = weak_trace(circuit, "D1")
    assert not report.remote_presence()
    assert report.order == "first"
    assert crossing_report(circuit, Light.FOCK, "D1") == pytest.approx(0.0, abs=1e-12)


def test_weak_values_sum_to_one_at_every_boundary():
    for circuit, outcome in [
        (build_salih(2, 3, True, BobAction.BLOCK)[0], "D1"),
        (build_nested_mzi(bob=BobAction.OPEN)[0], "D2"),
        (build_noh(BobAction.REFLECT)[0], "D2"),
    ]:
        report = weak_trace(circuit, outcome)
        for s in report.cut_sums:
            assert abs(s - 1) < 1e-12


def test_nested_mzi_presence_pattern():
    circuit, _ = build_nested_mzi(bob=BobAction.OPEN)
    report = weak_trace(circuit, "D2")
    assert report.path_present("C")
    assert report.path_present("B")
    assert report.path_present("A")
    assert not report.path_present("E")
    assert not report.path_present("F")


def test_null_postselection_raises():
    circuit, _ = build_salih(2, 3, True, BobAction.OPEN)
    with pytest.raises(NullPostSelectionError):
        weak_trace(circuit, "D1")


def test_unknown_outcome_is_structural():
    circuit, _ = build_salih(2, 3, True, BobAction.OPEN)
    with pytest.raises(StructuralError):
        weak_trace(circuit, "nope")


# --- crossing ------------------------------------------------------------------


def test_zeno_open_bob_detection_crosses():
    circuit, _ = build_zeno_chain(10, BobAction.OPEN)
    assert crossing_report(circuit, Light.FOCK, "DB") >= 1.0


def test_classical_crossing_positive():
    circuit, _ = build_salih(2, 2, True, BobAction.BLOCK)
    assert crossing_report(circuit, Light.CLASSICAL) > 0.5


def test_fock_crossing_needs_outcome():
    circuit, _ = build_salih(2, 2, True, BobAction.BLOCK)
    with pytest.raises(ValueError):
        crossing_report(circuit, Light.FOCK)


@pytest.mark.parametrize(
    "family,action,params",
    [
        ("salih", "block", {"M": 2, "N": 3}),
        ("salih", "open", {"M": 3, "N": 2}),
        ("noh", "reflect", {}),
        ("noh", "absorb", {}),
        ("nested", "open", {}),
        ("zeno", "block", {"N": 4}),
        ("ev", "live", {}),
    ],
)
def test_crossing_and_weak_trace_concordance(family, action, params):
    circuit, _ = build(family, action, **params)
    dist = run_fock(circuit)
    for label, p in dist.values.items():
        if p < 1e-12:
            continue
        zero = crossing_report(circuit, Light.FOCK, label) < 1e-12
        remote_terminal = circuit.terminals[label].region in REMOTE
        assert zero == (not weak_trace(circuit, label).remote_presence() and not remote_terminal)


# --- histories -----------------------------------------------------------------


def test_salih_m1_blocked_histories_counterfactual():
    circuit, _ = build_salih(1, 3, True, BobAction.BLOCK)
    family = build_history_family(circuit)
    assert family.consistent
    assert classify_by_histories(family, {"bob"}, "D1") is Verdict.COUNTERFACTUAL
    for h in family.histories:
        if h.outcome == "D1":
            assert not h.visits({"bob"})


@pytest.mark.parametrize("M", [1, 2, 3])
def test_decoherence_functional_is_hermitian_with_unit_trace(M):
    circuit, _ = build_salih(M, 3, True, BobAction.BLOCK)
    d = build_history_family(circuit).decoherence
    assert np.max(np.abs(d - d.conj().T)) < 1e-9
    assert abs(np.trace(d).real - 1.0) < 1e-9


def test_inconsistent_family_is_meaningless():
    circuit, _ = build_salih(2, 3, True, BobAction.BLOCK)
    family = build_history_family(circuit)
    verdict = classify_by_histories(family, {"bob"}, "D1")
    assert (verdict is Verdict.MEANINGLESS) == (not family.consistent)


def test_history_resource_guard():
    circuit, _ = build_salih(3, 3, True, BobAction.BLOCK)
    with pytest.raises(ResourceError):
        build_history_family(circuit, max_histories=2)


def test_history_cuts_must_increase():
    circuit, _ = build_salih(2, 2, True, BobAction.BLOCK)
    with pytest.raises(StructuralError):
        build_history_family(circuit, cuts=[5, 3])


def test_histories_with_no_cuts_are_diagonal():
    circuit, _ = build_salih(2, 2, True, BobAction.BLOCK)
    family = build_history_family(circuit, cuts=[])
    assert family.consistent and family.max_offdiag_abs == 0.0


# --- loss statistics -------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_leakage_matches_joint_table_oracle(pb, po):
    assert leakage_bits(pb, po) == pytest.approx(mutual_information(pb, po), abs=1e-12)
    assert 0.0 <= leakage_bits(pb, po) <= 1.0


def test_leakage_zero_iff_equal():
    assert leakage_bits(0.3, 0.3) == 0.0
    assert leakage_bits(0.0, 1.0) == pytest.approx(1.0)
    assert leakage_bits(0.3, 0.31) > 0


def test_vaidman_loss_statistics_at_solution(solved_angles):
    blocked, mapping = build_vaidman(2, solved_angles, BobAction.BLOCK)
    opened, _ = build_vaidman(2, solved_angles, BobAction.OPEN)
    stats = loss_statistics((blocked, opened), mapping)
    assert stats.residual < 1e-9
    assert stats.leakage_bits < 1e-12


def test_loss_statistics_salih_baseline():
    blocked, mapping = build_salih(2, 2, True, BobAction.BLOCK)
    opened, _ = build_salih(2, 2, True, BobAction.OPEN)
    stats = loss_statistics((blocked, opened), mapping)
    assert stats.p_loss_block == pytest.approx(1 - 0.0625 - 0.140625, abs=1e-12)
    assert stats.p_loss_open == pytest.approx(0.75, abs=1e-12)
    assert stats.leakage_bits == pytest.approx(mutual_information(stats.p_loss_block, 0.75), abs=1e-12)
