import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfcomm.optics import Light, Region, StructuralError, run, run_fock, stage_norms
from cfcomm.protocols import (
    Bit,
    BitMapping,
    BobAction,
    Family,
    ProtocolSpec,
    build,
    build_ev_bomb_tester,
    build_nested_mzi,
    build_noh,
    build_salih,
    build_vaidman,
    build_zeno_chain,
    normalize_action,
    salih_recurrence,
    vaidman_arity,
    vaidman_slots,
)


def salih_oracle(M, N):
    """Independent 2x2 transfer-matrix oracle for the blocked Salih amplitudes (h -> D0, v -> D1)."""
    a = math.pi / (2 * M)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    keep = np.diag([1.0, math.cos(math.pi / (2 * N)) ** N])
    x = np.array([1.0, 0.0])
    for _ in range(M):
        x = keep @ rot @ x
    return x


def test_ev_live_bomb():
    dist = run_fock(build_ev_bomb_tester(BobAction.LIVE)[0])
    assert dist["bomb"] == pytest.approx(0.5, abs=1e-12)
    assert dist["D1"] == pytest.approx(0.25, abs=1e-12)
    assert dist["D2"] == pytest.approx(0.25, abs=1e-12)


def test_ev_dud_bomb():
    dist = run_fock(build_ev_bomb_tester(BobAction.DUD)[0])
    assert dist["D1"] == pytest.approx(1.0, abs=1e-12)
    assert dist.get("D2") < 1e-12


def test_ev_mapping_marks_explosion_abort():
    _, mapping = build_ev_bomb_tester("live")
    assert mapping.decode["bomb"] is Bit.ABORT
    assert mapping.terminal_for(Bit.BIT1) == "D2"


def test_noh_absorb_and_reflect():
    absorb = run_fock(build_noh(BobAction.ABSORB)[0])
    assert absorb["DB"] == pytest.approx(0.5, abs=1e-12)
    assert absorb["D1"] == pytest.approx(0.25, abs=1e-12)
    assert absorb["D2"] == pytest.approx(0.25, abs=1e-12)
    reflect = run_fock(build_noh(BobAction.REFLECT)[0])
    assert reflect["D2"] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("N", [1, 2, 5, 25, 100])
def test_zeno_blocked_survival(N):
    dist = run_fock(build_zeno_chain(N, BobAction.BLOCK)[0])
    assert dist["DA"] == pytest.approx(math.cos(math.pi / (2 * N)) ** (2 * N), abs=1e-12)


def test_zeno_open_reaches_bob_detector():
    dist = run_fock(build_zeno_chain(10, BobAction.OPEN)[0])
    assert dist["DB"] == pytest.approx(1.0, abs=1e-12)


def test_zeno_rejects_zero_steps():
    with pytest.raises((StructuralError, ValueError)):
        build_zeno_chain(0, BobAction.BLOCK)


@pytest.mark.parametrize("polarized", [True, False])
@pytest.mark.parametrize("M,N", [(1, 2), (2, 2), (2, 4), (3, 5), (4, 3)])
def test_salih_matches_closed_forms(M, N, polarized):
    opened = run_fock(build_salih(M, N, polarized, BobAction.OPEN)[0])
    assert opened["D0"] == pytest.approx(math.cos(math.pi / (2 * M)) ** (2 * M), abs=1e-12)
    blocked = run_fock(build_salih(M, N, polarized, BobAction.BLOCK)[0])
    h, v = salih_oracle(M, N)
    assert blocked["D0"] == pytest.approx(h**2, abs=1e-12)
    assert blocked["D1"] == pytest.approx(v**2, abs=1e-12)


def test_salih_recurrence_agrees_with_oracle():
    for M, N in [(1, 2), (3, 7), (6, 4)]:
        h, v = salih_recurrence(M, N)
        oh, ov = salih_oracle(M, N)
        assert h == pytest.approx(oh, abs=1e-14) and v == pytest.approx(ov, abs=1e-14)


def test_salih_regions_and_mapping():
    circuit, mapping = build_salih(2, 3, True, BobAction.BLOCK)
    assert mapping.decode["D0"] is Bit.BIT0 and mapping.decode["D1"] is Bit.BIT1
    for label, ev in circuit.terminals.items():
        if ev.region is not Region.ALICE:
            assert mapping.decode[label] is Bit.ABORT
    assert {ev.region for ev in circuit.terminals.values()} == {Region.ALICE, Region.BOB}


@pytest.mark.parametrize("M,N", [(0, 2), (2, 1), (-1, 3)])
def test_salih_parameter_bounds(M, N):
    with pytest.raises((StructuralError, ValueError)):
        build_salih(M, N)


def test_vaidman_arity_and_slots():
    assert vaidman_arity(2) == 6
    assert vaidman_slots(3) == ["input", "inner1.a", "inner1.b", "inner2.a", "inner2.b", "inner3.a", "inner3.b", "final"]
    with pytest.raises((StructuralError, ValueError)):
        build_vaidman(2, [0.5] * 5, BobAction.OPEN)
    with pytest.raises((StructuralError, ValueError)):
        build_vaidman(1, [0.5] * 4, BobAction.OPEN)


def test_vaidman_at_solved_params_has_no_crosstalk(solved_angles):
    opened = run_fock(build_vaidman(2, solved_angles, BobAction.OPEN)[0])
    blocked = run_fock(build_vaidman(2, solved_angles, BobAction.BLOCK)[0])
    assert opened.get("D1") < 1e-12
    assert blocked.get("D0") < 1e-12
    assert opened["D0"] > 0.02 and blocked["D1"] > 0.02


def test_nested_mzi_distribution():
    dist = run_fock(build_nested_mzi(bob=BobAction.OPEN)[0])
    assert dist["D1"] == pytest.approx(1 / 6, abs=1e-12)
    assert dist["D2"] == pytest.approx(1 / 6, abs=1e-12)
    assert dist["DL"] == pytest.approx(2 / 3, abs=1e-12)


def test_bit_mapping_rejects_two_terminals_for_one_bit():
    with pytest.raises(StructuralError):
        BitMapping({"A": Bit.BIT0, "B": Bit.BIT0})


def test_normalize_action_maps_generic_names():
    assert normalize_action(Family.EV, "block") is BobAction.LIVE
    assert normalize_action(Family.EV, "open") is BobAction.DUD
    assert normalize_action(Family.NOH, "block") is BobAction.ABSORB
    assert normalize_action(Family.SALIH, "live") is BobAction.BLOCK


def test_protocol_spec_roundtrip():
    spec = ProtocolSpec(Family.SALIH, {"M": 2, "N": 3, "polarized": True}, BobAction.BLOCK)
    circuit, _ = spec.build()
    assert run_fock(circuit).values == run_fock(build("salih", "block", M=2, N=3)[0]).values
    assert spec.with_action("open").bob_action is BobAction.OPEN


PROTOCOL_GRID = [
    ("ev", {}),
    ("noh", {}),
    ("zeno", {"N": 7}),
    ("salih", {"M": 3, "N": 4, "polarized": True}),
    ("salih", {"M": 2, "N": 3, "polarized": False}),
    ("nested", {}),
]


@pytest.mark.parametrize("family,params", PROTOCOL_GRID)
@pytest.mark.parametrize("action", ["block", "open"])
def test_protocol_norms_and_models_agree(family, params, action):
    circuit, mapping = build(family, action, **params)
    for n in stage_norms(circuit):
        assert abs(n - 1.0) < 1e-12
    fock, classical = run(circuit, Light.FOCK), run(circuit, Light.CLASSICAL)
    for k in fock.values:
        assert abs(fock[k] - classical[k]) < 1e-12
    bits = mapping.bit_probabilities(fock)
    assert sum(bits.values()) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(2, 8))
def test_salih_blocked_property(M, N):
    blocked = run_fock(build_salih(M, N, True, BobAction.BLOCK)[0])
    h, v = salih_oracle(M, N)
    assert abs(blocked["D1"] - v**2) < 1e-12
    assert abs(blocked.total() - 1.0) < 1e-12
