"""Circuit builders for the counterfactual-communication protocol family.

Every builder returns ``(Circuit, BitMapping)`` for one setting of Bob's
action. Bit 1 always means "Bob blocks" (live bomb for the bomb tester, absorb
polarization for Noh's scheme); every terminal on Bob's side decodes to Abort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Sequence

from .optics import (
    H,
    V,
    BeamSplitter,
    Circuit,
    CircuitBuilder,
    HalfWavePlate,
    Mirror,
    Mode,
    PolarizingBeamSplitter,
    Region,
    StructuralError,
    blocker,
    detector,
    explosion,
    loss_channel,
)

ALICE, CHANNEL, BOB = Region.ALICE, Region.CHANNEL, Region.BOB


class Bit(str, Enum):
    BIT0 = "0"
    BIT1 = "1"
    ABORT = "abort"
    UNDEFINED = "undefined"


class Family(str, Enum):
    EV = "ev"
    NOH = "noh"
    ZENO = "zeno"
    SALIH = "salih"
    VAIDMAN = "vaidman"
    NESTED = "nested"


class BobAction(str, Enum):
    BLOCK = "block"
    OPEN = "open"
    LIVE = "live"
    DUD = "dud"
    ABSORB = "absorb"
    REFLECT = "reflect"

    @property
    def blocks(self) -> bool:
        return self in (BobAction.BLOCK, BobAction.LIVE, BobAction.ABSORB)

    @property
    def bit(self) -> Bit:
        return Bit.BIT1 if self.blocks else Bit.BIT0


ACTIONS = {
    Family.EV: (BobAction.LIVE, BobAction.DUD),
    Family.NOH: (BobAction.ABSORB, BobAction.REFLECT),
    Family.ZENO: (BobAction.BLOCK, BobAction.OPEN),
    Family.SALIH: (BobAction.BLOCK, BobAction.OPEN),
    Family.VAIDMAN: (BobAction.BLOCK, BobAction.OPEN),
    Family.NESTED: (BobAction.BLOCK, BobAction.OPEN),
}


def normalize_action(family: Family, action: BobAction | str) -> BobAction:
    """Accept block/open for every family and map to the family's own names."""
    action = BobAction(action)
    block, other = ACTIONS[family]
    if action in (block, other):
        return action
    if action.blocks:
        return block
    return other


@dataclass(frozen=True)
class BitMapping:
    decode: Mapping[str, Bit]
    # default post-selection when no terminal carries the sent bit
    witness: str | None = None

    def __post_init__(self):
        for bit in (Bit.BIT0, Bit.BIT1):
            if sum(1 for b in self.decode.values() if b is bit) > 1:
                raise StructuralError(f"more than one terminal decodes to bit {bit.value}")

    def terminal_for(self, bit: Bit) -> str | None:
        for label, b in self.decode.items():
            if b is bit:
                return label
        return None

    def bit_probabilities(self, dist) -> dict[Bit, float]:
        out = {b: 0.0 for b in Bit}
        for label, p in dist.values.items():
            out[self.decode.get(label, Bit.UNDEFINED)] += p
        return out


def _mapping(circuit: Circuit, explicit: Mapping[str, Bit], witness: str | None = None) -> BitMapping:
    decode = {}
    for label, ev in circuit.terminals.items():
        if ev.region is not ALICE:
            decode[label] = Bit.ABORT
        else:
            decode[label] = explicit.get(label, Bit.ABORT)
    return BitMapping(decode, witness)


# --- Elitzur-Vaidman ----------------------------------------------------------


def build_ev_bomb_tester(bomb: BobAction | str = BobAction.LIVE) -> tuple[Circuit, BitMapping]:
    bomb = normalize_action(Family.EV, bomb)
    b = CircuitBuilder(f"ev[{bomb.value}]")
    b.path("a", ALICE, "alice")
    b.path("arm", BOB, "bob")
    b.path("ret", ALICE, "alice")
    q = math.pi / 4
    b.stage(BeamSplitter(q, "a", "arm"))
    b.mark("bob")
    b.stage(explosion("arm") if bomb is BobAction.LIVE else None)
    b.stage(Mirror("arm", "ret"))
    b.stage(BeamSplitter(q, "a", "ret"))
    b.stage(detector("a", "D2"), detector("ret", "D1"))
    circuit = _finish(b, Mode("a"), "bob")
    return circuit, _mapping(circuit, {"D2": Bit.BIT1, "D1": Bit.UNDEFINED})


# --- Noh ----------------------------------------------------------------------


def build_noh(action: BobAction | str = BobAction.ABSORB, split: float = math.pi / 4) -> tuple[Circuit, BitMapping]:
    """Noh's scheme for one photon polarization relative to Bob's choice.

    ``absorb``: the photon's polarization is the one Bob routes to his detector.
    ``reflect``: Bob's mirror returns it for interference at Alice's splitter.
    """
    action = normalize_action(Family.NOH, action)
    b = CircuitBuilder(f"noh[{action.value}]")
    b.path("a", ALICE, "alice")
    b.path("ch", CHANNEL, "bob")
    b.path("bob", BOB, "bob")
    b.path("ch_ret", CHANNEL, "bob")
    b.path("back", ALICE, "alice")
    b.stage(BeamSplitter(split, "a", "ch"))
    b.stage(Mirror("ch", "bob"))
    b.mark("bob")
    if action is BobAction.ABSORB:
        b.stage(detector("bob", "DB", BOB))
    else:
        b.stage()
    b.stage(Mirror("bob", "ch_ret"))
    b.stage(Mirror("ch_ret", "back"))
    b.stage(BeamSplitter(split, "a", "back"))
    b.stage(detector("a", "D1"), detector("back", "D2"))
    circuit = _finish(b, Mode("a"), "bob")
    return circuit, _mapping(circuit, {"D1": Bit.BIT1, "D2": Bit.UNDEFINED})


# --- chained Zeno interferometers ---------------------------------------------


def build_zeno_chain(N: int, bob: BobAction | str = BobAction.BLOCK) -> tuple[Circuit, BitMapping]:
    if not isinstance(N, int) or N < 1:
        raise StructuralError(f"zeno chain needs N >= 1, got {N!r}")
    bob = normalize_action(Family.ZENO, bob)
    b = CircuitBuilder(f"zeno[N={N},{bob.value}]")
    b.path("a", ALICE, "alice")
    b.path("b", BOB, "bob")
    beta = math.pi / (2 * N)
    for k in range(1, N + 1):
        b.stage(BeamSplitter(beta, "a", "b"))
        b.mark("bob")
        b.stage(blocker("b", f"B{k}") if bob is BobAction.BLOCK else None)
    b.stage(detector("a", "DA"), detector("b", "DB", BOB))
    circuit = _finish(b, Mode("a"), "bob")
    return circuit, _mapping(circuit, {"DA": Bit.BIT1})


# --- Salih chained protocol -------------------------------------------------


def build_salih(M: int, N: int, polarized: bool = True, bob: BobAction | str = BobAction.OPEN) -> tuple[Circuit, BitMapping]:
    """M outer cycles, each threading N inner cycles across the channel.

    Polarized: an outer half-wave plate (pi/2M) and PBS put V into the inner
    chain; each inner plate (pi/2N) and PBS send only H to Bob. At the end of an
    outer cycle the chain's H goes to Bob's loss D3.m and its V rejoins the
    outer path. ``polarized=False`` swaps every plate+PBS pair for a plain
    beamsplitter of the same angle, keeping the stage layout identical.
    """
    if not isinstance(M, int) or M < 1:
        raise StructuralError(f"salih needs M >= 1, got {M!r}")
    if not isinstance(N, int) or N < 2:
        raise StructuralError(f"salih needs N >= 2, got {N!r}")
    bob = normalize_action(Family.SALIH, bob)
    blocked = bob is BobAction.BLOCK
    kind = "pol" if polarized else "unpol"
    b = CircuitBuilder(f"salih[M={M},N={N},{kind},{bob.value}]")
    alpha, beta = math.pi / (2 * M), math.pi / (2 * N)
    b.path("outer", ALICE, "alice-outer")
    b.path("d1", ALICE, "alice-outer")
    cuts = []
    for m in range(1, M + 1):
        inner = b.path(f"inner{m}", ALICE, "alice-inner")
        port = b.path(f"port{m}", ALICE, "alice-inner")
        d3 = b.path(f"d3_{m}", BOB, "bob")
        if polarized:
            b.stage(HalfWavePlate(alpha, "outer"))
            b.stage(PolarizingBeamSplitter("outer", inner, V))
        else:
            b.stage(Mirror(f"inner{m - 1}", inner) if m > 1 else None)
            b.stage(BeamSplitter(alpha, "outer", inner))
        for n in range(1, N + 1):
            ch_out = b.path(f"ch_out{m}.{n}", CHANNEL, "bob")
            arm = b.path(f"bob{m}.{n}", BOB, "bob")
            ch_in = b.path(f"ch_in{m}.{n}", CHANNEL, "bob")
            if polarized:
                b.stage(HalfWavePlate(beta, inner))
                b.stage(PolarizingBeamSplitter(inner, ch_out, H))
            else:
                b.stage(BeamSplitter(beta, inner, port))
                b.stage(Mirror(port, ch_out))
            b.stage(Mirror(ch_out, arm))
            b.mark("bob")
            if n == 1:
                cuts.append(len(b.stages))
            b.stage(blocker(arm, f"B{m}.{n}") if blocked else None)
            b.stage(Mirror(arm, ch_in))
            if polarized:
                b.stage(PolarizingBeamSplitter(inner, ch_in, H))
            else:
                b.stage(Mirror(ch_in, port))
        if polarized:
            b.stage(PolarizingBeamSplitter(inner, d3, H))
            b.stage(loss_channel(d3, f"D3.{m}", BOB), PolarizingBeamSplitter("outer", inner, V))
        else:
            b.stage(Mirror(port, d3))
            b.stage(loss_channel(d3, f"D3.{m}", BOB))
        b.mark("outer_cycle_end")
    if polarized:
        b.stage(PolarizingBeamSplitter("outer", "d1", V))
    else:
        b.stage(Mirror(f"inner{M}", "d1"))
    b.stage(detector("outer", "D0"), detector("d1", "D1"))
    circuit = b.build(Mode("outer", H if polarized else None), cuts)
    return circuit, _mapping(circuit, {"D0": Bit.BIT0, "D1": Bit.BIT1})


def salih_recurrence(M: int, N: int) -> tuple[float, float]:
    """Blocked-case amplitudes (h, v) reaching D0 and D1 after M outer cycles."""
    alpha = math.pi / (2 * M)
    gamma = math.cos(math.pi / (2 * N)) ** N
    h, v = 1.0, 0.0
    for _ in range(M):
        h, v = h * math.cos(alpha) - v * math.sin(alpha), gamma * (h * math.sin(alpha) + v * math.cos(alpha))
    return h, v


# --- Vaidman ------------------------------------------------------------------


def vaidman_arity(inner_count: int) -> int:
    return 2 + 2 * inner_count


def vaidman_slots(inner_count: int) -> list[str]:
    slots = ["input"]
    for k in range(1, inner_count + 1):
        slots += [f"inner{k}.a", f"inner{k}.b"]
    return slots + ["final"]


def build_vaidman(inner_count: int, bs_params: Sequence[float], bob: BobAction | str = BobAction.OPEN) -> tuple[Circuit, BitMapping]:
    """Outer interferometer whose lower arm threads ``inner_count`` inner MZIs.

    ``bs_params`` = [input, a1, b1, ..., aK, bK, final]. Inner MZI k splits the
    lower arm with angle a_k onto a crossing to Bob and recombines with b_k; with
    a_k + b_k = pi/2 an open MZI sends everything out of its side port. Side
    ports of the first K-1 MZIs are loss channels DL.k; the last one feeds D1,
    which is therefore dark whenever Bob is open. The final splitter mixes the
    outer arm with what survives the chain: one output is D0, the other a loss
    channel DL.f.
    """
    if not isinstance(inner_count, int) or inner_count < 2:
        raise StructuralError(f"vaidman needs inner_count >= 2, got {inner_count!r}")
    params = [float(x) for x in bs_params]
    if len(params) != vaidman_arity(inner_count):
        raise StructuralError(
            f"vaidman with {inner_count} inner interferometers needs {vaidman_arity(inner_count)} angles, got {len(params)}"
        )
    bob = normalize_action(Family.VAIDMAN, bob)
    blocked = bob is BobAction.BLOCK
    b = CircuitBuilder(f"vaidman[K={inner_count},{bob.value}]")
    b.path("outer", ALICE, "alice-outer")
    b.path("low", ALICE, "alice-inner")
    b.stage(BeamSplitter(params[0], "outer", "low"))
    cuts = []
    for k in range(1, inner_count + 1):
        a_k, b_k = params[2 * k - 1], params[2 * k]
        xo = b.path(f"xo{k}", ALICE, "alice-inner")
        ch_out = b.path(f"ch_out{k}", CHANNEL, "bob")
        arm = b.path(f"bob{k}", BOB, "bob")
        ch_in = b.path(f"ch_in{k}", CHANNEL, "bob")
        xi = b.path(f"xi{k}", ALICE, "alice-inner")
        b.stage(BeamSplitter(a_k, "low", xo))
        b.stage(Mirror(xo, ch_out))
        b.stage(Mirror(ch_out, arm))
        b.mark("bob")
        cuts.append(len(b.stages))
        b.stage(blocker(arm, f"B{k}") if blocked else None)
        b.stage(Mirror(arm, ch_in))
        b.stage(Mirror(ch_in, xi))
        b.stage(BeamSplitter(b_k, "low", xi))
        if k < inner_count:
            b.stage(loss_channel(xi, f"DL.{k}"))
        else:
            b.stage(detector(xi, "D1"))
    b.stage(BeamSplitter(params[-1], "outer", "low"))
    b.stage(detector("outer", "D0"), loss_channel("low", "DL.f"))
    circuit = b.build(Mode("outer"), cuts)
    return circuit, _mapping(circuit, {"D0": Bit.BIT0, "D1": Bit.BIT1})


# --- nested interferometer ----------------------------------------------------


def build_nested_mzi(outer_split: float | None = None, bob: BobAction | str = BobAction.OPEN) -> tuple[Circuit, BitMapping]:
    """Outer MZI whose lower arm (E in, F out) holds Bob's inner MZI (arms B, C).

    The inner MZI is tuned dark toward F, so the forward wave never reaches F
    and the wave evolved back from D2 never reaches E.
    """
    if outer_split is None:
        outer_split = math.asin(math.sqrt(2 / 3))
    bob = normalize_action(Family.NESTED, bob)
    q = math.pi / 4
    b = CircuitBuilder(f"nested[{bob.value}]")
    b.path("A", ALICE, "alice")
    b.path("E", CHANNEL, "channel")
    b.path("B", BOB, "bob")
    b.path("C", BOB, "bob")
    b.path("F", CHANNEL, "channel")
    b.path("dump", BOB, "bob")
    b.path("ret", ALICE, "alice")
    b.stage(BeamSplitter(outer_split, "A", "E"))
    b.stage(Mirror("E", "B"))
    b.stage(BeamSplitter(q, "B", "C"))
    b.mark("bob")
    cut = len(b.stages)
    b.stage(blocker("C", "BC") if bob is BobAction.BLOCK else None)
    b.stage(BeamSplitter(q, "B", "C"))
    b.stage(Mirror("B", "F"), Mirror("C", "dump"))
    b.stage(loss_channel("dump", "DL", BOB), Mirror("F", "ret"))
    b.stage(BeamSplitter(q, "A", "ret"))
    b.stage(detector("A", "D1"), detector("ret", "D2"))
    circuit = b.build(Mode("A"), [cut])
    return circuit, _mapping(circuit, {"D1": Bit.UNDEFINED, "D2": Bit.UNDEFINED}, witness="D2")


def _finish(b: CircuitBuilder, source: Mode, cut_marker: str) -> Circuit:
    return b.build(source, b.markers.get(cut_marker, ()))


# --- specs --------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolSpec:
    family: Family
    params: Mapping[str, Any] = field(default_factory=dict)
    bob_action: BobAction = BobAction.BLOCK

    def build(self) -> tuple[Circuit, BitMapping]:
        return build(self.family, self.bob_action, **dict(self.params))

    def with_action(self, action: BobAction | str) -> "ProtocolSpec":
        return ProtocolSpec(self.family, self.params, normalize_action(self.family, action))


def build(family: Family | str, bob: BobAction | str, **params) -> tuple[Circuit, BitMapping]:
    family = Family(family)
    if family is Family.EV:
        return build_ev_bomb_tester(bob)
    if family is Family.NOH:
        return build_noh(bob, **params)
    if family is Family.ZENO:
        return build_zeno_chain(params["N"], bob)
    if family is Family.SALIH:
        return build_salih(params["M"], params["N"], params.get("polarized", True), bob)
    if family is Family.VAIDMAN:
        return build_vaidman(params["inner_count"], params["bs_params"], bob)
    if family is Family.NESTED:
        return build_nested_mzi(params.get("outer_split"), bob)
    raise StructuralError(f"unknown protocol family {family!r}")
