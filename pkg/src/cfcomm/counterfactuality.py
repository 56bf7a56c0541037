"""Criteria for deciding whether a bit was sent counterfactually.

Three views are implemented side by side:

* channel-crossing accounting, for classical intensity and for a post-selected
  single photon;
* the first-order weak trace, from overlapping the forward-evolved input with
  the backward-evolved post-selected state;
* consistent histories, from the decoherence functional of a family of region
  projector chains resolved by the final terminal.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .optics import (
    ZERO_TOL,
    Circuit,
    Light,
    Mode,
    OpticsError,
    PhotonState,
    Region,
    StructuralError,
    evolve,
    evolve_backward,
    post_select,
    run_fock,
)
from .protocols import Bit, BitMapping

DEFAULT_EPSILON = 1e-10
DEFAULT_CONSISTENCY_TOL = 1e-9
MAX_HISTORIES = 10**6
BRANCH_PRUNE = 1e-28
REMOTE = (Region.CHANNEL, Region.BOB)


class ResourceError(OpticsError):
    """History enumeration would exceed the configured size guard."""


# --- classical inference --------------------------------------------------------


@dataclass(frozen=True)
class ClassicalChannelModel:
    """``A implies B``; with ``biconditional`` also ``not A implies not B``."""

    a: str = "A"
    b: str = "B"
    biconditional: bool = True


def classical_absence_channel(model: ClassicalChannelModel, a_occurred: bool) -> tuple[bool, bool]:
    """Return ``(b_observed, energy_crossed)`` for one use of a sign-or-silence channel.

    Only the absent sign is free: observing B costs a transfer of energy.
    """
    if not model.biconditional:
        raise ValueError("one-to-one signalling needs the biconditional (not A implies not B)")
    return bool(a_occurred), bool(a_occurred)


# --- weak trace -----------------------------------------------------------------


@dataclass(frozen=True)
class SegmentRecord:
    stage: int
    mode: Mode
    region: Region
    forward: complex
    backward: complex
    weak_value: complex
    present: bool


@dataclass(frozen=True)
class WeakTraceReport:
    """Per-segment weak values of path projectors between pre- and post-selection.

    ``weak_value = forward * conj(backward) / overlap`` where ``backward`` is
    the post-selected state evolved back to the same boundary. Only the first
    order in the coupling is represented.
    """

    records: tuple[SegmentRecord, ...]
    epsilon: float
    postselected_outcome: str
    probability: float
    overlap: complex
    cut_sums: tuple[complex, ...]
    order: str = "first"

    def present(self, regions: Iterable[Region] = REMOTE) -> list[SegmentRecord]:
        regions = tuple(regions)
        return [r for r in self.records if r.present and r.region in regions]

    def remote_presence(self) -> bool:
        return bool(self.present(REMOTE))

    def by_path(self, path: str) -> list[SegmentRecord]:
        return [r for r in self.records if r.mode.path == path]

    def path_present(self, path: str) -> bool:
        return any(r.present for r in self.by_path(path))


def _trace_pair(circuit: Circuit, outcome: str, state: PhotonState | None):
    forward = evolve(circuit, state)
    p, final = post_select(circuit, outcome, state)
    backward = evolve_backward(circuit, final)
    overlap = final.inner(forward[-1])
    return forward, backward, p, overlap


def weak_trace(
    circuit: Circuit,
    outcome: str,
    state: PhotonState | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> WeakTraceReport:
    forward, backward, p, overlap = _trace_pair(circuit, outcome, state)
    records = []
    sums = []
    for k, (f, b) in enumerate(zip(forward, backward)):
        total = 0j
        for mode in sorted(set(f.amplitudes) | set(b.amplitudes), key=_mode_key):
            fa, ba = f.amplitude(mode), b.amplitude(mode)
            w = fa * ba.conjugate() / overlap
            total += w
            present = abs(fa) > ZERO_TOL and abs(ba) > ZERO_TOL and abs(w) > epsilon
            records.append(SegmentRecord(k, mode, circuit.region_of(mode.path), fa, ba, w, present))
        for t, ba in b.terminals.items():
            total += f.terminals.get(t, 0j) * ba.conjugate() / overlap
        sums.append(total)
    return WeakTraceReport(tuple(records), epsilon, outcome, p, overlap, tuple(sums))


def _mode_key(m: Mode):
    return (m.path, m.pol or "")


# --- crossing accounting --------------------------------------------------------


def remote_mass(circuit: Circuit, state: PhotonState) -> float:
    events = circuit.terminals
    mass = sum(abs(a) ** 2 for m, a in state.amplitudes.items() if circuit.region_of(m.path) in REMOTE)
    mass += sum(abs(a) ** 2 for t, a in state.terminals.items() if events[t.label].region in REMOTE)
    return mass


def crossing_report(
    circuit: Circuit,
    light: Light | str,
    outcome: str | None = None,
    state: PhotonState | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """Mass that entered Channel or Bob segments.

    Classical light: total intensity that flowed into the remote region (sum of
    positive increments of remote intensity, absorbed light included).

    Post-selected photon: the largest, over stage boundaries, of
    ``sum |weak value|**2`` over remote segments flagged present, plus the
    outcome's own weight when it is a remote terminal. A segment only counts
    when both the forward and backward waves reach it, so this is zero exactly
    when the weak trace shows no remote presence at the same ``epsilon``.
    """
    light = Light(light)
    if light is Light.CLASSICAL:
        return _classical_inflow(circuit, state)
    if outcome is None:
        raise ValueError("single-photon crossing needs a post-selected outcome")
    report = weak_trace(circuit, outcome, state, epsilon)
    per_stage: dict[int, float] = {}
    for r in report.records:
        if r.present and r.region in REMOTE:
            per_stage[r.stage] = per_stage.get(r.stage, 0.0) + abs(r.weak_value) ** 2
    best = max(per_stage.values(), default=0.0)
    if circuit.terminals[outcome].region in REMOTE:
        best = max(best, 1.0)
    return best


def _classical_inflow(circuit: Circuit, state: PhotonState | None) -> float:
    # streams the stages; absorbed remote mass is tracked per absorber, not rescanned
    if state is None:
        state = circuit.initial_state()
    regions = circuit.regions
    events = circuit.terminals
    amps, terms = dict(state.amplitudes), dict(state.terminals)

    def live_remote() -> float:
        return sum(abs(a) ** 2 for m, a in amps.items() if regions[m.path] in REMOTE)

    def label_mass(label: str) -> float:
        return sum(abs(a) ** 2 for t, a in terms.items() if t.label == label)

    absorbed = sum(abs(a) ** 2 for t, a in terms.items() if events[t.label].region in REMOTE)
    prev = live_remote() + absorbed
    inflow = 0.0
    for stage in circuit.stages:
        for el in stage:
            ev = el.terminal()
            if ev is not None and ev.region in REMOTE:
                before = label_mass(ev.label)
                el.forward(amps, terms)
                absorbed += label_mass(ev.label) - before
            else:
                el.forward(amps, terms)
        r = live_remote() + absorbed
        if r > prev:
            inflow += r - prev
        prev = r
    return inflow


# --- consistent histories -------------------------------------------------------

TERMINAL_CELL = "terminal"


@dataclass(frozen=True)
class History:
    chain: tuple[str, ...]
    outcome: str
    components: Mapping[str | None, complex]

    @property
    def probability(self) -> float:
        return sum(abs(a) ** 2 for a in self.components.values())

    @property
    def amplitude(self) -> complex:
        """Chain amplitude; for several absorbed polarizations, the dominant one."""
        return max(self.components.values(), key=abs, default=0j)

    def visits(self, cells: Iterable[str]) -> bool:
        cells = set(cells)
        return any(c in cells for c in self.chain)


@dataclass(frozen=True)
class HistoryFamily:
    histories: tuple[History, ...]
    decoherence: np.ndarray
    consistent: bool
    tolerance: float
    cuts: tuple[int, ...]
    max_offdiag_real: float
    max_offdiag_abs: float

    @property
    def strongly_consistent(self) -> bool:
        """Full complex condition: every off-diagonal entry vanishes."""
        return self.max_offdiag_abs < self.tolerance

    def trace(self) -> float:
        return float(np.real(np.trace(self.decoherence)))

    def outcome_weight(self, outcome: str) -> float:
        return float(sum(h.probability for h in self.histories if h.outcome == outcome))


def _cell_function(circuit: Circuit, coarse_graining) -> Callable[[Mode], str]:
    if coarse_graining is None:
        return lambda m: circuit.cell_of(m.path)
    if callable(coarse_graining):
        return coarse_graining

    def cell(m: Mode) -> str:
        if m in coarse_graining:
            return coarse_graining[m]
        if m.path in coarse_graining:
            return coarse_graining[m.path]
        raise StructuralError(f"coarse-graining does not cover mode {m}")

    return cell


def build_history_family(
    circuit: Circuit,
    cuts: Sequence[int] | None = None,
    coarse_graining: Mapping | Callable[[Mode], str] | None = None,
    state: PhotonState | None = None,
    tolerance: float = DEFAULT_CONSISTENCY_TOL,
    max_histories: int = MAX_HISTORIES,
) -> HistoryFamily:
    """Enumerate region-cell chains at ``cuts`` and their decoherence functional.

    Each cut projects onto the cells of the live modes, plus one cell for
    everything already absorbed. The family is closed by the final terminal, so
    two histories interfere only when they end in the same terminal.
    """
    cuts = tuple(circuit.history_cuts if cuts is None else cuts)
    if any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise StructuralError(f"cuts must be strictly increasing, got {cuts}")
    if cuts and (cuts[0] < 0 or cuts[-1] > len(circuit.stages)):
        raise StructuralError(f"cuts outside 0..{len(circuit.stages)}")
    cell_of = _cell_function(circuit, coarse_graining)
    if state is None:
        state = circuit.initial_state()

    branches = [((), dict(state.amplitudes), dict(state.terminals))]
    cut_set = set(cuts)
    for k in range(len(circuit.stages) + 1):
        if k > 0:
            for _, amps, terms in branches:
                for el in circuit.stages[k - 1]:
                    el.forward(amps, terms)
        if k in cut_set:
            split = []
            for chain, amps, terms in branches:
                parts: dict[str, tuple[dict, dict]] = {}
                for m, a in amps.items():
                    parts.setdefault(cell_of(m), ({}, {}))[0][m] = a
                if terms:
                    parts.setdefault(TERMINAL_CELL, ({}, {}))[1].update(terms)
                for cell in sorted(parts):
                    pa, pt = parts[cell]
                    weight = sum(abs(a) ** 2 for a in pa.values()) + sum(abs(a) ** 2 for a in pt.values())
                    if weight > BRANCH_PRUNE:
                        split.append((chain + (cell,), pa, pt))
            branches = split
            if len(branches) > max_histories:
                raise ResourceError(
                    f"{len(branches)} live histories after cut {k} exceed {max_histories}; coarsen the cells or use fewer cuts"
                )

    histories = []
    for chain, amps, terms in branches:
        if sum(abs(a) ** 2 for a in amps.values()) > ZERO_TOL:
            raise StructuralError("history family needs a circuit in which all light is absorbed")
        by_label: dict[str, dict] = {}
        for t, a in terms.items():
            by_label.setdefault(t.label, {})[t.pol] = a
        for label in sorted(by_label):
            comps = by_label[label]
            if sum(abs(a) ** 2 for a in comps.values()) > BRANCH_PRUNE:
                histories.append(History(chain, label, comps))
    if len(histories) > max_histories:
        raise ResourceError(f"{len(histories)} histories exceed {max_histories}")
    histories.sort(key=lambda h: (h.outcome, h.chain))

    n = len(histories)
    dmat = np.zeros((n, n), dtype=complex)
    for i, hi in enumerate(histories):
        for j in range(i, n):
            hj = histories[j]
            if hi.outcome != hj.outcome:
                continue
            val = sum(hj.components.get(p, 0j).conjugate() * a for p, a in hi.components.items())
            dmat[i, j] = val
            dmat[j, i] = np.conj(val)
    off = dmat - np.diag(np.diag(dmat))
    max_re = float(np.max(np.abs(off.real))) if n else 0.0
    max_abs = float(np.max(np.abs(off))) if n else 0.0
    return HistoryFamily(tuple(histories), dmat, max_re < tolerance, tolerance, cuts, max_re, max_abs)


class Verdict(str, Enum):
    COUNTERFACTUAL = "Counterfactual"
    NOT_COUNTERFACTUAL = "NotCounterfactual"
    MEANINGLESS = "Meaningless"


def classify_by_histories(
    family: HistoryFamily,
    bob_cells: Iterable[str],
    outcome: str,
    threshold: float = ZERO_TOL,
) -> Verdict:
    """Meaningless for an inconsistent family; otherwise check the outcome's histories."""
    if not family.consistent:
        return Verdict.MEANINGLESS
    bob_cells = set(bob_cells)
    for h in family.histories:
        if h.outcome == outcome and h.probability > threshold and h.visits(bob_cells):
            return Verdict.NOT_COUNTERFACTUAL
    return Verdict.COUNTERFACTUAL


# --- loss statistics ------------------------------------------------------------


def _h2(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def leakage_bits(p_block: float, p_open: float) -> float:
    """Mutual information between a uniform bit and the abort flag."""
    p_block = min(max(p_block, 0.0), 1.0)
    p_open = min(max(p_open, 0.0), 1.0)
    if p_block == p_open:
        return 0.0
    mi = _h2((p_block + p_open) / 2) - (_h2(p_block) + _h2(p_open)) / 2
    return min(max(mi, 0.0), 1.0)


@dataclass(frozen=True)
class LossStatistics:
    p_loss_block: float
    p_loss_open: float
    leakage_bits: float

    @property
    def residual(self) -> float:
        return abs(self.p_loss_block - self.p_loss_open)


def abort_probability(circuit: Circuit, mapping: BitMapping) -> float:
    dist = run_fock(circuit)
    return math.fsum(p for label, p in dist.values.items() if mapping.decode.get(label) is Bit.ABORT)


def loss_statistics(circuits: tuple[Circuit, Circuit], mapping: BitMapping) -> LossStatistics:
    """``circuits`` is the (blocked, open) pair sharing ``mapping``."""
    blocked, opened = circuits
    pb = abort_probability(blocked, mapping)
    po = abort_probability(opened, mapping)
    return LossStatistics(pb, po, leakage_bits(pb, po))
