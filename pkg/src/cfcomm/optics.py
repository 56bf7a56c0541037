"""Single-photon and classical-field propagation through polarized interferometer networks.

A state is a sparse map from optical mode ``(path, polarization)`` to a complex
amplitude, plus coherent amplitudes for terminals (detectors, blockers, loss
channels, bombs) that have absorbed light. A terminal keeps one amplitude per
polarization so that absorbed H and V light stay orthogonal. Probabilities and
classical intensities are both ``|amplitude|**2`` under the same linear
evolution; the two light models differ only in how terminal numbers are read.

Conventions
-----------
* Beamsplitters and half-wave plates are real rotations
  ``[[cos t, -sin t], [sin t, cos t]]`` acting on ``(a, b)`` respectively
  ``(H, V)``. No ``i`` on reflection; the symmetric-phase convention differs only
  by relabeling modes.
* Half-wave plates take the polarization rotation angle directly, not the
  physical axis angle.
* Mirrors swap the contents of two paths without a phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, NamedTuple, Sequence

NORM_TOL = 1e-12
DRIFT_TOL = 1e-9
ZERO_TOL = 1e-12
NULL_POSTSELECTION = 1e-15


class OpticsError(Exception):
    """Base class for errors raised while building or running circuits."""


class StructuralError(OpticsError, ValueError):
    pass


class ConsistencyError(OpticsError):
    """Norm drifted beyond what floating point can explain."""


class CircuitIncompleteError(OpticsError):
    pass


class NullPostSelectionError(OpticsError):
    pass


class Region(str, Enum):
    ALICE = "Alice"
    CHANNEL = "Channel"
    BOB = "Bob"


class TerminalKind(str, Enum):
    DETECTOR = "Detector"
    BLOCKER = "Blocker"
    LOSS = "LossChannel"
    EXPLOSION = "Explosion"


H = "H"
V = "V"


class Mode(NamedTuple):
    path: str
    pol: str | None = None


class TerminalMode(NamedTuple):
    label: str
    pol: str | None = None


@dataclass(frozen=True)
class TerminalEvent:
    kind: TerminalKind
    label: str
    region: Region


@dataclass(frozen=True)
class PhotonState:
    """Sparse amplitudes over live modes and over terminals that absorbed light."""

    amplitudes: Mapping[Mode, complex] = field(default_factory=dict)
    terminals: Mapping[TerminalMode, complex] = field(default_factory=dict)

    @classmethod
    def single(cls, path: str, pol: str | None = None, amplitude: complex = 1.0) -> PhotonState:
        return cls({Mode(path, pol): complex(amplitude)}, {})

    @property
    def terminal_mass(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for t, a in self.terminals.items():
            out[t.label] = out.get(t.label, 0.0) + abs(a) ** 2
        return out

    def norm(self) -> float:
        return self.live_mass() + sum(abs(a) ** 2 for a in self.terminals.values())

    def live_mass(self) -> float:
        return sum(abs(a) ** 2 for a in self.amplitudes.values())

    def amplitude(self, mode: Mode) -> complex:
        return self.amplitudes.get(mode, 0j)

    def scaled(self, factor: complex) -> PhotonState:
        return PhotonState(
            {m: a * factor for m, a in self.amplitudes.items()},
            {t: a * factor for t, a in self.terminals.items()},
        )

    def __add__(self, other: PhotonState) -> PhotonState:
        amps = dict(self.amplitudes)
        for m, a in other.amplitudes.items():
            amps[m] = amps.get(m, 0j) + a
        terms = dict(self.terminals)
        for t, a in other.terminals.items():
            terms[t] = terms.get(t, 0j) + a
        return PhotonState(amps, terms)

    def inner(self, other: PhotonState) -> complex:
        """``<self|other>`` over modes and terminals."""
        total = 0j
        for m, a in other.amplitudes.items():
            total += self.amplitudes.get(m, 0j).conjugate() * a
        for t, a in other.terminals.items():
            total += self.terminals.get(t, 0j).conjugate() * a
        return total

    def project_terminal(self, label: str) -> PhotonState:
        return PhotonState({}, {t: a for t, a in self.terminals.items() if t.label == label})


# --- elements --------------------------------------------------------------


def _rotate(x: complex, y: complex, theta: float) -> tuple[complex, complex]:
    c, s = math.cos(theta), math.sin(theta)
    return c * x - s * y, s * x + c * y


def _put(amps: dict, key, value: complex) -> None:
    if value != 0:
        amps[key] = value


class Element:
    """Base for optical elements; ``forward``/``backward`` mutate working dicts."""

    def paths(self) -> tuple[str, ...]:
        raise NotImplementedError

    def terminal(self) -> TerminalEvent | None:
        return None

    def forward(self, amps: dict, terms: dict) -> None:
        raise NotImplementedError

    def backward(self, amps: dict, terms: dict) -> None:
        """Apply the adjoint, for evolving a post-selected state back in time."""
        raise NotImplementedError


@dataclass(frozen=True)
class BeamSplitter(Element):
    theta: float
    a: str
    b: str

    def paths(self):
        return (self.a, self.b)

    def _apply(self, amps, theta):
        pols = {m.pol for m in amps if m.path == self.a or m.path == self.b}
        for pol in pols:
            ma, mb = Mode(self.a, pol), Mode(self.b, pol)
            na, nb = _rotate(amps.pop(ma, 0j), amps.pop(mb, 0j), theta)
            _put(amps, ma, na)
            _put(amps, mb, nb)

    def forward(self, amps, terms):
        self._apply(amps, self.theta)

    def backward(self, amps, terms):
        self._apply(amps, -self.theta)


@dataclass(frozen=True)
class HalfWavePlate(Element):
    """Rotates polarization on one path by ``theta`` in the (H, V) plane."""

    theta: float
    path: str

    def paths(self):
        return (self.path,)

    def _apply(self, amps, theta):
        if Mode(self.path, None) in amps:
            raise StructuralError(f"half-wave plate on unpolarized light at {self.path!r}")
        mh, mv = Mode(self.path, H), Mode(self.path, V)
        nh, nv = _rotate(amps.pop(mh, 0j), amps.pop(mv, 0j), theta)
        _put(amps, mh, nh)
        _put(amps, mv, nv)

    def forward(self, amps, terms):
        self._apply(amps, self.theta)

    def backward(self, amps, terms):
        self._apply(amps, -self.theta)


@dataclass(frozen=True)
class PolarizingBeamSplitter(Element):
    """Two-port PBS: the ``crossing`` polarization swaps between ``a`` and ``b``.

    With ``crossing="V"``, light entering on ``a`` keeps its H part on ``a`` and
    sends its V part to ``b``; run on two occupied ports it recombines them. The
    map is a permutation and therefore its own adjoint.
    """

    a: str
    b: str
    crossing: str = V

    def paths(self):
        return (self.a, self.b)

    def forward(self, amps, terms):
        if Mode(self.a, None) in amps or Mode(self.b, None) in amps:
            raise StructuralError(f"PBS on unpolarized light at {self.a!r}/{self.b!r}")
        ma, mb = Mode(self.a, self.crossing), Mode(self.b, self.crossing)
        xa, xb = amps.pop(ma, None), amps.pop(mb, None)
        if xa is not None:
            amps[mb] = xa
        if xb is not None:
            amps[ma] = xb

    backward = forward


@dataclass(frozen=True)
class Mirror(Element):
    """Swaps the contents of ``src`` and ``dst`` (normally ``dst`` is empty)."""

    src: str
    dst: str

    def paths(self):
        return (self.src, self.dst)

    def forward(self, amps, terms):
        moved = {}
        for m in [m for m in amps if m.path == self.src or m.path == self.dst]:
            to = self.dst if m.path == self.src else self.src
            moved[Mode(to, m.pol)] = amps.pop(m)
        amps.update(moved)

    backward = forward


@dataclass(frozen=True)
class Absorber(Element):
    """Moves everything on ``path`` into its terminal, keeping polarization.

    Backward evolution moves the terminal's amplitude back onto the path and
    drops whatever the backward state carried there: nothing re-enters the
    circuit from an absorbed terminal.
    """

    path: str
    event: TerminalEvent

    def paths(self):
        return (self.path,)

    def terminal(self):
        return self.event

    def forward(self, amps, terms):
        label = self.event.label
        for m in [m for m in amps if m.path == self.path]:
            t = TerminalMode(label, m.pol)
            terms[t] = terms.get(t, 0j) + amps.pop(m)

    def backward(self, amps, terms):
        for m in [m for m in amps if m.path == self.path]:
            del amps[m]
        for t in [t for t in terms if t.label == self.event.label]:
            amps[Mode(self.path, t.pol)] = terms.pop(t)


def detector(path: str, label: str, region: Region = Region.ALICE) -> Absorber:
    return Absorber(path, TerminalEvent(TerminalKind.DETECTOR, label, region))


def blocker(path: str, label: str, region: Region = Region.BOB) -> Absorber:
    return Absorber(path, TerminalEvent(TerminalKind.BLOCKER, label, region))


def loss_channel(path: str, label: str, region: Region = Region.ALICE) -> Absorber:
    return Absorber(path, TerminalEvent(TerminalKind.LOSS, label, region))


def explosion(path: str, label: str = "bomb", region: Region = Region.BOB) -> Absorber:
    return Absorber(path, TerminalEvent(TerminalKind.EXPLOSION, label, region))


# --- circuits --------------------------------------------------------------


@dataclass(frozen=True)
class Circuit:
    """Ordered stages of elements acting on disjoint paths.

    ``cells`` assigns each path to a coarse-graining cell used for history
    families; ``history_cuts`` are the builder's default cut boundaries.
    """

    stages: tuple[tuple[Element, ...], ...]
    regions: Mapping[str, Region]
    source: Mode
    name: str = "circuit"
    cells: Mapping[str, str] = field(default_factory=dict)
    history_cuts: tuple[int, ...] = ()
    markers: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        seen_labels = set()
        if self.source.path not in self.regions:
            raise StructuralError(f"source path {self.source.path!r} has no region")
        for i, stage in enumerate(self.stages):
            touched: set[str] = set()
            for el in stage:
                for p in el.paths():
                    if p not in self.regions:
                        raise StructuralError(f"stage {i}: unknown path {p!r}")
                    if p in touched:
                        raise StructuralError(f"stage {i}: path {p!r} touched twice")
                    touched.add(p)
                ev = el.terminal()
                if ev is not None:
                    if ev.label in seen_labels:
                        raise StructuralError(f"duplicate terminal label {ev.label!r}")
                    seen_labels.add(ev.label)

    @property
    def terminals(self) -> dict[str, TerminalEvent]:
        return {
            el.terminal().label: el.terminal()
            for stage in self.stages
            for el in stage
            if el.terminal() is not None
        }

    @property
    def polarized(self) -> bool:
        return self.source.pol is not None

    def initial_state(self) -> PhotonState:
        return PhotonState.single(self.source.path, self.source.pol)

    def region_of(self, path: str) -> Region:
        return self.regions[path]

    def cell_of(self, path: str) -> str:
        return self.cells.get(path, self.regions[path].value.lower())

    def __len__(self):
        return len(self.stages)


def _check_norm(amps, terms, where: str) -> None:
    n = sum(abs(a) ** 2 for a in amps.values()) + sum(abs(a) ** 2 for a in terms.values())
    if abs(n - 1.0) > DRIFT_TOL:
        raise ConsistencyError(f"norm {n!r} at {where}")


def apply_element(state: PhotonState, element: Element, regions: Mapping[str, Region] | None = None) -> PhotonState:
    """Return the state after ``element``; the input is left untouched."""
    if regions is not None:
        for p in element.paths():
            if p not in regions:
                raise StructuralError(f"unknown path {p!r}")
    amps, terms = dict(state.amplitudes), dict(state.terminals)
    before = state.norm()
    element.forward(amps, terms)
    after = sum(abs(a) ** 2 for a in amps.values()) + sum(abs(a) ** 2 for a in terms.values())
    if abs(after - before) > DRIFT_TOL:
        raise ConsistencyError(f"{element!r} changed the norm from {before!r} to {after!r}")
    return PhotonState(amps, terms)


def evolve(circuit: Circuit, state: PhotonState | None = None, check: bool = True) -> list[PhotonState]:
    """States at every stage boundary: index 0 is the input, index k follows stage k."""
    if state is None:
        state = circuit.initial_state()
    amps, terms = dict(state.amplitudes), dict(state.terminals)
    out = [state]
    for i, stage in enumerate(circuit.stages):
        for el in stage:
            el.forward(amps, terms)
        if check:
            _check_norm(amps, terms, f"stage {i}")
        out.append(PhotonState(dict(amps), dict(terms)))
    return out


def evolve_backward(circuit: Circuit, final: PhotonState) -> list[PhotonState]:
    """Adjoint evolution of ``final``; index k is the backward state at boundary k."""
    amps, terms = dict(final.amplitudes), dict(final.terminals)
    out = [PhotonState(dict(amps), dict(terms))]
    for stage in reversed(circuit.stages):
        for el in reversed(stage):
            el.backward(amps, terms)
        out.append(PhotonState(dict(amps), dict(terms)))
    out.reverse()
    return out


def final_state(circuit: Circuit, state: PhotonState | None = None) -> PhotonState:
    if state is None:
        state = circuit.initial_state()
    amps, terms = dict(state.amplitudes), dict(state.terminals)
    for i, stage in enumerate(circuit.stages):
        for el in stage:
            el.forward(amps, terms)
    _check_norm(amps, terms, "final stage")
    residue = sum(abs(a) ** 2 for a in amps.values())
    if residue > ZERO_TOL:
        left = sorted({m.path for m in amps})
        raise CircuitIncompleteError(f"amplitude {residue!r} left on non-terminal paths {left}")
    return PhotonState({}, terms)


class Light(str, Enum):
    FOCK = "fock"
    CLASSICAL = "classical"


@dataclass(frozen=True)
class OutcomeDistribution:
    """Probability (Fock) or intensity fraction (classical) per terminal.

    In the Fock model each run ends at exactly one terminal. In the classical
    model every terminal with positive intensity registers in the same run.
    """

    values: Mapping[str, float]
    light: Light
    events: Mapping[str, TerminalEvent]

    def __getitem__(self, label: str) -> float:
        return self.values[label]

    def get(self, label: str, default: float = 0.0) -> float:
        return self.values.get(label, default)

    def total(self) -> float:
        return math.fsum(self.values.values())

    def registering(self, threshold: float = 0.0) -> list[str]:
        """Terminals that register in a single classical run (all lit ones)."""
        if self.light is not Light.CLASSICAL:
            raise ValueError("only the classical model registers several terminals per run")
        return [k for k, v in self.values.items() if v > threshold]

    def region_total(self, *regions: Region) -> float:
        return math.fsum(v for k, v in self.values.items() if self.events[k].region in regions)


def _distribution(circuit: Circuit, state: PhotonState | None, light: Light) -> OutcomeDistribution:
    fin = final_state(circuit, state)
    mass = fin.terminal_mass
    events = circuit.terminals
    values = {label: mass.get(label, 0.0) for label in sorted(events)}
    return OutcomeDistribution(values, light, events)


def run_fock(circuit: Circuit, state: PhotonState | None = None) -> OutcomeDistribution:
    return _distribution(circuit, state, Light.FOCK)


def run_classical(circuit: Circuit, state: PhotonState | None = None) -> OutcomeDistribution:
    return _distribution(circuit, state, Light.CLASSICAL)


def run(circuit: Circuit, light: Light | str, state: PhotonState | None = None) -> OutcomeDistribution:
    return _distribution(circuit, state, Light(light))


def post_select(circuit: Circuit, outcome: str, state: PhotonState | None = None) -> tuple[float, PhotonState]:
    """Probability of ``outcome`` and the normalized terminal state it leaves."""
    if outcome not in circuit.terminals:
        raise StructuralError(f"no terminal {outcome!r} in {circuit.name}")
    fin = final_state(circuit, state).project_terminal(outcome)
    p = fin.norm()
    if p < NULL_POSTSELECTION:
        raise NullPostSelectionError(f"P({outcome}) = {p!r}; backward state undefined")
    return p, fin.scaled(1 / math.sqrt(p))


def stage_norms(circuit: Circuit, state: PhotonState | None = None) -> list[float]:
    return [s.norm() for s in evolve(circuit, state, check=False)]


class CircuitBuilder:
    """Accumulates stages and path metadata for protocol builders."""

    def __init__(self, name: str):
        self.name = name
        self.stages: list[tuple[Element, ...]] = []
        self.regions: dict[str, Region] = {}
        self.cells: dict[str, str] = {}
        self.markers: dict[str, list[int]] = {}

    def path(self, name: str, region: Region, cell: str | None = None) -> str:
        self.regions[name] = region
        if cell is not None:
            self.cells[name] = cell
        return name

    def stage(self, *elements: Element | None) -> int:
        """Append a stage; ``None`` entries keep stage indices aligned across variants."""
        self.stages.append(tuple(el for el in elements if el is not None))
        return len(self.stages)

    def mark(self, key: str, boundary: int | None = None) -> None:
        self.markers.setdefault(key, []).append(len(self.stages) if boundary is None else boundary)

    def build(self, source: Mode, history_cuts: Iterable[int] = ()) -> Circuit:
        return Circuit(
            stages=tuple(self.stages),
            regions=dict(self.regions),
            source=source,
            name=self.name,
            cells=dict(self.cells),
            history_cuts=tuple(history_cuts),
            markers={k: tuple(v) for k, v in self.markers.items()},
        )


def superpose(states: Sequence[tuple[complex, PhotonState]]) -> PhotonState:
    out = PhotonState()
    for c, s in states:
        out = out + s.scaled(c)
    return out
