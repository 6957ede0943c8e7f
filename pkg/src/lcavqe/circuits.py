"""Circuit intermediate representation and the ansatz template library.

Circuits are immutable data: tuples of GateOp records.  A template describes
one layer of a hardware-efficient ansatz plus a repetition count; expansion
renumbers parameter slots contiguously layer by layer.  The 14 library
templates live in ``data/ansatz14.json`` as kind/pattern entries so the IR
logic stays independent of any particular catalog transcription.

Also here: derivative-circuit construction (Pauli generator insertion) and
the two-qubit-gate budgets of interference-based versus projection-based
overlap estimation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import numpy as np

from .errors import CircuitFileError, UnknownTemplateError, UnsupportedGeneratorError
from .sim import PauliString


class GateKind(str, Enum):
    RX = "rx"
    RY = "ry"
    RZ = "rz"
    H = "h"
    X = "x"
    CNOT = "cnot"
    CZ = "cz"
    CRX = "crx"
    CRY = "cry"
    CRZ = "crz"
    PAULI_X = "pauli_x"
    PAULI_Y = "pauli_y"
    PAULI_Z = "pauli_z"
    PHASE_ON_ZEROS = "phase_on_zeros"


ROTATION_KINDS = frozenset(
    {GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CRX, GateKind.CRY, GateKind.CRZ}
)
_ONE_QUBIT_KINDS = frozenset(
    {GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.H, GateKind.X,
     GateKind.PAULI_X, GateKind.PAULI_Y, GateKind.PAULI_Z}
)
_TWO_QUBIT_KINDS = frozenset({GateKind.CNOT, GateKind.CZ, GateKind.CRX, GateKind.CRY, GateKind.CRZ})

_GENERATOR_AXIS = {GateKind.RX: "X", GateKind.RY: "Y", GateKind.RZ: "Z"}
_PAULI_GATE = {"X": GateKind.PAULI_X, "Y": GateKind.PAULI_Y, "Z": GateKind.PAULI_Z}
_ROTATION_FOR_AXIS = {"X": GateKind.RX, "Y": GateKind.RY, "Z": GateKind.RZ}

_SELF_INVERSE = frozenset(
    {GateKind.H, GateKind.X, GateKind.CNOT, GateKind.CZ,
     GateKind.PAULI_X, GateKind.PAULI_Y, GateKind.PAULI_Z}
)


@dataclass(frozen=True)
class GateOp:
    """One gate: a kind, its qubits, and (for rotations) an angle or slot.

    PHASE_ON_ZEROS acts on the whole register and is recorded with an empty
    qubit tuple; it always carries a fixed angle.
    """

    kind: GateKind
    qubits: tuple = ()
    angle: float = None
    slot: int = None

    def __post_init__(self):
        kind = GateKind(self.kind)
        qubits = tuple(int(q) for q in self.qubits)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "qubits", qubits)
        if len(set(qubits)) != len(qubits):
            raise ValueError("gate qubits must be distinct")
        if kind is GateKind.PHASE_ON_ZEROS:
            if qubits:
                raise ValueError("phase gate acts on the whole register; no qubits")
            if self.angle is None or self.slot is not None:
                raise ValueError("phase gate needs a fixed angle")
            return
        expected = 1 if kind in _ONE_QUBIT_KINDS else 2
        if len(qubits) != expected:
            raise ValueError(f"{kind.value} acts on {expected} qubit(s), got {qubits}")
        if kind in ROTATION_KINDS:
            if (self.angle is None) == (self.slot is None):
                raise ValueError(f"{kind.value} needs exactly one of angle or slot")
        elif self.angle is not None or self.slot is not None:
            raise ValueError(f"{kind.value} carries no parameter")


@dataclass(frozen=True)
class Circuit:
    """A flat gate sequence on a fixed register width.

    ``slot_positions`` maps parameter slot l to the index (into ``gates``)
    of the gate that consumes it; it survives binding so that derivative
    circuits can be built from bound instances.
    """

    n_qubits: int
    gates: tuple = ()
    slot_positions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "slot_positions", tuple(self.slot_positions))
        for g in self.gates:
            if any(q >= self.n_qubits for q in g.qubits):
                raise ValueError("gate qubit index exceeds register width")

    @property
    def param_count(self):
        """Number of unbound parameter slots."""
        return sum(1 for g in self.gates if g.slot is not None)

    def replace_gates(self, gates, slot_positions=None):
        return Circuit(
            self.n_qubits,
            tuple(gates),
            self.slot_positions if slot_positions is None else tuple(slot_positions),
        )


@dataclass(frozen=True)
class CircuitTemplate:
    """A one-layer gate list plus a repetition count.

    Layer k of the expansion uses slot offsets k * slots_per_layer, so the
    flattened parameter vector is ordered layer-major.
    """

    id: int
    n_qubits: int
    layers: int
    layer_gates: tuple
    name: str = ""

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if self.layers < 1:
            raise ValueError("layers must be positive")
        object.__setattr__(self, "layer_gates", tuple(self.layer_gates))

    @property
    def slots_per_layer(self):
        return sum(1 for g in self.layer_gates if g.slot is not None)

    @property
    def param_count(self):
        return self.layers * self.slots_per_layer

    def circuit(self):
        """The expanded, unbound Circuit (slots renumbered per layer)."""
        gates = []
        positions = [None] * self.param_count
        for k in range(self.layers):
            offset = k * self.slots_per_layer
            for g in self.layer_gates:
                if g.slot is not None:
                    g = GateOp(g.kind, g.qubits, slot=g.slot + offset)
                    positions[g.slot] = len(gates)
                gates.append(g)
        return Circuit(self.n_qubits, tuple(gates), tuple(positions))


def bind(template_or_circuit, thetas):
    """Bind every parameter slot to an angle; returns a bound Circuit."""
    circ = (
        template_or_circuit.circuit()
        if isinstance(template_or_circuit, CircuitTemplate)
        else template_or_circuit
    )
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape != (circ.param_count,):
        raise ValueError(
            f"expected {circ.param_count} angles, got shape {thetas.shape}"
        )
    gates = [
        GateOp(g.kind, g.qubits, angle=float(thetas[g.slot])) if g.slot is not None else g
        for g in circ.gates
    ]
    return circ.replace_gates(gates)


def concat(*circuits):
    """Concatenate circuits on the same register; slot bookkeeping is dropped."""
    if not circuits:
        raise ValueError("nothing to concatenate")
    n = circuits[0].n_qubits
    if any(c.n_qubits != n for c in circuits):
        raise ValueError("register widths differ")
    gates = tuple(g for c in circuits for g in c.gates)
    return Circuit(n, gates, ())


def adjoint(circuit):
    """The inverse circuit: gates reversed, rotation and phase angles negated."""
    gates = []
    for g in reversed(circuit.gates):
        if g.slot is not None:
            raise ValueError("cannot take the adjoint of an unbound circuit")
        if g.kind in _SELF_INVERSE:
            gates.append(g)
        else:
            gates.append(GateOp(g.kind, g.qubits, angle=-g.angle))
    last = len(circuit.gates) - 1
    positions = tuple(last - p for p in circuit.slot_positions)
    return circuit.replace_gates(gates, positions)


# ---------------------------------------------------------------------------
# Derivative circuits


def generator_of(gate):
    """Hermitian generator of a rotation gate as (PauliString, scalar).

    With the convention R_P(theta) = exp(-i theta P / 2), the derivative of
    the gate is (-i/2) * P * gate, so the returned scalar is -i/2 and the
    Pauli insertion goes immediately after the gate.  Controlled rotations
    have projector-weighted generators that are not a single Pauli string,
    so they are rejected.
    """
    kind = GateKind(gate.kind)
    if kind not in ROTATION_KINDS:
        raise ValueError(f"{kind.value} has no parameter to differentiate")
    if kind not in _GENERATOR_AXIS:
        raise UnsupportedGeneratorError(
            f"{kind.value} is not generated by a single Pauli string"
        )
    axis = _GENERATOR_AXIS[kind]
    return PauliString(ops=((gate.qubits[0], axis),)), -0.5j


def insert_generator(circuit, slot):
    """Insert the slot's Pauli generator right after its gate.

    Returns (new circuit, scalar): running the new circuit on the reference
    and multiplying by the scalar gives the derivative of the original
    output state with respect to that slot.
    """
    pos = _slot_gate_position(circuit, slot)
    gate = circuit.gates[pos]
    pauli, scalar = generator_of(gate)
    (qubit, axis), = pauli.ops
    inserted = GateOp(_PAULI_GATE[axis], (qubit,))
    return _insert_at(circuit, pos + 1, inserted), scalar


def insert_quarter_rotation(circuit, slot, sign):
    """Insert exp(-+ i pi P / 4) after the slot's gate (P = its generator).

    These half-angle insertions build interference states (|psi> -+ i|dpsi'>)
    / sqrt(2) whose overlaps with other members never vanish together, which
    keeps derivative reconstruction well conditioned.
    """
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    pos = _slot_gate_position(circuit, slot)
    gate = circuit.gates[pos]
    pauli, _ = generator_of(gate)
    (qubit, axis), = pauli.ops
    inserted = GateOp(_ROTATION_FOR_AXIS[axis], (qubit,), angle=sign * np.pi / 2.0)
    return _insert_at(circuit, pos + 1, inserted)


def prefix_through_slot(circuit, slot):
    """The circuit truncated just after the gate consuming the given slot."""
    pos = _slot_gate_position(circuit, slot)
    return Circuit(circuit.n_qubits, circuit.gates[: pos + 1], ())


def _slot_gate_position(circuit, slot):
    if not 0 <= slot < len(circuit.slot_positions):
        raise IndexError(f"slot {slot} out of range")
    return circuit.slot_positions[slot]


def _insert_at(circuit, index, gate):
    gates = circuit.gates[:index] + (gate,) + circuit.gates[index:]
    positions = tuple(p if p < index else p + 1 for p in circuit.slot_positions)
    return circuit.replace_gates(gates, positions)


def phase_on_zeros(angle):
    """The register-wide gate multiplying the all-zeros amplitude by e^{i angle}."""
    return GateOp(GateKind.PHASE_ON_ZEROS, (), angle=float(angle))


# ---------------------------------------------------------------------------
# Template library


_PATTERNS_1Q = ("each", "middle")
_PATTERNS_2Q = ("chain", "ring", "pairs_even", "pairs_odd", "all_pairs")


def _expand_pattern(pattern, n):
    if pattern == "each":
        return [(q,) for q in range(n)]
    if pattern == "middle":
        return [(q,) for q in range(1, n - 1)]
    if pattern == "chain":
        return [(i + 1, i) for i in range(n - 2, -1, -1)]
    if pattern == "ring":
        return [(i, (i + 1) % n) for i in range(n - 1, -1, -1)]
    if pattern == "pairs_even":
        return [(2 * k + 1, 2 * k) for k in range((n // 2))]
    if pattern == "pairs_odd":
        return [(2 * k + 2, 2 * k + 1) for k in range((n - 1) // 2)]
    if pattern == "all_pairs":
        return [
            (c, t)
            for c in range(n - 1, -1, -1)
            for t in range(n - 1, -1, -1)
            if t != c
        ]
    raise CircuitFileError(f"unknown qubit pattern {pattern!r}")


@dataclass(frozen=True)
class _TemplateEntry:
    id: int
    name: str
    gate_specs: tuple  # of (GateKind, pattern, parameterized)


@dataclass(frozen=True)
class AnsatzLibrary:
    """Validated template catalog plus the digest of its source file."""

    entries: dict = field(default_factory=dict)
    digest: str = ""
    source: str = ""

    def ids(self):
        return sorted(self.entries)

    def __contains__(self, template_id):
        return template_id in self.entries

    def name(self, template_id):
        return self._entry(template_id).name

    def _entry(self, template_id):
        try:
            return self.entries[template_id]
        except KeyError:
            raise UnknownTemplateError(f"no ansatz with id {template_id}") from None

    def instantiate(self, template_id, n_qubits, layers):
        """Expand a catalog entry into a CircuitTemplate at a given width."""
        entry = self._entry(template_id)
        if n_qubits < 2:
            raise ValueError("library templates need at least 2 qubits")
        if layers < 1:
            raise ValueError("layers must be positive")
        gates = []
        slot = 0
        for kind, pattern, parameterized in entry.gate_specs:
            for qubits in _expand_pattern(pattern, n_qubits):
                if parameterized:
                    gates.append(GateOp(kind, qubits, slot=slot))
                    slot += 1
                else:
                    gates.append(GateOp(kind, qubits))
        return CircuitTemplate(
            id=template_id,
            n_qubits=n_qubits,
            layers=layers,
            layer_gates=tuple(gates),
            name=entry.name,
        )


def _parse_entry(raw):
    try:
        template_id = int(raw["id"])
        name = str(raw.get("name", f"ansatz-{template_id}"))
        gate_specs = []
        for spec in raw["gates"]:
            kind = GateKind(spec["kind"])
            pattern = spec["pattern"]
            parameterized = bool(spec.get("param", False))
            if kind is GateKind.PHASE_ON_ZEROS:
                raise CircuitFileError("phase gates do not belong in ansatz layers")
            if kind in _ONE_QUBIT_KINDS and pattern not in _PATTERNS_1Q:
                raise CircuitFileError(
                    f"{kind.value} needs a single-qubit pattern, got {pattern!r}"
                )
            if kind in _TWO_QUBIT_KINDS and pattern not in _PATTERNS_2Q:
                raise CircuitFileError(
                    f"{kind.value} needs a two-qubit pattern, got {pattern!r}"
                )
            if pattern not in _PATTERNS_1Q and pattern not in _PATTERNS_2Q:
                raise CircuitFileError(f"unknown qubit pattern {pattern!r}")
            if parameterized and kind not in ROTATION_KINDS:
                raise CircuitFileError(f"{kind.value} cannot carry a parameter")
            if not parameterized and kind in ROTATION_KINDS:
                raise CircuitFileError(f"{kind.value} entries must set param: true")
            gate_specs.append((kind, pattern, parameterized))
    except CircuitFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CircuitFileError(f"malformed template entry: {exc}") from exc
    return _TemplateEntry(template_id, name, tuple(gate_specs))


def default_library_path():
    return resources.files("lcavqe.data").joinpath("ansatz14.json")


def extra_library_path():
    return resources.files("lcavqe.data").joinpath("ansatz_extra.json")


def load_templates(path=None):
    """Load and validate a template catalog file (default: the shipped 14)."""
    source = default_library_path() if path is None else path
    try:
        data = source.read_bytes() if hasattr(source, "read_bytes") else open(source, "rb").read()
    except OSError as exc:
        raise CircuitFileError(f"cannot read circuit file: {exc}") from exc
    digest = hashlib.sha256(data).hexdigest()
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise CircuitFileError(f"circuit file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "templates" not in doc:
        raise CircuitFileError("circuit file lacks a 'templates' list")
    entries = {}
    for raw in doc["templates"]:
        entry = _parse_entry(raw)
        if entry.id in entries:
            raise CircuitFileError(f"duplicate template id {entry.id}")
        entries[entry.id] = entry
    if not entries:
        raise CircuitFileError("circuit file defines no templates")
    return AnsatzLibrary(entries=entries, digest=digest, source=str(source))


def instantiate(library, template_id, n_qubits, layers):
    return library.instantiate(template_id, n_qubits, layers)


# ---------------------------------------------------------------------------
# Two-qubit-gate budgets


def _gates_of(circuit_like):
    if isinstance(circuit_like, CircuitTemplate):
        return circuit_like.circuit().gates
    return circuit_like.gates


def count_two_qubit(circuit_like):
    """Number of two-qubit gates (register-wide phase gates excluded)."""
    return sum(1 for g in _gates_of(circuit_like) if len(g.qubits) == 2)


def default_mcphase_cost(n_qubits):
    """Two-qubit-gate count of the register-wide phase gate on n qubits.

    On one qubit it is a bare phase (free); on two it is a single controlled
    phase; beyond that an ancilla-free multi-controlled construction with
    quadratic two-qubit cost is assumed.  Pluggable via GateCostModel.
    """
    if n_qubits < 1:
        raise ValueError("n_qubits must be positive")
    if n_qubits == 1:
        return 0
    return 2 * n_qubits * n_qubits - 6 * n_qubits + 5


@dataclass(frozen=True)
class GateCostModel:
    toffoli_2q_cost: int = 5
    mcphase_cost: object = default_mcphase_cost

    def __post_init__(self):
        if self.mcphase_cost(3) != self.toffoli_2q_cost:
            raise ValueError("mcphase cost at n=3 must equal the Toffoli constant")
        costs = [self.mcphase_cost(n) for n in range(1, 21)]
        if any(b < a for a, b in zip(costs, costs[1:])):
            raise ValueError("mcphase cost must be nondecreasing in n")


def ht_two_qubit_cost(circuits, model=None):
    """Two-qubit cost of one ancilla-controlled interference circuit.

    Every listed gate runs controlled on the ancilla: single-qubit gates
    become two-qubit gates (cost 1 each) and two-qubit gates become
    doubly-controlled (Toffoli-equivalent, cost model.toffoli_2q_cost).
    The ancilla's own framing rotations are free.
    """
    model = model or GateCostModel()
    if not circuits:
        raise ValueError("no circuits listed")
    total = 0
    for circ in circuits:
        for g in _gates_of(circ):
            if g.kind is GateKind.PHASE_ON_ZEROS:
                raise ValueError("phase gates have no controlled-cost entry")
            total += 1 if len(g.qubits) == 1 else model.toffoli_2q_cost
    return total


def pcm_two_qubit_cost(circuits, n_qubits, model=None):
    """Two-qubit cost of a projective-measurement circuit list.

    Gates run uncontrolled, so only native two-qubit gates count, plus the
    multi-controlled phase construction for each register-wide phase gate.
    """
    model = model or GateCostModel()
    if not circuits:
        raise ValueError("no circuits listed")
    total = 0
    for circ in circuits:
        for g in _gates_of(circ):
            if g.kind is GateKind.PHASE_ON_ZEROS:
                total += model.mcphase_cost(n_qubits)
            elif len(g.qubits) == 2:
                total += 1
    return total


def cross_term_budget(template_i, template_j, model=None, pauli_qubit=0):
    """Two-qubit budgets for estimating one off-diagonal (S and Hm) pair.

    Interference route: four ancilla-controlled circuits (real and imaginary
    settings for the bare overlap and for one Pauli-weighted overlap).
    Projection route: the overlap circuit, two phase-gate circuits at the
    two x settings, and the two direct Pauli circuits.

    Returns (ht_cost, pcm_cost).
    """
    model = model or GateCostModel()
    if template_i.n_qubits != template_j.n_qubits:
        raise ValueError("templates must share a register width")
    n = template_i.n_qubits
    b_i = bind(template_i, np.zeros(template_i.param_count))
    b_j = bind(template_j, np.zeros(template_j.param_count))
    pauli_gate = Circuit(n, (GateOp(GateKind.PAULI_Z, (pauli_qubit,)),), ())

    plain = concat(adjoint(b_i), b_j)
    weighted = concat(adjoint(b_i), b_j, pauli_gate)
    ht = 2 * ht_two_qubit_cost([plain], model) + 2 * ht_two_qubit_cost([weighted], model)

    overlap = concat(b_i, adjoint(b_j))
    triple = concat(b_i, adjoint(b_j), Circuit(n, (phase_on_zeros(np.pi),), ()), b_j)
    pcm = pcm_two_qubit_cost([overlap, triple, triple, b_i, b_j], n, model)
    return ht, pcm
