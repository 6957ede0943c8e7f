"""Shared fixtures and a dense-matrix oracle for circuit semantics.

The oracle builds full 2^n x 2^n unitaries by Kronecker products, one gate
at a time.  It shares no code with the vectorized simulator kernels, so
agreement between the two is a real check rather than a tautology.
"""

from __future__ import annotations

import numpy as np
import pytest

from lcavqe import circuits, sim

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
_H = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2.0)
_P0 = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
_P1 = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)

_PAULI = {"x": _X, "y": _Y, "z": _Z}


def _rot(axis, theta):
    pauli = _PAULI[axis]
    return np.cos(theta / 2.0) * _I2 - 1.0j * np.sin(theta / 2.0) * pauli


def _kron_chain(ops):
    """ops[q] acts on qubit q; qubit 0 is the least significant bit."""
    full = ops[-1]
    for op in ops[-2::-1]:
        full = np.kron(full, op)
    return full


def _embed(op, qubit, n):
    ops = [_I2] * n
    ops[qubit] = op
    return _kron_chain(ops)


def _controlled(op, control, target, n):
    idle = [_I2] * n
    idle[control] = _P0
    act = [_I2] * n
    act[control] = _P1
    act[target] = op
    return _kron_chain(idle) + _kron_chain(act)


def dense_gate(gate, n):
    """Full-dimension matrix for one gate op, straight from the definitions."""
    kind = gate.kind.value
    if kind in ("rx", "ry", "rz"):
        return _embed(_rot(kind[1], gate.angle), gate.qubits[0], n)
    if kind in ("crx", "cry", "crz"):
        control, target = gate.qubits
        return _controlled(_rot(kind[2], gate.angle), control, target, n)
    if kind == "h":
        return _embed(_H, gate.qubits[0], n)
    if kind == "x":
        return _embed(_X, gate.qubits[0], n)
    if kind == "pauli_x":
        return _embed(_X, gate.qubits[0], n)
    if kind == "pauli_y":
        return _embed(_Y, gate.qubits[0], n)
    if kind == "pauli_z":
        return _embed(_Z, gate.qubits[0], n)
    if kind == "cnot":
        control, target = gate.qubits
        return _controlled(_X, control, target, n)
    if kind == "cz":
        control, target = gate.qubits
        return _controlled(_Z, control, target, n)
    if kind == "phase_on_zeros":
        full = np.eye(2**n, dtype=complex)
        full[0, 0] = np.exp(1.0j * gate.angle)
        return full
    raise AssertionError(f"oracle has no matrix for gate kind {kind!r}")


def dense_unitary(circuit):
    """Product of dense gate matrices, last gate leftmost."""
    full = np.eye(2**circuit.n_qubits, dtype=complex)
    for gate in circuit.gates:
        full = dense_gate(gate, circuit.n_qubits) @ full
    return full


def dense_pauli(pauli, n):
    """Dense matrix of a PauliString via the same kron route."""
    ops = [_I2] * n
    for qubit, axis in pauli.ops:
        ops[qubit] = _PAULI[axis.lower()]
    return complex(pauli.coeff) * _kron_chain(ops)


def random_pauli_sum(n, n_terms, rng):
    terms = []
    for _ in range(n_terms):
        support = rng.choice(n, size=rng.integers(1, n + 1), replace=False)
        ops = tuple(
            (int(q), str(rng.choice(["x", "y", "z"]))) for q in sorted(support)
        )
        terms.append(sim.PauliString(ops=ops, coeff=float(rng.uniform(-2.0, 2.0))))
    return sim.PauliSum(terms=tuple(terms))


@pytest.fixture(scope="session")
def library():
    return circuits.load_templates()
