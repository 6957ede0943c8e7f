"""Exact statevector simulation.

States are complex numpy vectors of length 2**n with qubit 0 stored in the
least significant bit of the basis index.  Gate kernels operate on a batch
axis so that thousands of parameter sets can be pushed through a circuit in
one vectorized pass; the single-state entry points are thin wrappers over
the batched ones.

The rotation convention is R_P(theta) = exp(-i * theta * P / 2) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import DegenerateCombinationError  # noqa: F401  (re-export convenience)

ALL_ZEROS = "all_zeros"

_INV_SQRT2 = 1.0 / np.sqrt(2.0)

# Gate kinds the kernel dispatcher understands.  The circuit layer owns the
# enum; the engine matches on the string values so the two modules stay
# import-independent.
_ROTATIONS_1Q = ("rx", "ry", "rz")
_ROTATIONS_2Q = ("crx", "cry", "crz")


# ---------------------------------------------------------------------------
# Pauli operators


@dataclass(frozen=True)
class PauliString:
    """A weighted tensor product of single-qubit Pauli operators.

    ``ops`` holds (qubit, letter) pairs with letter in {"X", "Y", "Z"};
    qubits not listed act as identity.  An empty ``ops`` is the scaled
    identity.
    """

    ops: tuple = ()
    coeff: float = 1.0

    def __post_init__(self):
        ops = tuple(sorted((int(q), str(p).upper()) for q, p in self.ops))
        qubits = [q for q, _ in ops]
        if len(set(qubits)) != len(qubits):
            raise ValueError("duplicate qubit in Pauli string")
        if any(q < 0 for q in qubits):
            raise ValueError("negative qubit index in Pauli string")
        if any(p not in ("X", "Y", "Z") for _, p in ops):
            raise ValueError("Pauli letters must be X, Y or Z")
        if not np.isfinite(self.coeff):
            raise ValueError("Pauli coefficient must be finite")
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "coeff", float(self.coeff))

    @property
    def max_qubit(self):
        return max((q for q, _ in self.ops), default=-1)


@dataclass(frozen=True)
class PauliSum:
    """A real-weighted sum of Pauli strings (Hermitian by construction)."""

    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not all(isinstance(t, PauliString) for t in self.terms):
            raise TypeError("PauliSum terms must be PauliString instances")

    @property
    def max_qubit(self):
        return max((t.max_qubit for t in self.terms), default=-1)


def _parity(values):
    """Bit parity of each entry of an integer array (vectorized)."""
    v = np.asarray(values).astype(np.int64).copy()
    for shift in (32, 16, 8, 4, 2, 1):
        v ^= v >> shift
    return v & 1


def _pauli_masks(pauli, n):
    if pauli.max_qubit >= n:
        raise ValueError("Pauli string acts outside the register")
    xflip = 0
    phase_mask = 0
    n_y = 0
    for q, p in pauli.ops:
        if p in ("X", "Y"):
            xflip |= 1 << q
        if p in ("Y", "Z"):
            phase_mask |= 1 << q
        if p == "Y":
            n_y += 1
    return xflip, phase_mask, n_y


def apply_pauli_string(state, pauli, n=None):
    """Return P|state> for a PauliString P; works on (dim,) or (B, dim)."""
    state = np.asarray(state)
    dim = state.shape[-1]
    if n is None:
        n = dim.bit_length() - 1
    xflip, phase_mask, n_y = _pauli_masks(pauli, n)
    idx = np.arange(dim)
    phase = (1j ** (n_y % 4)) * (1.0 - 2.0 * _parity(idx & phase_mask))
    out = np.empty_like(state, dtype=complex)
    out[..., idx ^ xflip] = state * (pauli.coeff * phase)
    return out


def apply_pauli_sum(state, hamiltonian, n=None):
    """Return H|state> for a PauliSum H."""
    state = np.asarray(state)
    out = np.zeros_like(state, dtype=complex)
    for term in hamiltonian.terms:
        out += apply_pauli_string(state, term, n=n)
    return out


# ---------------------------------------------------------------------------
# Reference states


def init_reference(n, spec=ALL_ZEROS):
    """Build the reference state |phi_0> on n qubits.

    ``spec`` is either ALL_ZEROS or an explicit amplitude sequence of length
    2**n, which must already be normalized (norm within 1e-8 of one).
    """
    if n < 1:
        raise ValueError("need at least one qubit")
    dim = 1 << n
    if isinstance(spec, str):
        if spec != ALL_ZEROS:
            raise ValueError(f"unknown reference spec {spec!r}")
        state = np.zeros(dim, dtype=complex)
        state[0] = 1.0
        return state
    amps = np.asarray(spec, dtype=complex)
    if amps.shape != (dim,):
        raise ValueError(f"expected {dim} amplitudes, got shape {amps.shape}")
    norm = np.linalg.norm(amps)
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"reference amplitudes not normalized (norm={norm:.6g})")
    return amps.copy()


# ---------------------------------------------------------------------------
# Gate kernels (batched, in place on the working array)


def _rot_coeffs(kind, theta):
    """2x2 rotation matrix entries for rx/ry/rz; theta may be scalar or (B,)."""
    half = 0.5 * np.asarray(theta)
    c = np.cos(half)
    s = np.sin(half)
    if kind == "rx":
        return c, -1j * s, -1j * s, c
    if kind == "ry":
        return c, -s, s, c
    # rz
    return c - 1j * s, None, None, c + 1j * s


def _bcast(coef, target_ndim):
    """Reshape a (B,) coefficient array to broadcast over trailing axes."""
    coef = np.asarray(coef)
    if coef.ndim == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (target_ndim - 1))


def _apply_1q(amps, n, q, kind, theta=None):
    batch = amps.shape[0]
    view = amps.reshape(batch, 1 << (n - 1 - q), 2, 1 << q)
    a0 = view[:, :, 0, :]
    a1 = view[:, :, 1, :]
    if kind == "h":
        n0 = (a0 + a1) * _INV_SQRT2
        n1 = (a0 - a1) * _INV_SQRT2
    elif kind in ("x", "pauli_x"):
        n0 = a1.copy()
        n1 = a0.copy()
    elif kind == "pauli_y":
        n0 = -1j * a1
        n1 = 1j * a0
    elif kind == "pauli_z":
        a1 *= -1.0
        return
    elif kind == "rz":
        m00, _, _, m11 = _rot_coeffs(kind, theta)
        a0 *= _bcast(m00, a0.ndim)
        a1 *= _bcast(m11, a1.ndim)
        return
    elif kind in ("rx", "ry"):
        m00, m01, m10, m11 = _rot_coeffs(kind, theta)
        m00 = _bcast(m00, a0.ndim)
        m01 = _bcast(m01, a0.ndim)
        m10 = _bcast(m10, a0.ndim)
        m11 = _bcast(m11, a0.ndim)
        n0 = m00 * a0 + m01 * a1
        n1 = m10 * a0 + m11 * a1
    else:
        raise ValueError(f"unknown single-qubit gate kind {kind!r}")
    view[:, :, 0, :] = n0
    view[:, :, 1, :] = n1


def _control_slab(amps, n, control, target):
    """View of the control=1 subspace plus the axis index of the target bit."""
    hi, lo = (control, target) if control > target else (target, control)
    batch = amps.shape[0]
    view = amps.reshape(
        batch, 1 << (n - 1 - hi), 2, 1 << (hi - lo - 1), 2, 1 << lo
    )
    if control > target:
        return view[:, :, 1], 3
    return view[:, :, :, :, 1], 2


def _apply_2q(amps, n, qubits, kind, theta=None):
    control, target = qubits
    if kind == "cz":
        hi, lo = max(qubits), min(qubits)
        batch = amps.shape[0]
        view = amps.reshape(
            batch, 1 << (n - 1 - hi), 2, 1 << (hi - lo - 1), 2, 1 << lo
        )
        view[:, :, 1, :, 1, :] *= -1.0
        return
    slab, t_axis = _control_slab(amps, n, control, target)
    sl0 = [slice(None)] * slab.ndim
    sl1 = [slice(None)] * slab.ndim
    sl0[t_axis] = 0
    sl1[t_axis] = 1
    sl0, sl1 = tuple(sl0), tuple(sl1)
    a0 = slab[sl0]
    a1 = slab[sl1]
    if kind == "cnot":
        tmp = a0.copy()
        slab[sl0] = a1
        slab[sl1] = tmp
        return
    if kind == "crz":
        m00, _, _, m11 = _rot_coeffs("rz", theta)
        slab[sl0] = a0 * _bcast(m00, a0.ndim)
        slab[sl1] = a1 * _bcast(m11, a1.ndim)
        return
    if kind in ("crx", "cry"):
        m00, m01, m10, m11 = _rot_coeffs(kind[1:], theta)
        n0 = _bcast(m00, a0.ndim) * a0 + _bcast(m01, a0.ndim) * a1
        n1 = _bcast(m10, a0.ndim) * a0 + _bcast(m11, a0.ndim) * a1
        slab[sl0] = n0
        slab[sl1] = n1
        return
    raise ValueError(f"unknown two-qubit gate kind {kind!r}")


def _apply_gate(amps, n, gate, thetas=None):
    """Apply one GateOp to a (B, dim) working array, in place.

    ``thetas`` is the (B, P) slot table used when the gate carries a slot
    index instead of a bound angle.
    """
    kind = getattr(gate.kind, "value", gate.kind)
    if kind == "phase_on_zeros":
        if gate.angle is None:
            raise ValueError("phase gate carries no angle")
        amps[:, 0] *= np.exp(1j * gate.angle)
        return
    angle = None
    if kind in _ROTATIONS_1Q or kind in _ROTATIONS_2Q:
        if gate.angle is not None:
            angle = gate.angle
        elif gate.slot is not None:
            if thetas is None:
                raise ValueError(f"unbound parameter slot {gate.slot}")
            angle = thetas[:, gate.slot]
        else:
            raise ValueError("rotation gate carries neither angle nor slot")
    if len(gate.qubits) == 1:
        _apply_1q(amps, n, gate.qubits[0], kind, angle)
    else:
        _apply_2q(amps, n, gate.qubits, kind, angle)


def run(circuit, state):
    """Apply a fully bound circuit to a single state; returns a new vector."""
    state = np.asarray(state, dtype=complex)
    n = circuit.n_qubits
    if state.shape != (1 << n,):
        raise ValueError("state dimension does not match circuit width")
    amps = state[np.newaxis, :].copy()
    for gate in circuit.gates:
        if getattr(gate, "slot", None) is not None and gate.angle is None:
            raise ValueError(f"unbound parameter slot {gate.slot}")
        _apply_gate(amps, n, gate)
    return amps[0]


def run_batch(circuit, thetas, reference):
    """Run one circuit over a batch of parameter vectors.

    ``thetas`` has shape (B, P) where P is the circuit's parameter count;
    gates bound to fixed angles are broadcast.  Returns a (B, dim) array of
    output states.
    """
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 2:
        raise ValueError("thetas must be a (batch, n_params) array")
    expected = getattr(circuit, "param_count", None)
    if expected is not None and thetas.shape[1] != expected:
        raise ValueError(
            f"circuit has {expected} parameter slots, got {thetas.shape[1]}"
        )
    n = circuit.n_qubits
    reference = np.asarray(reference, dtype=complex)
    amps = np.broadcast_to(reference, (thetas.shape[0], 1 << n)).copy()
    for gate in circuit.gates:
        _apply_gate(amps, n, gate, thetas)
    return amps


# ---------------------------------------------------------------------------
# Measurement primitives


def inner(a, b):
    """Inner product <a|b> with the first argument conjugated."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("state dimensions do not match")
    return complex(np.vdot(a, b))


def expval(state, hamiltonian):
    """Real expectation <s|H|s> of a PauliSum."""
    state = np.asarray(state)
    return float(np.real(np.vdot(state, apply_pauli_sum(state, hamiltonian))))


def matrix_element(a, b, pauli):
    """Complex matrix element <a|P|b> of a single Pauli string."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("state dimensions do not match")
    return complex(np.vdot(a, apply_pauli_string(b, pauli)))


def prob_all_zeros(state):
    """Probability of the all-zeros outcome under a computational measurement."""
    state = np.asarray(state)
    return float(np.abs(state[..., 0]) ** 2)


def rng_stream(*key):
    """A deterministic generator derived from an integer key tuple.

    Independent measurements draw from independent streams keyed by their
    position in the experiment, so results never depend on evaluation order
    or thread count.
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def sample_estimate(exact_value, shots, rng, kind="probability"):
    """Finite-shot estimate of a probability or a Pauli expectation.

    Draws a binomial count at the exact value and returns the empirical
    mean, which is unbiased and deterministic for a given generator state.
    """
    if shots < 1:
        raise ValueError("shots must be a positive integer")
    value = float(exact_value)
    if kind == "probability":
        p = value
        if p < -1e-9 or p > 1.0 + 1e-9:
            raise ValueError(f"probability {p} outside [0, 1]")
        p = min(max(p, 0.0), 1.0)
        return rng.binomial(int(shots), p) / float(shots)
    if kind == "expectation":
        if value < -1.0 - 1e-9 or value > 1.0 + 1e-9:
            raise ValueError(f"expectation {value} outside [-1, 1]")
        p = min(max(0.5 * (1.0 + value), 0.0), 1.0)
        return 2.0 * rng.binomial(int(shots), p) / float(shots) - 1.0
    raise ValueError(f"unknown sample kind {kind!r}")


# ---------------------------------------------------------------------------
# Dense / sparse diagonalization oracle


_DENSE_MAX = 10
_ORACLE_MAX = 14


def _matrix_entries(hamiltonian, n):
    """Yield (rows, cols, data) triples, one per Pauli term."""
    dim = 1 << n
    idx = np.arange(dim)
    for term in hamiltonian.terms:
        xflip, phase_mask, n_y = _pauli_masks(term, n)
        phase = (1j ** (n_y % 4)) * (1.0 - 2.0 * _parity(idx & phase_mask))
        yield idx ^ xflip, idx, term.coeff * phase


def dense_matrix(hamiltonian, n):
    """The 2**n x 2**n dense matrix of a PauliSum (small n only)."""
    if n > _DENSE_MAX:
        raise ValueError(f"dense matrix capped at n={_DENSE_MAX}")
    dim = 1 << n
    mat = np.zeros((dim, dim), dtype=complex)
    for rows, cols, data in _matrix_entries(hamiltonian, n):
        mat[rows, cols] += data
    return mat


def min_eigenvalue(hamiltonian, n):
    """Smallest eigenvalue of a PauliSum on n qubits (n <= 14)."""
    if n > _ORACLE_MAX:
        raise ValueError(f"diagonalization oracle capped at n={_ORACLE_MAX}")
    if n < 1:
        raise ValueError("need at least one qubit")
    if not hamiltonian.terms:
        return 0.0
    if hamiltonian.max_qubit >= n:
        raise ValueError("Hamiltonian acts outside the register")
    if n <= _DENSE_MAX:
        return float(np.linalg.eigvalsh(dense_matrix(hamiltonian, n))[0])
    dim = 1 << n
    rows, cols, data = [], [], []
    for r, c, d in _matrix_entries(hamiltonian, n):
        rows.append(r)
        cols.append(c)
        data.append(d)
    mat = scipy.sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )
    vals = scipy.sparse.linalg.eigsh(mat, k=1, which="SA", return_eigenvectors=False)
    return float(vals[0].real)
