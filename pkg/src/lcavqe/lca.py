"""Linear-combination trial states.

A configuration fixes the member circuits U^i and the shared reference
state; parameters carry the complex combination coefficients c and each
member's rotation angles.  The trial state is sum_i c_i U^i |phi_0> divided
by its norm Omega, and the energy is the Rayleigh quotient built from the
member Gram matrix S and Hamiltonian matrix Hm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import sim
from .circuits import CircuitTemplate, bind
from .errors import DegenerateCombinationError

DEGENERACY_THRESHOLD = 1e-10


@dataclass(frozen=True)
class LcaConfig:
    """member templates, register width and the shared reference state.

    ``reference_prep`` optionally names a bound circuit W with
    W|0...0> = |phi_0>; measurement protocols that project onto the
    reference need it whenever the reference is not ALL_ZEROS.
    """

    members: tuple
    n_qubits: int
    reference: object = sim.ALL_ZEROS
    reference_prep: object = None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("need at least one member ansatz")
        if not all(isinstance(t, CircuitTemplate) for t in self.members):
            raise TypeError("members must be CircuitTemplate instances")
        if any(t.n_qubits != self.n_qubits for t in self.members):
            raise ValueError("all members must share the register width")
        ids = [t.id for t in self.members]
        if len(set(ids)) != len(ids):
            raise ValueError("member ansatz ids must be distinct (ordered set)")

    @classmethod
    def from_library(cls, library, ids, n_qubits, layers, reference=sim.ALL_ZEROS,
                     reference_prep=None):
        members = tuple(library.instantiate(i, n_qubits, layers) for i in ids)
        return cls(members, n_qubits, reference, reference_prep)

    @property
    def size(self):
        return len(self.members)

    @property
    def ids(self):
        return tuple(t.id for t in self.members)

    def reference_state(self):
        return sim.init_reference(self.n_qubits, self.reference)


@dataclass(frozen=True)
class LcaParams:
    """Trainable parameters: complex c per member plus per-member angles."""

    c: np.ndarray
    thetas: tuple

    def __post_init__(self):
        c = np.asarray(self.c, dtype=complex)
        thetas = tuple(np.asarray(t, dtype=float) for t in self.thetas)
        if c.ndim != 1:
            raise ValueError("c must be a vector")
        if len(thetas) != c.shape[0]:
            raise ValueError("one theta vector per member is required")
        if not np.all(np.isfinite(c.view(float))):
            raise ValueError("c entries must be finite")
        if any(not np.all(np.isfinite(t)) for t in thetas):
            raise ValueError("theta entries must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "thetas", thetas)


@dataclass(frozen=True)
class OverlapMatrices:
    """Gram matrix S_ij = <psi_i|psi_j> and Hm_ij = <psi_i|H|psi_j>."""

    S: np.ndarray
    Hm: np.ndarray


def validate_params(config, params):
    if params.c.shape != (config.size,):
        raise ValueError("c length does not match member count")
    for template, theta in zip(config.members, params.thetas):
        if theta.shape != (template.param_count,):
            raise ValueError(
                f"ansatz {template.id} expects {template.param_count} angles, "
                f"got {theta.shape}"
            )


def random_params(config, rng=None, c=None):
    """Default initialization: angles uniform on [0, 2pi), c all ones."""
    rng = rng if rng is not None else np.random.default_rng()
    thetas = tuple(
        rng.uniform(0.0, 2.0 * np.pi, t.param_count) for t in config.members
    )
    if c is None:
        c = np.ones(config.size, dtype=complex)
    return LcaParams(np.asarray(c, dtype=complex), thetas)


def member_circuit(config, params, i):
    """The bound circuit of member i."""
    if not 0 <= i < config.size:
        raise IndexError(f"member index {i} out of range")
    return bind(config.members[i], params.thetas[i])


def member_state(config, params, i):
    """U^i(theta^i)|phi_0> via the statevector engine."""
    validate_params(config, params)
    return sim.run(member_circuit(config, params, i), config.reference_state())


def member_states(config, params):
    """All member states stacked as an (M, 2**n) array."""
    validate_params(config, params)
    reference = config.reference_state()
    return np.stack(
        [sim.run(member_circuit(config, params, i), reference) for i in range(config.size)]
    )


def build_matrices(config, params, hamiltonian):
    """Exact S and Hm from pairwise inner products of the member states."""
    states = member_states(config, params)
    h_states = sim.apply_pauli_sum(states, hamiltonian, n=config.n_qubits)
    s_mat = states.conj() @ states.T
    hm_mat = states.conj() @ h_states.T
    return OverlapMatrices(S=s_mat, Hm=hm_mat)


def normalization(c, s_mat):
    """Omega^2 = c'Sc; errors out when the combination destructively cancels."""
    c = np.asarray(c, dtype=complex)
    omega2 = complex(c.conj() @ s_mat @ c)
    if abs(omega2.imag) > 1e-10 * max(1.0, abs(omega2.real)):
        raise ValueError("c'Sc is not real; S is not Hermitian")
    if omega2.real < DEGENERACY_THRESHOLD:
        raise DegenerateCombinationError(
            f"combination norm Omega^2 = {omega2.real:.3e} below threshold"
        )
    return float(omega2.real)


def combined_state(config, params):
    """(1/Omega) sum_i c_i |psi_i>, normalized to one."""
    states = member_states(config, params)
    raw = params.c @ states
    omega2 = float(np.real(np.vdot(raw, raw)))
    if omega2 < DEGENERACY_THRESHOLD:
        raise DegenerateCombinationError(
            f"combination norm Omega^2 = {omega2:.3e} below threshold"
        )
    return raw / np.sqrt(omega2)


def energy_from_matrices(matrices, c):
    """Rayleigh quotient (c'Hm c)/(c'S c)."""
    omega2 = normalization(c, matrices.S)
    c = np.asarray(c, dtype=complex)
    num = complex(c.conj() @ matrices.Hm @ c)
    return float(num.real) / omega2


def energy_exact(config, params, hamiltonian):
    """Exact LCA energy from freshly built matrices."""
    return energy_from_matrices(build_matrices(config, params, hamiltonian), params.c)


def gauge_transform(params, alphas):
    """Rotate each coefficient's phase: c_i -> c_i e^{i alpha_i}."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.shape != params.c.shape:
        raise ValueError("one phase per member is required")
    return LcaParams(params.c * np.exp(1j * alphas), params.thetas)


def apply_gauge_frame(matrices, alphas):
    """Congruence-transform S and Hm by the diagonal phases e^{i alpha}.

    Entry (i, j) picks up e^{i(alpha_i - alpha_j)}.  Together with
    gauge_transform of c by the same alphas this leaves the Rayleigh
    quotient unchanged, which is the testable content of the unknown-phase
    argument.
    """
    alphas = np.asarray(alphas, dtype=float)
    phases = np.exp(1j * alphas)
    frame = phases[:, None] * phases.conj()[None, :]
    return OverlapMatrices(S=frame * matrices.S, Hm=frame * matrices.Hm)


def optimal_coefficients(matrices, rank_tolerance=1e-12):
    """Lowest generalized eigenpair of (Hm, S); a baseline for fixed angles.

    S may be singular (identical members), so the solve runs in the
    canonically orthogonalized subspace spanned by eigenvectors of S with
    eigenvalues above rank_tolerance * max eigenvalue.
    """
    s_vals, s_vecs = scipy.linalg.eigh(matrices.S)
    keep = s_vals > rank_tolerance * max(s_vals.max(), 1e-300)
    if not np.any(keep):
        raise DegenerateCombinationError("S has no numerically nonzero eigenvalues")
    basis = s_vecs[:, keep] / np.sqrt(s_vals[keep])
    reduced = basis.conj().T @ matrices.Hm @ basis
    vals, vecs = scipy.linalg.eigh(reduced)
    c = basis @ vecs[:, 0]
    return float(vals[0]), c
