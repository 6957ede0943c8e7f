"""Benchmark Hamiltonian, analytic gradients, and gradient-descent training.

The cost is the Rayleigh quotient E(c, theta) = (c^H Hm c)/(c^H S c) of the
combination matrices.  Gradients use the full quotient rule for both the
coefficients and the circuit angles; angle derivatives insert the rotation
generator right after its gate (derivative state = -i/2 times the inserted
circuit's output) and combine the resulting overlap rows with the same
quotient rule.

Both the cost and the gradients run in two modes: EXACT works on
statevector inner products; PCM works on the measurement-protocol
reconstructions, whose gauge frame is absorbed by the trained coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import pcm as _pcm
from . import sim
from .circuits import bind, insert_generator
from .errors import DegenerateCombinationError, TrainingAbortedError
from .lca import (
    LcaParams,
    OverlapMatrices,
    apply_gauge_frame,
    energy_from_matrices,
    normalization,
    validate_params,
)

EXACT = "exact"
PCM = "pcm"

_MODES = (EXACT, PCM)


@dataclass(frozen=True)
class XYModelSpec:
    """Transverse-field XY ring: nearest-neighbor XX/YY plus X and Z fields."""

    n_sites: int
    j_xx: float = 1.0
    j_yy: float = 1.0
    j_x: float = 0.5
    j_z: float = 0.5

    def __post_init__(self):
        if self.n_sites < 2:
            raise ValueError("the ring needs at least two sites")


def xy_hamiltonian(spec):
    """Pauli-sum Hamiltonian of the XY ring.

    The bond sum runs over i = 1..N with closure X_{N+1} = X_1, taken
    literally: at N = 2 the single physical bond appears twice (once per
    direction), doubling its weight.
    """
    n = spec.n_sites
    terms = []
    for i in range(n):
        j = (i + 1) % n
        if spec.j_xx != 0.0:
            terms.append(sim.PauliString(ops=((i, "X"), (j, "X")), coeff=spec.j_xx))
        if spec.j_yy != 0.0:
            terms.append(sim.PauliString(ops=((i, "Y"), (j, "Y")), coeff=spec.j_yy))
    for i in range(n):
        if spec.j_x != 0.0:
            terms.append(sim.PauliString(ops=((i, "X"),), coeff=spec.j_x))
    for i in range(n):
        if spec.j_z != 0.0:
            terms.append(sim.PauliString(ops=((i, "Z"),), coeff=spec.j_z))
    return sim.PauliSum(terms=tuple(terms))


# ---------------------------------------------------------------------------
# Cost and gradients


def _check_mode(mode):
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {_MODES}")


class _ExactWorkspace:
    """Per-configuration scratch: unbound circuits and the reference state."""

    def __init__(self, config):
        self.config = config
        self.reference = config.reference_state()
        self.unbound = [t.circuit() for t in config.members]

    def bound_circuits(self, params):
        return [bind(circ, th) for circ, th in zip(self.unbound, params.thetas)]

    def states(self, bound):
        return np.stack([sim.run(c, self.reference) for c in bound])

    def matrices(self, states, h_states):
        return OverlapMatrices(
            S=states.conj() @ states.T, Hm=states.conj() @ h_states.T
        )


def _exact_matrices(config, params, hamiltonian, gauge_frame=None):
    ws = _ExactWorkspace(config)
    bound = ws.bound_circuits(params)
    states = ws.states(bound)
    h_states = np.stack([
        sim.apply_pauli_sum(s, hamiltonian, config.n_qubits) for s in states
    ])
    matrices = ws.matrices(states, h_states)
    if gauge_frame is not None:
        matrices = apply_gauge_frame(matrices, gauge_frame)
    return matrices


def cost(config, params, hamiltonian, mode=EXACT, pcm_settings=None,
         gauge_frame=None):
    """The LCA energy under the requested evaluation mode."""
    _check_mode(mode)
    validate_params(config, params)
    if mode == PCM:
        return _pcm.energy_pcm(config, params, hamiltonian, pcm_settings)
    matrices = _exact_matrices(config, params, hamiltonian, gauge_frame)
    return energy_from_matrices(matrices, params.c)


def grad_c_from_matrices(matrices, c):
    """Quotient-rule gradient in the interleaved (Re c_i, Im c_i) layout."""
    c = np.asarray(c, dtype=complex)
    den = normalization(c, matrices.S)
    hc = matrices.Hm @ c
    sc = matrices.S @ c
    energy = float(np.real(np.vdot(c, hc))) / den
    gc = 2.0 * (hc - energy * sc) / den
    grad = np.empty(2 * len(c))
    grad[0::2] = gc.real
    grad[1::2] = gc.imag
    return grad, energy


def grad_c(config, params, hamiltonian, mode=EXACT, pcm_settings=None,
           gauge_frame=None):
    """Gradient of the cost with respect to (Re c_i, Im c_i), interleaved."""
    _check_mode(mode)
    validate_params(config, params)
    if mode == PCM:
        matrices, _ = _pcm.pcm_matrices(config, params, hamiltonian, pcm_settings)
    else:
        matrices = _exact_matrices(config, params, hamiltonian, gauge_frame)
    return grad_c_from_matrices(matrices, params.c)[0]


def _combine_rows(c, energy, den, ds_row, dh_row, i):
    """One angle's quotient-rule derivative from its overlap rows."""
    d_num = 2.0 * float(np.real(np.conj(c[i]) * np.dot(dh_row, c)))
    d_den = 2.0 * float(np.real(np.conj(c[i]) * np.dot(ds_row, c)))
    return (d_num - energy * d_den) / den


def _exact_gradient_pieces(config, params, hamiltonian, gauge_frame=None):
    """Matrices plus per-slot derivative overlap rows, all exact."""
    ws = _ExactWorkspace(config)
    bound = ws.bound_circuits(params)
    states = ws.states(bound)
    h_states = np.stack([
        sim.apply_pauli_sum(s, hamiltonian, config.n_qubits) for s in states
    ])
    matrices = ws.matrices(states, h_states)
    frame = None
    if gauge_frame is not None:
        frame = np.exp(1j * np.asarray(gauge_frame, dtype=float))
        matrices = apply_gauge_frame(matrices, gauge_frame)
    ds = []
    dh = []
    for i, circ in enumerate(bound):
        ds_i = []
        dh_i = []
        for slot in range(len(circ.slot_positions)):
            d_circ, scalar = insert_generator(circ, slot)
            d_state = sim.run(d_circ, ws.reference)
            row_s = np.conj(scalar) * (states @ d_state.conj())
            row_h = np.conj(scalar) * (h_states @ d_state.conj())
            if frame is not None:
                gauge = frame[i] * np.conj(frame)
                row_s = row_s * gauge
                row_h = row_h * gauge
            ds_i.append(row_s)
            dh_i.append(row_h)
        ds.append(ds_i)
        dh.append(dh_i)
    return matrices, ds, dh


def _theta_grad_from_rows(c, matrices, ds, dh):
    den = normalization(c, matrices.S)
    energy = float(np.real(np.vdot(c, matrices.Hm @ c))) / den
    out = []
    for i in range(len(c)):
        for row_s, row_h in zip(ds[i], dh[i]):
            out.append(_combine_rows(c, energy, den, row_s, row_h, i))
    return np.array(out), energy


def grad_theta(config, params, hamiltonian, mode=EXACT, pcm_settings=None,
               gauge_frame=None):
    """Gradient of the cost with respect to all circuit angles (flat,
    member-major, slots in layer order).

    Every parameterized gate must be generated by a single Pauli string;
    controlled rotations are rejected.  In PCM mode the derivative overlaps
    come from the protocol reconstructions with the frame held fixed at the
    current angles, so the result is the exact gradient evaluated at the
    gauge-shifted coefficients the protocol works with.
    """
    _check_mode(mode)
    validate_params(config, params)
    if mode == PCM:
        matrices, _, ds, dh = _pcm.derivative_rows(
            config, params, hamiltonian, pcm_settings
        )
    else:
        matrices, ds, dh = _exact_gradient_pieces(
            config, params, hamiltonian, gauge_frame
        )
    return _theta_grad_from_rows(params.c, matrices, ds, dh)[0]


def split_theta_grad(config, flat_grad):
    """Split a flat angle gradient into per-member arrays."""
    out = []
    pos = 0
    for t in config.members:
        out.append(np.asarray(flat_grad[pos:pos + t.param_count]))
        pos += t.param_count
    if pos != len(flat_grad):
        raise ValueError("gradient length does not match the configuration")
    return out


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class OptimizerConfig:
    """Plain gradient descent settings.

    ``c_init`` is None (all ones) or an explicit complex vector;
    ``theta_init`` is None (uniform [0, 2pi) drawn from ``seed``) or a list
    of per-member angle arrays.
    """

    learning_rate: float
    steps: int
    mode: str = EXACT
    c_init: object = None
    theta_init: object = None
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ValueError("learning rate must be finite and nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        _check_mode(self.mode)


@dataclass(frozen=True)
class TrainTrace:
    """Energies before each update plus the final point.

    ``energies`` has ``steps + 1`` entries (the last is the final energy);
    ``grad_norms`` has one entry per update step.
    """

    energies: np.ndarray
    grad_norms: np.ndarray
    final_params: LcaParams
    final_energy: float

    def __post_init__(self):
        object.__setattr__(self, "energies", np.asarray(self.energies, dtype=float))
        object.__setattr__(self, "grad_norms", np.asarray(self.grad_norms, dtype=float))
        if not np.all(np.isfinite(self.energies)):
            raise ValueError("trace energies must be finite")


def initial_params(config, optimizer):
    """Resolve the optimizer's initialization into LcaParams."""
    m = config.size
    if optimizer.c_init is None:
        c = np.ones(m, dtype=complex)
    else:
        c = np.asarray(optimizer.c_init, dtype=complex)
    rng = sim.rng_stream(optimizer.seed, 17)
    if optimizer.theta_init is None:
        thetas = [
            rng.uniform(0.0, 2.0 * np.pi, size=t.param_count)
            for t in config.members
        ]
    else:
        thetas = [np.asarray(t, dtype=float) for t in optimizer.theta_init]
    return LcaParams(c=c, thetas=thetas)


def _step_pieces(config, params, hamiltonian, mode, pcm_settings, gauge_frame):
    """(matrices, ds, dh) for one descent step under the requested mode."""
    if mode == PCM:
        matrices, _, ds, dh = _pcm.derivative_rows(
            config, params, hamiltonian, pcm_settings
        )
        return matrices, ds, dh
    return _exact_gradient_pieces(config, params, hamiltonian, gauge_frame)


def train(config, hamiltonian, optimizer, pcm_settings=None, gauge_frame=None):
    """Plain gradient descent on {Re c, Im c, theta} with a fixed rate.

    A degenerate combination encountered mid-run aborts with the step index
    and the energies recorded so far attached to the exception.
    """
    params = initial_params(config, optimizer)
    validate_params(config, params)
    if optimizer.mode == PCM and pcm_settings is None:
        pcm_settings = _pcm.PcmSettings()
    energies = []
    grad_norms = []
    step = 0
    try:
        for step in range(optimizer.steps):
            settings = pcm_settings
            if settings is not None and settings.shots is not None:
                step_seed = int(sim.rng_stream(settings.seed, 1000003, step).integers(2 ** 31))
                settings = replace(settings, seed=step_seed)
            matrices, ds, dh = _step_pieces(
                config, params, hamiltonian, optimizer.mode, settings, gauge_frame
            )
            theta_grad, energy = _theta_grad_from_rows(params.c, matrices, ds, dh)
            c_grad, _ = grad_c_from_matrices(matrices, params.c)
            energies.append(energy)
            grad_norms.append(float(np.sqrt(
                np.sum(theta_grad ** 2) + np.sum(c_grad ** 2)
            )))
            gc = c_grad[0::2] + 1j * c_grad[1::2]
            new_c = params.c - optimizer.learning_rate * gc
            splits = split_theta_grad(config, theta_grad)
            new_thetas = [
                th - optimizer.learning_rate * g
                for th, g in zip(params.thetas, splits)
            ]
            params = LcaParams(c=new_c, thetas=new_thetas)
        final_energy = cost(
            config, params, hamiltonian, optimizer.mode,
            pcm_settings=pcm_settings, gauge_frame=gauge_frame,
        )
    except DegenerateCombinationError as exc:
        raise TrainingAbortedError(
            f"combination became degenerate at step {step}: {exc}",
            step=step, energies=energies,
        ) from exc
    energies.append(final_energy)
    return TrainTrace(
        energies=np.array(energies),
        grad_norms=np.array(grad_norms),
        final_params=params,
        final_energy=float(final_energy),
    )


def improvement_L(e_lca, member_energies, e_ground):
    """Fraction of the best member's remaining energy gap closed by the
    combination; 1 means the combination reached the ground energy, negative
    means it did worse than the best member.
    """
    members = list(member_energies)
    if not members:
        raise ValueError("need at least one member energy")
    best = min(members)
    gap = abs(best - e_ground)
    if gap == 0:
        raise ValueError("best member already at the ground energy")
    return (best - e_lca) / gap
