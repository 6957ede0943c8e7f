"""Ancilla-free reconstruction of member overlaps and matrix elements.

All cross terms <psi_i|psi_j> and <psi_i|P|psi_j> are recovered from plain
projective probabilities and Pauli expectations of circuits that contain the
reference-projector phase gate G(x) = I - x|phi_0><phi_0| with |1 - x| = 1.
The reconstruction is phase-blind: member k is only ever determined up to
the phase alpha_k = arg<psi_a|psi_k> relative to an anchor member a, so
every returned off-diagonal carries the gauge factor e^{i alpha_i} ...
e^{-i alpha_j}.  That frame is harmless for the Rayleigh quotient because
it can be absorbed into the combination coefficients.

Derivative overlaps <dpsi_i|psi_j> are reconstructed the same way, using
quarter-turn generator insertions to build interference states whose
overlaps cannot all vanish at once; see ``derivative_rows``.

Every protocol circuit is composed from "full" member circuits (reference
preparation followed by the bound ansatz).  Written that way, the
conjugation of the phase gate into the reference basis and the final
rotation back to the computational basis both fall out of the adjacent
adjoints, so the gate list needs no special cases for a non-trivial
reference state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import sim
from .circuits import (
    Circuit,
    adjoint,
    concat,
    generator_of,
    insert_generator,
    insert_quarter_rotation,
    phase_on_zeros,
    prefix_through_slot,
)
from .errors import GaugeUndefinedError, UnstableDivisionError
from .lca import (
    OverlapMatrices,
    energy_from_matrices,
    member_circuit,
    member_states,
    validate_params,
)

_SQRT2 = np.sqrt(2.0)


def _check_phase_value(x):
    x = complex(x)
    if abs(abs(1.0 - x) - 1.0) > 1e-12:
        raise ValueError(f"x = {x} does not satisfy |1 - x| = 1")
    return x


@dataclass(frozen=True)
class PcmSettings:
    """Measurement-protocol configuration.

    ``shots = None`` evaluates every probability and expectation exactly;
    an integer turns on binomial sampling with that many shots per circuit,
    drawn from streams keyed by (seed, measurement identity) so results do
    not depend on evaluation order.
    """

    x_values: tuple = (2.0 + 0.0j, 1.0 - 1.0j)
    shots: int = None
    seed: int = 0
    gauge_tolerance: float = 1e-6
    division_tolerance: float = 1e-6
    anchor: int = 0
    reanchor: bool = False

    def __post_init__(self):
        xs = tuple(_check_phase_value(x) for x in self.x_values)
        if len(xs) != 2:
            raise ValueError("exactly two x values are required")
        det = np.conj(xs[0]) * xs[1] - xs[0] * np.conj(xs[1])
        if abs(det) < 1e-9:
            raise ValueError("x values give a singular reconstruction system")
        object.__setattr__(self, "x_values", xs)
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be None or a positive integer")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if self.anchor < 0:
            raise ValueError("anchor must be a member index")

    @property
    def mode(self):
        return "exact" if self.shots is None else "shots"


@dataclass
class PcmRecord:
    """Audit trail of one matrix reconstruction."""

    anchor: int = 0
    r0i: np.ndarray = None
    pair_overlaps: np.ndarray = None
    cross: np.ndarray = None
    pauli_cross: dict = field(default_factory=dict)
    s_prime: np.ndarray = None
    hm_prime: np.ndarray = None
    conjugate_residual: float = 0.0
    x_values: tuple = ()
    shots: int = None
    seed: int = 0

    def to_json(self, **dump_kwargs):
        def _c(z):
            return [float(np.real(z)), float(np.imag(z))]

        def encode(value):
            if value is None:
                return None
            arr = np.asarray(value)
            if np.iscomplexobj(arr):
                return [[_c(v) for v in row] for row in arr]
            return arr.tolist()

        payload = {
            "anchor": self.anchor,
            "r0i": None if self.r0i is None else np.asarray(self.r0i).tolist(),
            "pair_overlaps": encode(self.pair_overlaps),
            "cross": encode(self.cross),
            "pauli_cross": {
                f"{i},{j},{s}": _c(v) for (i, j, s), v in self.pauli_cross.items()
            },
            "s_prime": encode(self.s_prime),
            "hm_prime": encode(self.hm_prime),
            "conjugate_residual": self.conjugate_residual,
            "x_values": [_c(x) for x in self.x_values],
            "shots": self.shots,
            "seed": self.seed,
        }
        return json.dumps(payload, **dump_kwargs)


def _solve_xpair(x1, x2, r1, r2):
    """Solve [[conj(x1), x1], [conj(x2), x2]] (u, v)^T = (r1, r2)^T.

    Each measured residual is linear in a conjugate pair of unknown triple
    products; the default x values make the system well conditioned
    (determinant -4i).
    """
    det = np.conj(x1) * x2 - x1 * np.conj(x2)
    u = (r1 * x2 - r2 * x1) / det
    v = (np.conj(x1) * r2 - np.conj(x2) * r1) / det
    return u, v


class _Protocol:
    """One reconstruction session: bound circuits plus a measurement cache.

    The cache is keyed by the measurement identity tuples that also seed
    the shot-noise streams, so asking for the same quantity twice reuses
    one simulated (or sampled) value.
    """

    def __init__(self, config, params, settings):
        validate_params(config, params)
        self.config = config
        self.params = params
        self.settings = settings
        self.n = config.n_qubits
        self._zero = sim.init_reference(self.n, sim.ALL_ZEROS)
        prep = None
        if not (isinstance(config.reference, str) and config.reference == sim.ALL_ZEROS):
            prep = config.reference_prep
            if prep is None:
                raise ValueError(
                    "a reference_prep circuit is required for projective "
                    "protocols with a non-all-zeros reference"
                )
            produced = sim.run(prep, self._zero)
            if np.linalg.norm(produced - config.reference_state()) > 1e-8:
                raise ValueError("reference_prep does not prepare the reference state")
        self.prep = prep
        self.full = tuple(
            self.with_prep(member_circuit(config, params, i))
            for i in range(config.size)
        )
        self._cache = {}

    # -- circuit assembly ---------------------------------------------------

    def with_prep(self, bound):
        return concat(self.prep, bound) if self.prep is not None else bound

    def _phase_circuit(self, x):
        theta = float(np.angle(1.0 - _check_phase_value(x)))
        return Circuit(self.n, (phase_on_zeros(theta),), ())

    def _x_key(self, x):
        for idx, known in enumerate(self.settings.x_values):
            if x == known:
                return idx
        return 1000 + (int(round(np.angle(1.0 - complex(x)) * 1e9)) & 0x7FFFFFFF)

    # -- measurements (cached, optionally sampled) ---------------------------

    def _measure_prob(self, circuit, key):
        if key in self._cache:
            return self._cache[key]
        value = sim.prob_all_zeros(sim.run(circuit, self._zero))
        if self.settings.shots is not None:
            value = sim.sample_estimate(
                value, self.settings.shots,
                sim.rng_stream(self.settings.seed, *key), "probability",
            )
        self._cache[key] = value
        return value

    def _measure_exp(self, circuit, pauli_bare, key):
        if key in self._cache:
            return self._cache[key]
        state = sim.run(circuit, self._zero)
        value = float(np.real(sim.matrix_element(state, state, pauli_bare)))
        if self.settings.shots is not None:
            value = sim.sample_estimate(
                value, self.settings.shots,
                sim.rng_stream(self.settings.seed, *key), "expectation",
            )
        self._cache[key] = value
        return value

    def overlap(self, i, j):
        """Tr(rho_i rho_j): run one member, invert the other, project."""
        if i == j:
            return 1.0
        a, b = (i, j) if i < j else (j, i)
        return self.overlap_circuits(self.full[a], self.full[b], (1, a, b))

    def overlap_circuits(self, full_a, full_b, key):
        return self._measure_prob(concat(full_a, adjoint(full_b)), key)

    def triple(self, anchor_circ, refl_circ, target_circ, x, key):
        """All-zeros probability of {anchor, refl^dag, G(x), refl, target^dag}."""
        circuit = concat(
            anchor_circ, adjoint(refl_circ), self._phase_circuit(x),
            refl_circ, adjoint(target_circ),
        )
        return self._measure_prob(circuit, key)

    def pauli_triple(self, state_circ, refl_circ, x, pauli_bare, key):
        """Pauli expectation after {state, refl^dag, G(x), refl}."""
        circuit = concat(
            state_circ, adjoint(refl_circ), self._phase_circuit(x), refl_circ
        )
        return self._measure_exp(circuit, pauli_bare, key)

    def direct_exp(self, circ, pauli_bare, key):
        return self._measure_exp(circ, pauli_bare, key)

    # -- reconstruction loops -------------------------------------------------

    def solve_loop(self, anchor_circ, refl_idx, target_idx, r_anchor_target,
                   r_refl_anchor, r_refl_target, key_prefix):
        """Reconstruct Tr(rho_anchor rho_refl rho_target) from two settings.

        The returned pair (A, B) satisfies A = Tr(rho_a rho_r rho_t) and
        B = Tr(rho_r rho_a rho_t); in exact mode B = conj(A), which callers
        may use as a consistency diagnostic.
        """
        x1, x2 = self.settings.x_values
        residuals = []
        for x in (x1, x2):
            key = key_prefix + (self._x_key(x),)
            t = self.triple(anchor_circ, self.full[refl_idx],
                            self.full[target_idx], x, key)
            residuals.append(
                r_anchor_target + abs(x) ** 2 * r_refl_anchor * r_refl_target - t
            )
        return _solve_xpair(x1, x2, residuals[0], residuals[1])

    def solve_pauli_loop(self, state_circ, refl_idx, pauli_bare, t_state,
                         r_refl_state, t_refl, key_prefix):
        """Reconstruct Tr(rho_refl rho_state P) from two phase settings.

        Mirrors ``solve_loop`` with the roles of the two unknowns swapped:
        here the wanted product multiplies x rather than conj(x).
        """
        x1, x2 = self.settings.x_values
        residuals = []
        for x in (x1, x2):
            key = key_prefix + (self._x_key(x),)
            t = self.pauli_triple(state_circ, self.full[refl_idx], x, pauli_bare, key)
            residuals.append(t_state + abs(x) ** 2 * r_refl_state * t_refl - t)
        u, v = _solve_xpair(x1, x2, residuals[0], residuals[1])
        return v, u

    # -- gauge bookkeeping ----------------------------------------------------

    def member_gauge_probs(self, anchor):
        """Tr(rho_anchor rho_k) for every member k (1.0 at the anchor)."""
        return np.array([self.overlap(anchor, k) for k in range(self.config.size)])

    def check_gauge(self, r_anchor, anchor):
        bad = [k for k, r in enumerate(r_anchor) if r < self.settings.gauge_tolerance]
        if bad:
            raise GaugeUndefinedError(
                f"members {bad} are orthogonal to anchor {anchor} "
                f"(overlap below {self.settings.gauge_tolerance})"
            )


def _bare_terms(hamiltonian):
    """Split PauliSum terms into (coefficient, unit-coefficient string) pairs."""
    return [
        (term.coeff, sim.PauliString(ops=term.ops, coeff=1.0))
        for term in hamiltonian.terms
    ]


# ---------------------------------------------------------------------------
# Public operations


def measure_r0i(config, params, i, settings=None):
    """Tr(rho_anchor rho_i) as an all-zeros probability."""
    settings = settings or PcmSettings()
    proto = _Protocol(config, params, settings)
    return proto.overlap(settings.anchor, i)


def triple_raw(config, params, i, j, x, settings=None):
    """Raw probability of the five-stage phase-gate circuit for pair (i, j)."""
    settings = settings or PcmSettings()
    if i == j:
        raise ValueError("triple circuits need distinct members")
    proto = _Protocol(config, params, settings)
    anchor = settings.anchor
    key = (2, anchor, i, j, proto._x_key(x))
    return proto.triple(proto.full[anchor], proto.full[i], proto.full[j], x, key)


def pauli_triple_raw(config, params, i, j, pauli, x, settings=None):
    """Raw Pauli expectation of the phase-gate circuit {U_i, U_j^dag, G, U_j}."""
    settings = settings or PcmSettings()
    if i == j:
        raise ValueError("triple circuits need distinct members")
    proto = _Protocol(config, params, settings)
    bare = sim.PauliString(ops=pauli.ops, coeff=1.0)
    key = (3, i, j, 0, proto._x_key(x))
    return pauli.coeff * proto.pauli_triple(proto.full[i], proto.full[j], x, bare, key)


def solve_cross_overlap(config, params, i, j, settings=None):
    """Gauge-fixed overlap <psi_i|psi_j> reconstructed from probabilities."""
    settings = settings or PcmSettings()
    proto = _Protocol(config, params, settings)
    return _cross_overlap(proto, settings.anchor, i, j)


def _cross_overlap(proto, anchor, i, j):
    tol = proto.settings.gauge_tolerance
    if i == j:
        return 1.0 + 0.0j
    r_i = proto.overlap(anchor, i)
    r_j = proto.overlap(anchor, j)
    if r_i < tol or r_j < tol:
        raise GaugeUndefinedError(
            f"pair ({i}, {j}): anchor overlaps {r_i:.3e}, {r_j:.3e} "
            f"below tolerance {tol}"
        )
    if i == anchor:
        return complex(np.sqrt(r_j))
    if j == anchor:
        return complex(np.sqrt(r_i))
    r_ij = proto.overlap(i, j)
    a_val, _ = proto.solve_loop(
        proto.full[anchor], i, j,
        r_anchor_target=r_j, r_refl_anchor=r_i, r_refl_target=r_ij,
        key_prefix=(2, anchor, i, j),
    )
    return a_val / np.sqrt(r_i * r_j)


def solve_cross_pauli(config, params, i, j, pauli, settings=None):
    """Gauge-fixed <psi_i|P|psi_j> via phase-gate circuits and one division."""
    settings = settings or PcmSettings()
    proto = _Protocol(config, params, settings)
    bare = sim.PauliString(ops=pauli.ops, coeff=1.0)
    value = _cross_pauli(proto, settings.anchor, i, j, bare, term_idx=0)
    return pauli.coeff * value


def _cross_pauli(proto, anchor, i, j, pauli_bare, term_idx):
    if not pauli_bare.ops:
        # identity string: the matrix element is the overlap itself
        return _cross_overlap(proto, anchor, i, j)
    if i == j:
        return complex(proto.direct_exp(proto.full[i], pauli_bare, (4, i, term_idx)))
    s_ij = _cross_overlap(proto, anchor, i, j)
    s_ji = np.conj(s_ij)
    if abs(s_ji) < proto.settings.division_tolerance:
        raise UnstableDivisionError(
            f"|<psi_{j}|psi_{i}>| = {abs(s_ji):.3e} too small to divide by"
        )
    t_i = proto.direct_exp(proto.full[i], pauli_bare, (4, i, term_idx))
    t_j = proto.direct_exp(proto.full[j], pauli_bare, (4, j, term_idx))
    r_ij = proto.overlap(i, j)
    a_val, _ = proto.solve_pauli_loop(
        proto.full[i], j, pauli_bare,
        t_state=t_i, r_refl_state=r_ij, t_refl=t_j,
        key_prefix=(3, i, j, term_idx),
    )
    return a_val / s_ji


def _assemble(proto, hamiltonian, anchor):
    """Reconstruct S' and Hm' in the gauge anchored at the given member."""
    config = proto.config
    m = config.size
    settings = proto.settings
    r_anchor = proto.member_gauge_probs(anchor)
    proto.check_gauge(r_anchor, anchor)

    pair = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            pair[i, j] = pair[j, i] = proto.overlap(i, j)

    s_prime = np.eye(m, dtype=complex)
    cross = np.zeros((m, m), dtype=complex)
    np.fill_diagonal(cross, r_anchor.astype(complex))
    cross[anchor, :] = r_anchor
    cross[:, anchor] = r_anchor
    residual = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            if anchor in (i, j):
                other = j if i == anchor else i
                s_prime[i, j] = np.sqrt(r_anchor[other])
                s_prime[j, i] = s_prime[i, j]
                continue
            a_val, b_val = proto.solve_loop(
                proto.full[anchor], i, j,
                r_anchor_target=r_anchor[j],
                r_refl_anchor=r_anchor[i],
                r_refl_target=pair[i, j],
                key_prefix=(2, anchor, i, j),
            )
            residual = max(residual, float(abs(b_val - np.conj(a_val))))
            cross[i, j] = a_val
            cross[j, i] = np.conj(a_val)
            denom = np.sqrt(r_anchor[i] * r_anchor[j])
            s_prime[i, j] = a_val / denom
            s_prime[j, i] = np.conj(s_prime[i, j])

    terms = _bare_terms(hamiltonian)
    hm_prime = np.zeros((m, m), dtype=complex)
    pauli_cross = {}
    for i in range(m):
        for s_idx, (coeff, bare) in enumerate(terms):
            if not bare.ops:
                hm_prime[i, i] += coeff
                continue
            hm_prime[i, i] += coeff * proto.direct_exp(
                proto.full[i], bare, (4, i, s_idx)
            )
    for i in range(m):
        for j in range(i + 1, m):
            s_ji = np.conj(s_prime[i, j])
            entry = 0.0 + 0.0j
            for s_idx, (coeff, bare) in enumerate(terms):
                if not bare.ops:
                    entry += coeff * s_prime[i, j]
                    continue
                if abs(s_ji) < settings.division_tolerance:
                    raise UnstableDivisionError(
                        f"pair ({i}, {j}) too close to orthogonal for "
                        "matrix-element reconstruction"
                    )
                t_i = proto.direct_exp(proto.full[i], bare, (4, i, s_idx))
                t_j = proto.direct_exp(proto.full[j], bare, (4, j, s_idx))
                a_val, _ = proto.solve_pauli_loop(
                    proto.full[i], j, bare,
                    t_state=t_i, r_refl_state=pair[i, j], t_refl=t_j,
                    key_prefix=(3, i, j, s_idx),
                )
                pauli_cross[(i, j, s_idx)] = a_val
                entry += coeff * (a_val / s_ji)
            hm_prime[i, j] = entry
            hm_prime[j, i] = np.conj(entry)

    record = PcmRecord(
        anchor=anchor,
        r0i=r_anchor,
        pair_overlaps=pair,
        cross=cross,
        pauli_cross=pauli_cross,
        s_prime=s_prime,
        hm_prime=hm_prime,
        conjugate_residual=residual,
        x_values=settings.x_values,
        shots=settings.shots,
        seed=settings.seed,
    )
    return OverlapMatrices(S=s_prime, Hm=hm_prime), record


def pcm_matrices(config, params, hamiltonian, settings=None):
    """Reconstructed (S', Hm') plus the audit record.

    With ``settings.reanchor`` the protocol falls back to the first member
    whose overlaps with all other members are above the gauge tolerance
    whenever the configured anchor's gauge is undefined.
    """
    settings = settings or PcmSettings()
    if settings.anchor >= config.size:
        raise ValueError("anchor index out of range")
    proto = _Protocol(config, params, settings)
    anchors = [settings.anchor]
    if settings.reanchor:
        anchors += [k for k in range(config.size) if k != settings.anchor]
    last_error = None
    for anchor in anchors:
        try:
            return _assemble(proto, hamiltonian, anchor)
        except GaugeUndefinedError as exc:
            last_error = exc
    raise last_error


def energy_pcm(config, params, hamiltonian, settings=None):
    """Rayleigh quotient evaluated on the reconstructed matrices.

    Equal to the exact energy with each c_k rotated by e^{-i alpha_k}
    (alpha_k the anchor-relative member phase); since the optimizer owns
    the coefficients, the minimum over c is unchanged.
    """
    matrices, _ = pcm_matrices(config, params, hamiltonian, settings)
    return energy_from_matrices(matrices, params.c)


def gauge_alphas(config, params, anchor=0):
    """Exact anchor-relative member phases arg<psi_a|psi_k> (oracle use)."""
    states = member_states(config, params)
    overlaps = states[anchor].conj() @ states.T
    return np.angle(overlaps)


# ---------------------------------------------------------------------------
# Derivative-overlap reconstruction


def derivative_rows(config, params, hamiltonian, settings=None):
    """Gauged derivative overlaps for every member and parameter slot.

    Returns (matrices, record, ds, dh) where matrices are the reconstructed
    (S', Hm') and, for member i with parameter slots l,

        ds[i][l][j] = gauged <d psi_i / d theta_{i,l} | psi_j>
        dh[i][l][j] = gauged <d psi_i / d theta_{i,l} | H | psi_j>

    with the same e^{i alpha_i} ... e^{-i alpha_j} phase pattern as the
    matrices themselves.  The frame is evaluated at the current angles and
    held fixed; its own angle dependence is not differentiated, matching a
    descent loop that re-measures the frame at every step.
    """
    settings = settings or PcmSettings()
    proto = _Protocol(config, params, settings)
    anchor = _resolve_anchor(proto)
    matrices, record = _assemble(proto, hamiltonian, anchor)
    terms = _bare_terms(hamiltonian)
    ds = []
    dh = []
    for i in range(config.size):
        bound = member_circuit(config, params, i)
        ds_i = []
        dh_i = []
        for slot in range(len(bound.slot_positions)):
            row_s, row_h = _derivative_row(
                proto, bound, i, slot, matrices.S, record.pair_overlaps, terms
            )
            ds_i.append(row_s)
            dh_i.append(row_h)
        ds.append(ds_i)
        dh.append(dh_i)
    return matrices, record, ds, dh


def _resolve_anchor(proto):
    """The configured anchor, or the first usable one when re-anchoring."""
    settings = proto.settings
    if settings.anchor >= proto.config.size:
        raise ValueError("anchor index out of range")
    if not settings.reanchor:
        return settings.anchor
    candidates = [settings.anchor] + [
        k for k in range(proto.config.size) if k != settings.anchor
    ]
    for anchor in candidates:
        try:
            proto.check_gauge(proto.member_gauge_probs(anchor), anchor)
            return anchor
        except GaugeUndefinedError:
            continue
    return settings.anchor


def _derivative_row(proto, bound_i, i, slot, s_prime, pair, terms):
    """One (member, slot) pair's gauged derivative overlap rows."""
    settings = proto.settings
    m = proto.config.size
    gate = bound_i.gates[bound_i.slot_positions[slot]]
    gen_pauli, scalar = generator_of(gate)
    scal_c = np.conj(scalar)

    # d = <prefix|P|prefix> is the whole of <psi_i|D>, and it is real
    prefix = proto.with_prep(prefix_through_slot(bound_i, slot))
    d_val = proto.direct_exp(prefix, gen_pauli, (5, i, slot))

    # bare derivative circuit |D> plus the interference branches
    # |D+-> = (|psi_i> -+ i|D>)/sqrt(2) from quarter-turn insertions
    d_circ = proto.with_prep(insert_generator(bound_i, slot)[0])
    branches = {}
    for b_idx, sign in ((0, +1), (1, -1)):
        circ = proto.with_prep(insert_quarter_rotation(bound_i, slot, sign))
        b_val = (1.0 + (1j if sign > 0 else -1j) * d_val) / _SQRT2
        branches[b_idx] = (circ, b_val)

    row_s = np.zeros(m, dtype=complex)
    row_h = np.zeros(m, dtype=complex)

    # diagonal entries carry no gauge factor
    row_s[i] = scal_c * d_val
    h_diag = 0.0 + 0.0j
    for s_idx, (coeff, bare) in enumerate(terms):
        if not bare.ops:
            h_diag += coeff * d_val
            continue
        if abs(d_val) >= settings.division_tolerance:
            t_d = proto.direct_exp(d_circ, bare, (9, i, slot, 2, s_idx))
            t_i = proto.direct_exp(proto.full[i], bare, (4, i, s_idx))
            a_val, _ = proto.solve_pauli_loop(
                d_circ, i, bare,
                t_state=t_d, r_refl_state=d_val * d_val, t_refl=t_i,
                key_prefix=(8, i, slot, 2, i, s_idx),
            )
            h_diag += coeff * (a_val / d_val)
        else:
            h_diag += coeff * _split_pauli_element(
                proto, branches, i, slot, i, bare, s_idx,
                bridge_plus=(1.0 - 1j * d_val) / _SQRT2,
                bridge_minus=(1.0 + 1j * d_val) / _SQRT2,
            )
    row_h[i] = scal_c * h_diag

    for j in range(m):
        if j == i:
            continue
        if abs(s_prime[i, j]) < settings.division_tolerance:
            raise UnstableDivisionError(
                f"members ({i}, {j}) are orthogonal; derivative overlap "
                "reconstruction has no stable route"
            )
        # gauged <psi_j|D+-> from triple loops anchored at the branches
        g_branch = {}
        for b_idx, (circ, b_val) in branches.items():
            r_dj = proto.overlap_circuits(proto.full[j], circ, (6, i, slot, b_idx, j))
            a_val, _ = proto.solve_loop(
                circ, i, j,
                r_anchor_target=r_dj,
                r_refl_anchor=(1.0 + d_val * d_val) / 2.0,
                r_refl_target=pair[i, j],
                key_prefix=(7, i, slot, b_idx, j),
            )
            g_branch[b_idx] = a_val / (b_val * s_prime[i, j])
        bridge = (g_branch[1] - g_branch[0]) / (1j * _SQRT2)
        row_s[j] = scal_c * np.conj(bridge)

        entry = 0.0 + 0.0j
        for s_idx, (coeff, bare) in enumerate(terms):
            if not bare.ops:
                entry += coeff * np.conj(bridge)
                continue
            if abs(bridge) >= settings.division_tolerance:
                t_d = proto.direct_exp(d_circ, bare, (9, i, slot, 2, s_idx))
                t_j = proto.direct_exp(proto.full[j], bare, (4, j, s_idx))
                a_val, _ = proto.solve_pauli_loop(
                    d_circ, j, bare,
                    t_state=t_d, r_refl_state=float(abs(bridge) ** 2), t_refl=t_j,
                    key_prefix=(8, i, slot, 2, j, s_idx),
                )
                entry += coeff * (a_val / bridge)
            else:
                entry += coeff * _split_pauli_element(
                    proto, branches, i, slot, j, bare, s_idx,
                    bridge_plus=(np.conj(s_prime[i, j]) - 1j * bridge) / _SQRT2,
                    bridge_minus=(np.conj(s_prime[i, j]) + 1j * bridge) / _SQRT2,
                )
        row_h[j] = scal_c * entry
    return row_s, row_h


def _split_pauli_element(proto, branches, i, slot, j, bare, s_idx,
                         bridge_plus, bridge_minus):
    """Gauged <D|P|psi_j> recovered from the two interference branches.

    Used when the bare derivative state is (nearly) orthogonal to member j.
    The branch overlaps satisfy |g+|^2 + |g-|^2 = |<psi_j|psi_i>|^2 +
    |<psi_j|D>|^2, so they only vanish together when no route exists at
    all, which is reported rather than silently divided through.
    """
    tol = proto.settings.division_tolerance
    if abs(bridge_plus) < tol or abs(bridge_minus) < tol:
        raise UnstableDivisionError(
            f"members ({i}, {j}): both derivative reconstruction routes "
            "are degenerate"
        )
    t_j = proto.direct_exp(proto.full[j], bare, (4, j, s_idx))
    vals = {}
    for b_idx, (circ, _) in branches.items():
        bridge = bridge_plus if b_idx == 0 else bridge_minus
        t_b = proto.direct_exp(circ, bare, (9, i, slot, b_idx, s_idx))
        a_val, _ = proto.solve_pauli_loop(
            circ, j, bare,
            t_state=t_b, r_refl_state=float(abs(bridge) ** 2), t_refl=t_j,
            key_prefix=(8, i, slot, b_idx, j, s_idx),
        )
        vals[b_idx] = a_val / bridge
    # the branches sit in the bra here, so the +-i pair is conjugated
    # relative to the ket-side bridge difference used for the S row
    return (vals[0] - vals[1]) / (1j * _SQRT2)
