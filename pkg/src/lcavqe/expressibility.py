"""Expressibility estimation via fidelity histograms against the Haar law.

For an N-dimensional Hilbert space the fidelity F = |<psi|phi>|^2 of two
Haar-random pure states has density (N - 1)(1 - F)^{N - 2}, whose bin
masses integrate in closed form.  Expressibility of a state generator is
the KL divergence between its sampled fidelity histogram and those masses:
lower means closer to Haar.

Two binning modes are supported.  FIXED spans [0, 1]; UNFIXED spans the
sampled range only, with the Haar masses taken unnormalized from the same
closed form so that a perfectly Haar-shaped histogram still scores zero.
UNFIXED is the default because at many qubits all the action concentrates
in a region much narrower than any fixed bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sim
from .circuits import CircuitTemplate
from .errors import DegenerateRegionError
from .lca import LcaConfig

FIXED = "fixed"
UNFIXED = "unfixed"
FIXED_ONES = "fixed_ones"
SAMPLED = "sampled"

DEFAULT_PAIRS = 5000
DEFAULT_BINS = 75

_DEGENERATE_NORM = 1e-10
_CHUNK = 1024


def haar_pdf(fidelity, n_dim):
    """Density of the fidelity of two Haar-random states."""
    f = np.asarray(fidelity, dtype=float)
    if np.any(f < 0.0) or np.any(f > 1.0):
        raise ValueError("fidelity outside [0, 1]")
    if n_dim < 2:
        raise ValueError("need a Hilbert space dimension of at least 2")
    out = (n_dim - 1) * (1.0 - f) ** (n_dim - 2)
    return float(out) if np.isscalar(fidelity) else out


def haar_bin_mass(lo, hi, n_dim):
    """Closed-form Haar probability of fidelities landing in [lo, hi]."""
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError(f"need 0 <= lo < hi <= 1, got [{lo}, {hi}]")
    if n_dim < 2:
        raise ValueError("need a Hilbert space dimension of at least 2")
    return (1.0 - lo) ** (n_dim - 1) - (1.0 - hi) ** (n_dim - 1)


def haar_fidelity_samples(count, n_dim, rng):
    """Exact Haar fidelity draws via the inverse CDF F = 1 - u^{1/(N-1)}."""
    u = rng.uniform(0.0, 1.0, size=count)
    return 1.0 - u ** (1.0 / (n_dim - 1))


@dataclass(frozen=True)
class FidelityHistogram:
    """Binned fidelity samples plus the binning metadata."""

    edges: np.ndarray
    counts: np.ndarray
    total: int
    binning: str
    n_bin: int

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        counts = np.asarray(self.counts, dtype=int)
        if edges.ndim != 1 or counts.ndim != 1 or len(edges) != len(counts) + 1:
            raise ValueError("edges must be one longer than counts")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if counts.sum() != self.total:
            raise ValueError("counts do not sum to total")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)


@dataclass(frozen=True)
class ExprResult:
    """One expressibility estimate and how it was obtained."""

    d_kl: float
    pairs: int
    binning: str
    n_bin: int
    seed: int
    histogram: FidelityHistogram = None

    def __post_init__(self):
        if not np.isfinite(self.d_kl):
            raise ValueError("d_kl must be finite")


def _check_binning(binning):
    if binning not in (FIXED, UNFIXED):
        raise ValueError(f"unknown binning mode {binning!r}")


def build_histogram(samples, binning=UNFIXED, n_bin=DEFAULT_BINS):
    """Histogram fidelity samples under the requested binning mode."""
    _check_binning(binning)
    if n_bin < 2:
        raise ValueError("need at least two bins")
    samples = np.clip(np.asarray(samples, dtype=float), 0.0, 1.0)
    if samples.size == 0:
        raise ValueError("no samples to bin")
    if binning == FIXED:
        edges = np.linspace(0.0, 1.0, n_bin + 1)
    else:
        lo, hi = float(samples.min()), float(samples.max())
        if hi <= lo:
            raise DegenerateRegionError(
                "all fidelity samples are identical; the unfixed binning "
                "region has zero width"
            )
        edges = np.linspace(lo, hi, n_bin + 1)
        if np.any(np.diff(edges) <= 0):
            raise DegenerateRegionError(
                "sample range too narrow to split into distinct bins"
            )
    counts, _ = np.histogram(samples, bins=edges)
    return FidelityHistogram(
        edges=edges, counts=counts, total=int(samples.size),
        binning=binning, n_bin=n_bin,
    )


def haar_masses(histogram, n_dim):
    """Haar mass of each histogram bin (unnormalized under UNFIXED)."""
    edges = histogram.edges
    return np.array([
        haar_bin_mass(edges[k], edges[k + 1], n_dim)
        for k in range(len(edges) - 1)
    ])


def kl_from_histogram(histogram, n_dim):
    """KL divergence of the empirical bin masses from the Haar masses.

    Zero-count bins contribute nothing.  Haar masses that underflow to
    zero under a populated bin are floored at the smallest positive float,
    which keeps the result finite while preserving its (astronomically
    large) order.
    """
    p = histogram.counts / histogram.total
    q = haar_masses(histogram, n_dim)
    mask = p > 0
    q_safe = np.maximum(q[mask], np.finfo(float).tiny)
    return float(np.sum(p[mask] * np.log(p[mask] / q_safe)))


def kl_divergence(samples, n_dim, binning=UNFIXED, n_bin=DEFAULT_BINS):
    """KL divergence of sampled fidelities from the Haar distribution."""
    return kl_from_histogram(build_histogram(samples, binning, n_bin), n_dim)


# ---------------------------------------------------------------------------
# Fidelity sampling


def sample_fidelities(generator, pairs, param_sampler, seed=0):
    """Fidelities of independently drawn state pairs from a generator.

    ``param_sampler(rng)`` draws one parameter object; ``generator(params)``
    maps it to a normalized state, or returns None for a degenerate
    combination, which is resampled from the same per-pair stream.  Pair k
    draws from the stream keyed (seed, k): first its A parameters, then its
    B parameters, then any redraws (A's first), so batched evaluations that
    follow the same order reproduce these values exactly.
    """
    if pairs < 1:
        raise ValueError("need at least one pair")
    out = np.empty(pairs)
    for k in range(pairs):
        rng = sim.rng_stream(seed, k)
        params_a = param_sampler(rng)
        params_b = param_sampler(rng)
        state_a = generator(params_a)
        state_b = generator(params_b)
        while state_a is None:
            state_a = generator(param_sampler(rng))
        while state_b is None:
            state_b = generator(param_sampler(rng))
        out[k] = abs(sim.inner(state_a, state_b)) ** 2
    return out


def _as_member_templates(library, members, n_qubits, layers):
    """Resolve library ids or ready-made templates into template instances."""
    resolved = []
    for m in members:
        if isinstance(m, CircuitTemplate):
            resolved.append(m)
        else:
            resolved.append(library.instantiate(m, n_qubits, layers))
    return resolved


def _draw_pair_params(key, pcounts, m, c_mode, draws):
    """Draw one pair's parameters in the canonical stream order."""
    rng = sim.rng_stream(*key)
    for side in range(2):
        thetas = [rng.uniform(0.0, 2.0 * np.pi, size=p) for p in pcounts]
        if c_mode == SAMPLED:
            re_im = rng.uniform(-1.0, 1.0, size=(m, 2))
            c = re_im[:, 0] + 1j * re_im[:, 1]
        else:
            c = np.ones(m, dtype=complex)
        draws[side].append((thetas, c))
    return rng


def _combined_states(templates, reference, draws, lo, hi):
    """Stack one side's combined LCA states for pair indices [lo, hi)."""
    batch = hi - lo
    dim = reference.shape[0]
    combined = np.zeros((batch, dim), dtype=complex)
    for k, template in enumerate(templates):
        thetas = np.stack([draws[idx][0][k] for idx in range(lo, hi)])
        states = sim.run_batch(template.circuit(), thetas, reference)
        coeffs = np.array([draws[idx][1][k] for idx in range(lo, hi)])
        combined += coeffs[:, None] * states
    return combined


def _lca_fidelities(templates, reference_state, pairs, c_mode, key_base):
    """Batched fidelity sampling for a (possibly single-member) combination.

    Parameters for every pair come from per-pair streams keyed
    (key_base..., pair index) in the order documented on
    ``sample_fidelities``; only the state evaluation is batched, so the
    returned samples are independent of the chunking.
    """
    m = len(templates)
    pcounts = [t.param_count for t in templates]
    draws = ([], [])
    streams = []
    for k in range(pairs):
        streams.append(_draw_pair_params(key_base + (k,), pcounts, m, c_mode, draws))

    fids = np.empty(pairs)
    states_a = np.empty((pairs, reference_state.shape[0]), dtype=complex)
    states_b = np.empty_like(states_a)
    for lo in range(0, pairs, _CHUNK):
        hi = min(lo + _CHUNK, pairs)
        states_a[lo:hi] = _combined_states(templates, reference_state, draws[0], lo, hi)
        states_b[lo:hi] = _combined_states(templates, reference_state, draws[1], lo, hi)

    def redraw_state(rng):
        thetas = [rng.uniform(0.0, 2.0 * np.pi, size=p) for p in pcounts]
        if c_mode == SAMPLED:
            re_im = rng.uniform(-1.0, 1.0, size=(m, 2))
            c = re_im[:, 0] + 1j * re_im[:, 1]
        else:
            c = np.ones(m, dtype=complex)
        state = np.zeros(reference_state.shape[0], dtype=complex)
        for k, template in enumerate(templates):
            state += c[k] * sim.run_batch(
                template.circuit(), thetas[k][None, :], reference_state
            )[0]
        return state

    norm_a = np.einsum("bi,bi->b", states_a.conj(), states_a).real
    norm_b = np.einsum("bi,bi->b", states_b.conj(), states_b).real
    for k in range(pairs):
        # degenerate combinations are redrawn from the pair's own stream
        while norm_a[k] < _DEGENERATE_NORM:
            states_a[k] = redraw_state(streams[k])
            norm_a[k] = np.vdot(states_a[k], states_a[k]).real
        while norm_b[k] < _DEGENERATE_NORM:
            states_b[k] = redraw_state(streams[k])
            norm_b[k] = np.vdot(states_b[k], states_b[k]).real

    cross = np.einsum("bi,bi->b", states_a.conj(), states_b)
    fids[:] = np.abs(cross) ** 2 / (norm_a * norm_b)
    return fids


def _reference_state(n_qubits, reference):
    return sim.init_reference(n_qubits, reference)


def expr_single(library, id=None, n_qubits=None, layers=1, pairs=DEFAULT_PAIRS,
                binning=UNFIXED, n_bin=DEFAULT_BINS, seed=0,
                reference=sim.ALL_ZEROS, _key_base=None):
    """Expressibility of a single ansatz template.

    ``library`` is either an AnsatzLibrary (then ``id`` and ``n_qubits``
    select the template) or a ready-made CircuitTemplate.
    """
    if isinstance(library, CircuitTemplate):
        template = library
    else:
        template = library.instantiate(id, n_qubits, layers)
    key = (seed,) if _key_base is None else _key_base
    ref = _reference_state(template.n_qubits, reference)
    fids = _lca_fidelities([template], ref, pairs, FIXED_ONES, key)
    hist = build_histogram(fids, binning, n_bin)
    return ExprResult(
        d_kl=kl_from_histogram(hist, 1 << template.n_qubits),
        pairs=pairs, binning=binning, n_bin=n_bin, seed=seed, histogram=hist,
    )


def expr_lca(library, members=None, n_qubits=None, layers=1, pairs=DEFAULT_PAIRS,
             binning=UNFIXED, n_bin=DEFAULT_BINS, c_mode=FIXED_ONES, seed=0,
             reference=sim.ALL_ZEROS, _key_base=None):
    """Expressibility of a linear combination of ansatz templates.

    ``members`` lists library ids (resolved at ``n_qubits``/``layers``) or
    CircuitTemplate instances.  ``c_mode`` fixes all combination
    coefficients at one (the default) or samples Re and Im uniformly from
    [-1, 1] alongside each angle draw.
    """
    if c_mode not in (FIXED_ONES, SAMPLED):
        raise ValueError(f"unknown c_mode {c_mode!r}")
    if not members:
        raise ValueError("need at least one member")
    templates = _as_member_templates(library, members, n_qubits, layers)
    widths = {t.n_qubits for t in templates}
    if len(widths) != 1:
        raise ValueError("members must share one register width")
    key = (seed,) if _key_base is None else _key_base
    ref = _reference_state(templates[0].n_qubits, reference)
    fids = _lca_fidelities(templates, ref, pairs, c_mode, key)
    hist = build_histogram(fids, binning, n_bin)
    return ExprResult(
        d_kl=kl_from_histogram(hist, 1 << templates[0].n_qubits),
        pairs=pairs, binning=binning, n_bin=n_bin, seed=seed, histogram=hist,
    )


def lca_generator(config: LcaConfig, c_mode=FIXED_ONES):
    """(generator, param_sampler) pair for ``sample_fidelities``.

    The serial counterpart of the batched path, drawing in the same
    canonical order; useful for spot-checking batched results.
    """
    m = config.size
    pcounts = [t.param_count for t in config.members]
    ref = config.reference_state()

    def param_sampler(rng):
        thetas = [rng.uniform(0.0, 2.0 * np.pi, size=p) for p in pcounts]
        if c_mode == SAMPLED:
            re_im = rng.uniform(-1.0, 1.0, size=(m, 2))
            c = re_im[:, 0] + 1j * re_im[:, 1]
        else:
            c = np.ones(m, dtype=complex)
        return thetas, c

    def generator(params):
        thetas, c = params
        state = np.zeros_like(ref)
        for k, template in enumerate(config.members):
            state += c[k] * sim.run_batch(
                template.circuit(), thetas[k][None, :], ref
            )[0]
        norm_sq = np.vdot(state, state).real
        if norm_sq < _DEGENERATE_NORM:
            return None
        return state / np.sqrt(norm_sq)

    return generator, param_sampler


# ---------------------------------------------------------------------------
# Improvement and scans


def improvement_R(d_lca, member_d_kls):
    """Relative expressibility gain of the combination over its best member.

    Positive when the combination is closer to Haar than every individual
    member; the worst value is unbounded below.
    """
    members = list(member_d_kls)
    if not members:
        raise ValueError("need at least one member d_kl")
    best = min(members)
    if best <= 0:
        raise ValueError("member d_kl values must be positive")
    return (best - d_lca) / best


@dataclass(frozen=True)
class DepthScanResult:
    """d_kl per layer count, plus the detected stabilization threshold."""

    template_id: int
    n_qubits: int
    l_values: tuple
    d_kls: tuple
    plateau: float
    l_th: int


def depth_scan(library, id, n_qubits, l_range, pairs=DEFAULT_PAIRS,
               binning=UNFIXED, n_bin=DEFAULT_BINS, seed=0):
    """Expressibility versus circuit depth for one template.

    The plateau is the mean d_kl of the two deepest scans; the threshold
    L_th is the shallowest depth within 10% of it.
    """
    l_values = sorted(set(int(l) for l in l_range))
    if not l_values:
        raise ValueError("no depths to scan")
    if any(l < 1 for l in l_values):
        raise ValueError("depths must be positive")
    d_kls = []
    for layers in l_values:
        result = expr_single(
            library, id, n_qubits, layers, pairs, binning, n_bin, seed,
            _key_base=(seed, layers),
        )
        d_kls.append(result.d_kl)
    plateau = float(np.mean(d_kls[-2:]))
    l_th = l_values[-1]
    for layers, d in zip(l_values, d_kls):
        if abs(d - plateau) <= 0.1 * plateau:
            l_th = layers
            break
    return DepthScanResult(
        template_id=id, n_qubits=n_qubits, l_values=tuple(l_values),
        d_kls=tuple(d_kls), plateau=plateau, l_th=l_th,
    )


def fit_threshold(scans):
    """Least-squares line L_th = a*Q + b over depth scans (or (Q, L_th) pairs)."""
    points = []
    for entry in scans:
        if isinstance(entry, DepthScanResult):
            points.append((entry.n_qubits, entry.l_th))
        else:
            q, l_th = entry
            points.append((int(q), float(l_th)))
    qs = [p[0] for p in points]
    if len(set(qs)) < 2:
        raise ValueError("need depth scans at two or more distinct qubit counts")
    a, b = np.polyfit(qs, [p[1] for p in points], deg=1)
    return float(a), float(b)


@dataclass(frozen=True)
class CountScanResult:
    """Per-trial d_kl versus member count, with saturation diagnostics."""

    n_qubits: int
    m_values: tuple
    d_kls: np.ndarray
    orders: tuple
    m_c: np.ndarray
    saturated: np.ndarray
    seed: int


def critical_count(d_vals, eps_sat=0.05):
    """Smallest member count after which every added member changes d_kl
    by less than eps_sat (relative), plus whether that point exists at all.
    """
    d_vals = list(d_vals)
    m_max = len(d_vals)
    flat = []
    for k in range(1, m_max):
        prev, cur = d_vals[k - 1], d_vals[k]
        improvement = 0.0 if prev == 0 else (prev - cur) / prev
        flat.append(improvement < eps_sat)
    m_c = m_max
    for m in range(m_max, 0, -1):
        if all(flat[m - 1:]):
            m_c = m
        else:
            break
    return m_c, m_c < m_max


def count_scan(library, n_qubits, max_m=14, trials=5, pairs=DEFAULT_PAIRS,
               binning=UNFIXED, n_bin=DEFAULT_BINS, layers=1,
               c_mode=FIXED_ONES, seed=0, eps_sat=0.05):
    """d_kl as members accumulate in a random insertion order, per trial.

    Each trial permutes the library's templates, then evaluates the
    combination of the first m for m = 1..max_m.
    """
    ids = library.ids()
    if max_m < 1 or max_m > len(ids):
        raise ValueError(f"max_m must be between 1 and {len(ids)}")
    if trials < 1:
        raise ValueError("need at least one trial")
    m_values = tuple(range(1, max_m + 1))
    d_kls = np.empty((trials, max_m))
    orders = []
    m_c = np.empty(trials, dtype=int)
    saturated = np.empty(trials, dtype=bool)
    for t in range(trials):
        order = [ids[k] for k in sim.rng_stream(seed, 99, t).permutation(len(ids))]
        orders.append(tuple(order[:max_m]))
        for m in m_values:
            result = expr_lca(
                library, order[:m], n_qubits, layers, pairs, binning, n_bin,
                c_mode, seed, _key_base=(seed, t, m),
            )
            d_kls[t, m - 1] = result.d_kl
        m_c[t], saturated[t] = critical_count(d_kls[t], eps_sat)
    return CountScanResult(
        n_qubits=n_qubits, m_values=m_values, d_kls=d_kls,
        orders=tuple(orders), m_c=m_c, saturated=saturated, seed=seed,
    )
