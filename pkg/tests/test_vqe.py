"""Hamiltonians, analytic gradients, gradient-descent training."""

import numpy as np
import numpy.testing as npt
import pytest

from lcavqe import circuits, lca, pcm, sim, vqe
from lcavqe.circuits import CircuitTemplate, GateKind, GateOp
from lcavqe.errors import TrainingAbortedError, UnsupportedGeneratorError

from conftest import dense_pauli


def _rx_qubit_config():
    """One single-qubit RX member on |0>: energy on Z is exactly cos(theta)."""
    gate = GateOp(kind=GateKind.RX, qubits=(0,), angle=None, slot=0)
    template = CircuitTemplate(id=91, n_qubits=1, layers=1, layer_gates=(gate,))
    return lca.LcaConfig(members=(template,), n_qubits=1)


_Z_HAM = sim.PauliSum(terms=(sim.PauliString(ops=((0, "z"),)),))


def _config(library, ids=(1, 2), q=3, layers=1):
    return lca.LcaConfig.from_library(library, list(ids), q, layers)


def _random(config, seed):
    rng = sim.rng_stream(seed, 55)
    params = lca.random_params(config, rng)
    c = rng.uniform(-1, 1, config.size) + 1j * rng.uniform(-1, 1, config.size)
    return lca.LcaParams(c=c, thetas=params.thetas)


# ---------------------------------------------------------------------------
# XY model


def test_xy_hamiltonian_term_layout():
    ham = vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=4))
    assert len(ham.terms) == 16  # 2 per bond on a 4-ring, plus X and Z fields
    xx = [t for t in ham.terms if all(p == "X" for _, p in t.ops) and len(t.ops) == 2]
    yy = [t for t in ham.terms if all(p == "Y" for _, p in t.ops) and len(t.ops) == 2]
    assert len(xx) == 4 and len(yy) == 4
    fields = [t for t in ham.terms if len(t.ops) == 1]
    assert len(fields) == 8
    assert all(t.coeff == 1.0 for t in xx + yy)
    assert all(t.coeff == 0.5 for t in fields)


def test_xy_hamiltonian_two_sites_double_bond():
    # on two sites the ring traverses the same bond twice
    ham = vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=2))
    xx = [t for t in ham.terms if len(t.ops) == 2 and t.ops[0][1] == "X"]
    assert len(xx) == 2
    assert xx[0].ops == xx[1].ops


def test_xy_hamiltonian_skips_zero_couplings():
    ham = vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=3, j_x=0.0))
    assert not any(
        len(t.ops) == 1 and t.ops[0][1] == "X" for t in ham.terms
    )


def test_xy_model_validation():
    with pytest.raises(ValueError):
        vqe.XYModelSpec(n_sites=1)


def test_xy_ground_energy_matches_dense():
    ham = vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=3))
    dense = sum(dense_pauli(t, 3) for t in ham.terms)
    want = float(np.linalg.eigvalsh(dense)[0])
    assert abs(sim.min_eigenvalue(ham, 3) - want) < 1e-9


# ---------------------------------------------------------------------------
# Cost and closed-form gradients


def test_cost_closed_form_single_rx():
    config = _rx_qubit_config()
    for theta in (0.0, 0.7, np.pi / 2, 2.1):
        params = lca.LcaParams(
            c=np.ones(1, dtype=complex), thetas=(np.array([theta]),)
        )
        assert abs(vqe.cost(config, params, _Z_HAM) - np.cos(theta)) < 1e-12


def test_grad_theta_closed_form_single_rx():
    config = _rx_qubit_config()
    for theta in (0.3, np.pi / 2, 4.0):
        params = lca.LcaParams(
            c=np.ones(1, dtype=complex), thetas=(np.array([theta]),)
        )
        grad = vqe.grad_theta(config, params, _Z_HAM)
        assert grad.shape == (1,)
        assert abs(grad[0] - (-np.sin(theta))) < 1e-10


def test_grad_c_vanishes_along_scale_direction(library):
    """The Rayleigh quotient is scale free, so the radial derivative is 0."""
    config = _config(library)
    params = _random(config, 1)
    ham = vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=3))
    grad = vqe.grad_c(config, params, ham)
    radial = grad[0::2] @ params.c.real + grad[1::2] @ params.c.imag
    assert abs(radial) < 1e-10


def test_grad_c_zero_at_optimal_coefficients(library):
    config = _config(library)
    params = _random(config, 2)
    ham = vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=3))
    mats = lca.build_matrices(config, params, ham)
    _, c_best = lca.optimal_coefficients(mats)
    best = lca.LcaParams(c=c_best, thetas=params.thetas)
    assert np.linalg.norm(vqe.grad_c(config, best, ham)) < 1e-8


def _fd_grad_c(config, params, ham, mode, h=1e-5, settings=None):
    grad = np.empty(2 * config.size)
    for k in range(config.size):
        for part, delta in ((0, h), (1, 1j * h)):
            up = lca.LcaParams(c=params.c.copy(), thetas=params.thetas)
            dn = lca.LcaParams(c=params.c.copy(), thetas=params.thetas)
            up.c[k] += delta
            dn.c[k] -= delta
            e_up = vqe.cost(config, up, ham, mode=mode, pcm_settings=settings)
            e_dn = vqe.cost(config, dn, ham, mode=mode, pcm_settings=settings)
            grad[2 * k + part] = (e_up - e_dn) / (2 * h)
    return grad


def test_grad_c_matches_finite_differences(library):
    config = _config(library)
    params = _random(config, 3)
    ham = vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=3))
    analytic = vqe.grad_c(config, params, ham)
    numeric = _fd_grad_c(config, params, ham, vqe.EXACT)
    npt.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_grad_c_pcm_matches_finite_differences(library):
    config = _config(library, q=2)
    params = _random(config, 4)
    ham = vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=2))
    analytic = vqe.grad_c(config, params, ham, mode=vqe.PCM)
    numeric = _fd_grad_c(config, params, ham, vqe.PCM)
    npt.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def _fd_grad_theta_exact(config, params, ham, h=1e-5):
    flats = [np.asarray(t, dtype=float).copy() for t in params.thetas]
    grad = []
    for i, arr in enumerate(flats):
        for k in range(arr.size):
            up = [a.copy() for a in flats]
            dn = [a.copy() for a in flats]
            up[i][k] += h
            dn[i][k] -= h
            e_up = vqe.cost(config, lca.LcaParams(c=params.c, thetas=up), ham)
            e_dn = vqe.cost(config, lca.LcaParams(c=params.c, thetas=dn), ham)
            grad.append((e_up - e_dn) / (2 * h))
    return np.asarray(grad)


def test_grad_theta_matches_finite_differences(library):
    config = _config(library, ids=(1, 2, 7), q=2)
    params = _random(config, 5)
    ham = vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=2))
    analytic = vqe.grad_theta(config, params, ham)
    numeric = _fd_grad_theta_exact(config, params, ham)
    npt.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_grad_theta_pcm_matches_frozen_frame_fd(library):
    """The reconstructed gradient drives the counter-rotated coefficients:
    it must match finite differences of the exact energy at c tilde."""
    config = _config(library, q=2)
    params = _random(config, 6)
    ham = vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=2))
    analytic = vqe.grad_theta(config, params, ham, mode=vqe.PCM)
    alphas = pcm.gauge_alphas(config, params)
    frozen = lca.gauge_transform(params, -alphas)
    numeric = _fd_grad_theta_exact(config, frozen, ham)
    npt.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_split_theta_grad(library):
    config = _config(library, ids=(1, 2), q=3)
    flat = np.arange(12.0)
    parts = vqe.split_theta_grad(config, flat)
    assert len(parts) == 2
    npt.assert_array_equal(parts[0], flat[:6])
    npt.assert_array_equal(parts[1], flat[6:])
    with pytest.raises(ValueError):
        vqe.split_theta_grad(config, np.arange(13.0))


def test_grad_theta_rejects_non_pauli_generators(library):
    config = _config(library, ids=(1, 3), q=2)
    params = _random(config, 7)
    with pytest.raises(UnsupportedGeneratorError):
        vqe.grad_theta(config, params, _xy(2))


def _xy(n):
    return vqe.xy_hamiltonian(vqe.XYModelSpec(n_sites=n))


# ---------------------------------------------------------------------------
# Optimizer configuration and initial parameters


def test_optimizer_config_validation():
    vqe.OptimizerConfig(learning_rate=0.1, steps=10)
    with pytest.raises(ValueError):
        vqe.OptimizerConfig(learning_rate=-0.1, steps=10)
    with pytest.raises(ValueError):
        vqe.OptimizerConfig(learning_rate=0.1, steps=-1)
    with pytest.raises(ValueError):
        vqe.OptimizerConfig(learning_rate=0.1, steps=10, mode="fast")


def test_initial_params_seeded(library):
    config = _config(library)
    opt = vqe.OptimizerConfig(learning_rate=0.1, steps=0, seed=8)
    a = vqe.initial_params(config, opt)
    b = vqe.initial_params(config, opt)
    npt.assert_array_equal(a.c, b.c)
    for ta, tb in zip(a.thetas, b.thetas):
        npt.assert_array_equal(ta, tb)
    npt.assert_array_equal(a.c, np.ones(2, dtype=complex))
    other = vqe.initial_params(
        config, vqe.OptimizerConfig(learning_rate=0.1, steps=0, seed=9)
    )
    assert not np.array_equal(a.thetas[0], other.thetas[0])


def test_initial_params_accepts_overrides(library):
    config = _config(library)
    c0 = np.array([0.5 + 0.5j, 1.0 - 0.25j])
    th0 = (np.full(6, 0.3), np.full(6, 0.4))
    opt = vqe.OptimizerConfig(
        learning_rate=0.1, steps=0, c_init=c0, theta_init=th0
    )
    params = vqe.initial_params(config, opt)
    npt.assert_array_equal(params.c, c0)
    for got, want in zip(params.thetas, th0):
        npt.assert_array_equal(got, want)


# ---------------------------------------------------------------------------
# Training


def test_train_single_rx_reaches_ground():
    config = _rx_qubit_config()
    opt = vqe.OptimizerConfig(
        learning_rate=0.1, steps=500, theta_init=(np.array([np.pi / 2]),)
    )
    trace = vqe.train(config, _Z_HAM, opt)
    assert len(trace.energies) == 501
    assert len(trace.grad_norms) == 500
    assert abs(trace.final_energy - (-1.0)) < 1e-6
    assert trace.final_energy == trace.energies[-1]


def test_train_zero_rate_is_constant():
    config = _rx_qubit_config()
    opt = vqe.OptimizerConfig(
        learning_rate=0.0, steps=20, theta_init=(np.array([1.1]),)
    )
    trace = vqe.train(config, _Z_HAM, opt)
    npt.assert_allclose(trace.energies, np.full(21, np.cos(1.1)), atol=1e-12)


def test_train_descends_and_respects_variational_bound(library):
    config = _config(library, ids=(1, 2), q=3)
    ham = _xy(3)
    ground = sim.min_eigenvalue(ham, 3)
    opt = vqe.OptimizerConfig(learning_rate=1e-3, steps=150, seed=3)
    trace = vqe.train(config, ham, opt)
    energies = np.asarray(trace.energies)
    assert np.all(energies >= ground - 1e-9)
    steps_down = np.sum(np.diff(energies) <= 1e-12)
    assert steps_down >= 0.95 * (len(energies) - 1)


def test_train_trace_is_seed_deterministic(library):
    config = _config(library, q=2)
    ham = _xy(2)
    opt = vqe.OptimizerConfig(learning_rate=0.05, steps=25, seed=4)
    a = vqe.train(config, ham, opt)
    b = vqe.train(config, ham, opt)
    npt.assert_array_equal(a.energies, b.energies)
    npt.assert_array_equal(a.final_params.c, b.final_params.c)


def test_train_pcm_mode_runs_and_descends(library):
    config = _config(library, q=2)
    ham = _xy(2)
    opt = vqe.OptimizerConfig(learning_rate=0.05, steps=12, seed=5, mode=vqe.PCM)
    trace = vqe.train(config, ham, opt)
    assert len(trace.energies) == 13
    assert np.all(np.isfinite(trace.energies))
    assert trace.energies[-1] < trace.energies[0]


def test_train_pcm_shot_mode_deterministic(library):
    config = _config(library, q=2)
    ham = _xy(2)
    opt = vqe.OptimizerConfig(learning_rate=0.05, steps=4, seed=6, mode=vqe.PCM)
    settings = pcm.PcmSettings(shots=4096, seed=11)
    a = vqe.train(config, ham, opt, pcm_settings=settings)
    b = vqe.train(config, ham, opt, pcm_settings=settings)
    npt.assert_array_equal(a.energies, b.energies)
    assert np.all(np.isfinite(a.energies))


def test_train_gauge_framed_run_matches_baseline(library):
    """Fixed member rephasings plus counter-rotated initial c reproduce the
    plain energy sequence step for step."""
    config = _config(library, q=2)
    ham = _xy(2)
    base_opt = vqe.OptimizerConfig(learning_rate=0.05, steps=15, seed=7)
    baseline = vqe.train(config, ham, base_opt)
    alphas = np.array([0.0, 1.3])
    start = vqe.initial_params(config, base_opt)
    framed_opt = vqe.OptimizerConfig(
        learning_rate=0.05,
        steps=15,
        seed=7,
        c_init=start.c * np.exp(1j * alphas),
        theta_init=tuple(t.copy() for t in start.thetas),
    )
    framed = vqe.train(config, ham, framed_opt, gauge_frame=alphas)
    npt.assert_allclose(framed.energies, baseline.energies, atol=1e-10)


def test_train_aborts_on_degenerate_combination(library):
    config = _config(library, ids=(1, 2), q=2)
    opt = vqe.OptimizerConfig(
        learning_rate=0.1,
        steps=10,
        c_init=np.array([1.0, -1.0], dtype=complex),
        theta_init=(np.zeros(4), np.zeros(4)),
    )
    with pytest.raises(TrainingAbortedError) as excinfo:
        vqe.train(config, _xy(2), opt)
    assert excinfo.value.step == 0


# ---------------------------------------------------------------------------
# Improvement metric


def test_improvement_l_examples():
    assert abs(vqe.improvement_L(-3.5, [-3.0, -3.5], -4.0)) < 1e-12
    assert abs(vqe.improvement_L(-4.0, [-3.5], -4.0) - 1.0) < 1e-12
    assert abs(vqe.improvement_L(-3.0, [-3.5], -4.0) - (-1.0)) < 1e-12


def test_improvement_l_validation():
    with pytest.raises(ValueError):
        vqe.improvement_L(-1.0, [], -2.0)
    with pytest.raises(ValueError):
        vqe.improvement_L(-1.0, [-2.0], -2.0)
