import numpy as np
import pytest
from scipy import stats

from ddinfer import annealing as A
from ddinfer.ann_index import log_likelihood
from ddinfer.material_data import LocalDataSet
from ddinfer.phase_space import to_weighted
from ddinfer.truss import admissibility_residual, assemble

from conftest import single_bar


def _model(truss, points, beta, modulus=1.0, **kw):
    E = assemble(truss)
    data = LocalDataSet(np.asarray(points, dtype=float), 1.0, "gauss")
    return A.EnergyModel.for_truss(truss, E, {"gauss": data}, {"gauss": modulus},
                                   betas={"gauss": beta}, rng=0, **kw)


# -- energy ---------------------------------------------------------------

def test_energy_zero_at_single_data_point():
    m = _model(single_bar(), [[0.3, 1.0]], beta=5.0)
    assert A.energy(np.array([0.3, 1.0]), m, 5.0) == 0.0


def test_energy_two_points():
    beta, D = 3.0, 0.4
    m = _model(single_bar(), [[0.3, 1.0], [0.3 + np.sqrt(D), 1.0]], beta=beta)
    expected = -np.log((1 + np.exp(-beta * D)) / 2) / beta
    assert A.energy(np.array([0.3, 1.0]), m, beta) == pytest.approx(expected, rel=1e-13)


def test_energy_factorizes_over_members(three_bar, three_bar_E):
    rng = np.random.default_rng(0)
    E = three_bar_E
    pts = np.column_stack([rng.uniform(-0.01, 0.02, 400), rng.uniform(-100, 200, 400)])
    data = LocalDataSet(pts, 1.0, "gauss")
    beta = 30.0
    m = A.EnergyModel.for_truss(three_bar, E, {"gauss": data}, {"gauss": 1e4},
                                betas={"gauss": beta}, rng=0, use_tree=False)
    Z = E.z0 + rng.normal(size=(20, 6)) * np.tile([0.005, 50.0], 3)
    got = A.energy(Z, m, beta)
    local = Z.reshape(20, 3, 2) * [np.sqrt(1e4), 1 / np.sqrt(1e4)]
    expected = -sum(log_likelihood(m.materials["gauss"].points, local[:, e], beta)
                    for e in range(3)) / beta
    np.testing.assert_allclose(got, expected, rtol=1e-12)
    # tree with unlimited checks agrees with the direct sum near the data
    fast = A.energy(Z, m.with_search(use_tree=True), beta)
    np.testing.assert_allclose(fast, got, rtol=1e-10)


def test_member_kernel_does_not_depend_on_member_weight():
    pts = [[0.2, 1.0], [0.5, 1.1]]
    z = np.array([[0.3, 1.0]])
    e1 = A.energy(z, _model(single_bar(area=1.0), pts, 4.0), 4.0)
    e2 = A.energy(z, _model(single_bar(area=10.0, load=10.0), pts, 4.0), 4.0)
    np.testing.assert_allclose(e1, e2, rtol=1e-13)


# -- schedule and resampling ---------------------------------------------

def test_schedule_is_affine():
    s = A.Schedule(100, (7.3e4, 2.0))
    for q in range(100):
        np.testing.assert_array_equal(s.betas(q), (q + 1) * (np.array([7.3e4, 2.0]) / 100))
    np.testing.assert_allclose(s.betas(99), [7.3e4, 2.0], rtol=1e-15)
    with pytest.raises(ValueError):
        A.Schedule(-1, (1.0,))
    with pytest.raises(ValueError):
        A.Schedule(10, (0.0,))


def test_uniform_weights_for_equal_or_infinite_energies():
    rng = np.random.default_rng(0)
    for e in (np.full(50, np.inf), np.full(50, 3.0)):
        counts = np.array([A.resample_counts(e, 2.0, 50, rng) for _ in range(2000)])
        np.testing.assert_allclose(counts.mean(0), 1.0, atol=0.1)
        assert np.all(counts == 1)


def test_infinite_energy_member_is_dropped():
    counts = A.resample_counts(np.array([0.0, np.inf]), 1.0, 10, 0)
    np.testing.assert_array_equal(counts, [10, 0])


def test_resampling_is_unbiased():
    rng = np.random.default_rng(1)
    e = rng.exponential(size=200)
    n_target, dbeta = 150, 2.0
    tau = n_target * np.exp(-dbeta * e) / np.exp(-dbeta * e).sum()
    F = rng.normal(size=200)
    counts = np.array([A.resample_counts(e, dbeta, n_target, rng) for _ in range(10_000)])
    sizes = counts.sum(1)
    assert abs(sizes.mean() - n_target) <= 3 * sizes.std() / np.sqrt(sizes.size)
    fsum = counts @ F
    assert abs(fsum.mean() - tau @ F) <= 3 * fsum.std() / np.sqrt(fsum.size)
    # stochastic rounding: copies are floor(tau) or floor(tau) + 1
    assert np.all((counts >= np.floor(tau)) & (counts <= np.floor(tau) + 1))


def test_empty_resample_keeps_lowest_energy_member():
    pop = A.Population(np.arange(6.0).reshape(3, 2), np.array([5.0, 1.0, 3.0]),
                       np.ones(3), np.zeros(3, dtype=np.int64))
    out = A.resample(pop, 1.0, 0, 0)
    assert out.size == 1
    np.testing.assert_array_equal(out.states_w, [[2.0, 3.0]])


def test_copies_are_independent():
    pop = A.Population(np.zeros((1, 2)), np.zeros(1), np.ones(1), np.zeros(1, dtype=np.int64))
    out = A.resample(pop, 1.0, 3, 0)
    out.states_w[0] += 1.0
    out.steps[1] = 5.0
    assert out.states_w[1, 0] == 0.0 and out.steps[0] == 1.0


# -- moves, acceptance, step size ----------------------------------------

def test_mh_accept_rules():
    assert A.mh_accept(1.0, 0.5, 3.0, 0) and A.mh_accept(1.0, 1.0, 3.0, 0)
    assert A.mh_accept(np.inf, 1e300, 3.0, 0)
    assert not A.mh_accept(1.0, np.inf, 3.0, 0)


def test_mh_acceptance_frequency():
    beta, n = 4.0, 100_000
    ok = A.mh_accept(np.zeros(n), np.full(n, 1 / beta), beta, 0)
    p = np.exp(-1.0)
    assert abs(ok.mean() - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_adapt_step_examples():
    np.testing.assert_allclose(A.adapt_step([2.0, 2.0, 2.0], [0.25, 0.0, 1.0], 0.25, 1.0),
                               [2.0, 1.5, 3.5])
    assert A.adapt_step([1e-12], [0.0], 0.9, 1.0)[0] == 1e-12


def test_random_move_moments_and_admissibility(three_bar, three_bar_E):
    metric = three_bar.metric(1e4)
    basis = three_bar_E.basis(metric)
    zw = to_weighted(three_bar_E.z0, metric)
    rng = np.random.default_rng(2)
    moves = A.random_move(np.tile(zw, (10_000, 1)), 0.3, basis, rng) - zw
    se = 0.3 / np.sqrt(10_000)
    assert np.all(np.abs(moves.mean(0)) <= 4 * se)
    np.testing.assert_allclose(np.linalg.eigvalsh(np.cov(moves.T))[-3:], 0.09, rtol=0.05)
    z = zw[None].copy()
    for _ in range(10_000):
        z = A.random_move(z, 0.3, basis, rng)
    from ddinfer.phase_space import from_weighted
    eq, comp = admissibility_residual(from_weighted(z[0], metric), three_bar_E)
    assert max(eq, comp) <= 1e-7 * max(1.0, np.abs(z).max())


def test_detailed_balance_one_member():
    # one bar under unit load: E is the line sig = 1, eps free
    pts = [[0.5, 1.0], [1.5, 1.2], [3.0, 0.8], [3.3, 1.0]]
    beta = 4.0
    m = _model(single_bar(), pts, beta)
    basis = m.E.basis(m.metric)
    z0w = to_weighted(m.E.z0, m.metric)
    t = np.linspace(-4, 8, 24_001)
    phi = m.phi(z0w + t[:, None] * basis[:, 0], np.array([beta]))
    dens = np.exp(-(phi - phi.min()))
    cdf = np.cumsum(dens)
    cdf /= cdf[-1]

    rng = np.random.default_rng(3)
    n_walkers, n_record = 10_000, 100
    Zw = np.tile(z0w, (n_walkers, 1))
    e = m.energy(Zw, np.array([beta]))
    samples = []
    for k in range(300 + n_record):
        trial = A.random_move(Zw, 0.8, basis, rng)
        et = m.energy(trial, np.array([beta]))
        ok = A.mh_accept(e, et, beta, rng)
        Zw[ok], e[ok] = trial[ok], et[ok]
        if k >= 300:
            samples.append((Zw - z0w) @ basis[:, 0])
    x = np.concatenate(samples)
    assert x.size == 1_000_000
    ks = np.max(np.abs(np.searchsorted(np.sort(x), t, side="right") / x.size - cdf))
    assert ks <= 0.02


# -- initialization and min-dist -----------------------------------------

def test_projection_init_is_admissible(three_bar):
    rng = np.random.default_rng(4)
    m = _model(three_bar, np.column_stack([rng.uniform(0, 0.02, 50), rng.uniform(0, 200, 50)]),
               1e3, modulus=1e4)
    pop = A.initialize(m, 37, "projection", rng=0)
    assert pop.size == 37 and np.all(np.isinf(pop.energies))
    for z in pop.states(m):
        assert max(admissibility_residual(z, m.E)) <= 1e-8


def test_min_dist_recovers_elastic_solution(three_bar, three_bar_E):
    C = 1e4
    E = three_bar_E
    K = E.B.T @ (C * E.weights[:, None] * E.B)
    u = np.linalg.solve(K, E.f)
    eps = E.B @ u
    elastic = np.column_stack([eps, C * eps])
    m = _model(three_bar, elastic, 1e3, modulus=C)
    pop = A.initialize(m, 20, "min-dist", rng=0)
    Z = pop.states(m).reshape(20, 3, 2)
    hits = np.all(np.abs(Z - elastic) <= 1e-8 * np.abs(elastic).max(), axis=(1, 2))
    assert hits.any()
    # every other fixed point is farther from its data tuple
    sols, conv, hist = A.min_dist_solve(m, A.random_data_tuples(m, 20, 0), return_history=True)
    assert conv.all()
    assert np.all(np.diff(hist, axis=0) <= 1e-12)


def test_min_dist_single_bar_picks_admissible_point():
    pts = [[0.3, 1.0], [2.0, 5.0]]
    m = _model(single_bar(), pts, 1.0)
    z, conv = A.min_dist_solve(m, np.array([[0.25, 1.0]]))
    assert conv.all()
    np.testing.assert_allclose(z[0], [0.3, 1.0], rtol=1e-12)


# -- full runs -------------------------------------------------------------

def test_zero_quenches_returns_initial_population():
    m = _model(single_bar(), [[0.3, 1.0], [0.5, 1.0]], 10.0)
    pop0 = A.initialize(m, 10, rng=0)
    pop, hist = A.run(m, A.Schedule(0, (10.0,)), A.PAParams(n_target=10), population=pop0)
    assert pop is pop0 and hist == []


def test_run_concentrates_on_lone_admissible_point():
    m = _model(single_bar(), [[0.3, 1.0]], 1e4)
    params = A.PAParams(n_target=2000, n_trials=10, s0=0.1, seed=5)
    pop, hist = A.run(m, A.Schedule(30, (1e4,)), params)
    eps = pop.states(m)[:, 0]
    assert abs(eps.mean() - 0.3) <= 3 * eps.std() / np.sqrt(eps.size)
    # posterior is a Gaussian with variance 1/(2 beta) along the member strain
    assert eps.std() == pytest.approx(np.sqrt(1 / 2e4), rel=0.1)
    for q, rec in enumerate(hist):
        assert rec.betas == [(q + 1) * (1e4 / 30)]
    assert max(admissibility_residual(pop.states(m)[0], m.E)) <= 1e-8


def test_run_is_deterministic():
    m = _model(single_bar(), [[0.3, 1.0], [0.6, 1.1], [0.1, 0.9]], 50.0)
    params = A.PAParams(n_target=200, n_trials=5, seed=9)
    a, _ = A.run(m, A.Schedule(5, (50.0,)), params)
    b, _ = A.run(m, A.Schedule(5, (50.0,)), params)
    np.testing.assert_array_equal(a.states_w, b.states_w)


def test_params_validation():
    for kw in ({"n_target": 0}, {"n_trials": 0}, {"r_target": 1.0}, {"s0": 0.0},
               {"init_mode": "x"}, {"basis": "y"}):
        with pytest.raises(ValueError):
            A.PAParams(**kw)
