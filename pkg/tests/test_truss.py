import numpy as np
import pytest
import yaml

from ddinfer.phase_space import from_weighted, norm, to_weighted
from ddinfer.truss import (GeometryError, MechanismError, admissibility_residual, airy_basis,
                           assemble, exact_basis, load_truss, pca_basis, project, project_direct,
                           save_truss, truss_from_dict)

from conftest import random_truss, single_bar


def test_single_bar_assembly():
    tr = single_bar()
    E = assemble(tr)
    np.testing.assert_allclose(E.B, [[1.0]])
    np.testing.assert_allclose(E.weights, [1.0])
    np.testing.assert_allclose(E.sigma0, [1.0])
    np.testing.assert_allclose(E.eps0, [0.0])
    assert E.l == 0 and E.airy.shape == (1, 0)


def test_three_bar_assembly(three_bar, three_bar_E):
    E = three_bar_E
    r = 1 / np.sqrt(2)
    # rows: (u_b - u_a).d / L for bars from the free node to the supports
    np.testing.assert_allclose(E.B, [[0.5, -0.5], [0.0, -1.0], [-0.5, -0.5]], atol=1e-15)
    np.testing.assert_allclose(E.weights, [np.sqrt(2), 1.0, np.sqrt(2)])
    assert (E.n, E.l, E.N) == (2, 1, 3)
    np.testing.assert_allclose(E.B.T @ (E.weights * E.sigma0), E.f, atol=1e-10)
    np.testing.assert_allclose(E.B.T @ (E.weights[:, None] * E.airy), 0.0, atol=1e-10)
    a = E.airy[:, 0] / E.airy[0, 0]
    np.testing.assert_allclose(a, [1.0, -2 * r, 1.0], atol=1e-12)


def test_homogeneous_case_gives_zero_particular_solution(three_bar):
    E = assemble(three_bar.scaled(load_factor=0.0))
    np.testing.assert_array_equal(E.z0, 0.0)


def test_airy_basis_contains_planted_vector():
    rng = np.random.default_rng(3)
    N, n = 8, 5
    w = rng.uniform(0.5, 2.0, N)
    planted = rng.normal(size=N)
    # B^T W planted = 0: columns of B orthogonal to W planted
    Q, _ = np.linalg.qr(np.column_stack([w * planted, rng.normal(size=(N, n))]))
    B = Q[:, 1:n + 1] @ rng.normal(size=(n, n))
    A = airy_basis(B, w)
    assert A.shape == (N, N - n)
    resid = planted - A @ np.linalg.lstsq(A, planted, rcond=None)[0]
    assert np.linalg.norm(resid) < 1e-10 * np.linalg.norm(planted)


@pytest.mark.parametrize("seed", range(20))
def test_dimension_identity_and_orthogonality(seed):
    tr = random_truss(np.random.default_rng(seed))
    E = assemble(tr)
    assert E.n + E.l == E.N == tr.m
    assert np.abs(E.B.T @ (E.weights[:, None] * E.airy)).max() <= 1e-10
    assert np.abs(E.B.T @ (E.weights * E.sigma0) - E.f).max() <= 1e-10
    metric = tr.metric(1e3)
    A_E = exact_basis(E, metric)
    np.testing.assert_allclose(A_E.T @ A_E, np.eye(E.N), atol=1e-10)
    # every column is a homogeneous admissible direction
    for col in from_weighted(A_E.T, metric):
        eq, comp = admissibility_residual(col + E.z0, E)
        assert eq <= 1e-10 and comp <= 1e-10


def test_strain_and_stress_directions_orthogonal(three_bar, three_bar_E):
    metric = three_bar.metric(1e4)
    A_E = exact_basis(three_bar_E, metric)
    Se = A_E[:, :three_bar_E.n]
    Ss = A_E[:, three_bar_E.n:]
    np.testing.assert_allclose(Se.T @ Ss, 0.0, atol=1e-12)


def test_projection_properties(three_bar, three_bar_E):
    E, metric = three_bar_E, three_bar.metric(1e4)
    rng = np.random.default_rng(0)
    y = rng.normal(size=(50, 6)) * np.tile([0.01, 100.0], 3)
    P = project(y, E, metric)
    for p in P:
        eq, comp = admissibility_residual(p, E)
        assert eq <= 1e-9 and comp <= 1e-9
    np.testing.assert_allclose(project(P, E, metric), P, atol=1e-12)
    np.testing.assert_allclose(P, project_direct(y, E, metric), rtol=1e-9, atol=1e-12)
    # minimality against random admissible states
    A_E = E.basis(metric)
    z0w = to_weighted(E.z0, metric)
    Zs = from_weighted(z0w + rng.normal(size=(100, 3)) @ A_E.T * 10, metric)
    for yi, pi in zip(y[:5], P[:5]):
        assert np.all(norm(yi - pi, metric) <= norm(yi - Zs, metric) + 1e-12)
    # non-expansive
    d_in = norm(y[1:] - y[:-1], metric)
    d_out = norm(P[1:] - P[:-1], metric)
    assert np.all(d_out <= d_in * (1 + 1e-12))


def test_projection_is_identity_on_E(three_bar, three_bar_E):
    metric = three_bar.metric(1e4)
    z = project(np.ones(6), three_bar_E, metric)
    np.testing.assert_allclose(project(z, three_bar_E, metric), z, rtol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_pca_basis_agrees_with_exact(seed):
    tr = random_truss(np.random.default_rng(100 + seed))
    E = assemble(tr)
    metric = tr.metric(2e3)
    A_pca = pca_basis(E, metric, rng=seed)
    A_ex = exact_basis(E, metric)
    np.testing.assert_allclose(A_pca.T @ A_pca, np.eye(E.N), atol=1e-10)
    np.testing.assert_allclose(A_pca @ A_pca.T, A_ex @ A_ex.T, atol=1e-8)
    v = A_ex @ np.random.default_rng(seed).normal(size=E.N)
    assert np.linalg.norm(A_pca @ (A_pca.T @ v) - v) <= 1e-8 * np.linalg.norm(v)


def test_residual_grows_linearly_off_E(three_bar, three_bar_E):
    E = three_bar_E
    direction = np.zeros(6)
    direction[1] = 1.0      # stress of bar 1 alone breaks equilibrium
    direction[0] = 1.0      # strain of bar 1 alone breaks compatibility
    r = np.array([admissibility_residual(E.z0 + eta * direction, E) for eta in (1e-3, 1e-2, 1e-1)])
    np.testing.assert_allclose(r[1] / r[0], 10.0, rtol=1e-6)
    np.testing.assert_allclose(r[2] / r[1], 10.0, rtol=1e-6)


def test_mechanism_is_reported():
    tr = single_bar()
    data = {"dim": 2,
            "nodes": [{"id": 1, "x": [0, 0], "fixed": [True, True]},
                      {"id": 2, "x": [1, 0], "fixed": [False, False], "load": [1, 0]}],
            "bars": [{"id": 1, "a": 1, "b": 2, "area": 1.0, "material": "m"}]}
    with pytest.raises(MechanismError):
        assemble(truss_from_dict(data))
    assert assemble(tr).n == 1


@pytest.mark.parametrize("edit,exc", [
    (lambda d: d["bars"].append({"id": 2, "a": 1, "b": 1, "area": 1.0, "material": "m"}), GeometryError),
    (lambda d: d["bars"].append({"id": 1, "a": 1, "b": 2, "area": 1.0, "material": "m"}), GeometryError),
    (lambda d: d["bars"].append({"id": 3, "a": 1, "b": 9, "area": 1.0, "material": "m"}), GeometryError),
    (lambda d: d["nodes"].append({"id": 1, "x": [5, 5], "fixed": [True, True]}), GeometryError),
])
def test_geometry_validation(edit, exc):
    data = {"dim": 2,
            "nodes": [{"id": 1, "x": [0, 0], "fixed": [True, True]},
                      {"id": 2, "x": [1, 0], "fixed": [False, True], "load": [1, 0]}],
            "bars": [{"id": 1, "a": 1, "b": 2, "area": 1.0, "material": "m"}]}
    edit(data)
    with pytest.raises(exc):
        truss_from_dict(data)


def test_yaml_round_trip(tmp_path, three_bar):
    path = tmp_path / "t.yaml"
    save_truss(three_bar, path)
    back = load_truss(path)
    np.testing.assert_array_equal(back.coords, three_bar.coords)
    np.testing.assert_array_equal(assemble(back).B, assemble(three_bar).B)
    assert yaml.safe_load(path.read_text())["dim"] == 2


def test_prescribed_displacement_enters_g():
    from ddinfer.scenarios import data_dir
    tr = load_truss(data_dir() / "three_bar_weibull.yaml").scaled(disp_factor=0.02)
    E = assemble(tr)
    assert E.n == 0 and E.l == 3
    # strain = (u_b - u_a).d / L with u_a the driven node
    u = 0.02 * np.array([2.0, -1.0]) / np.sqrt(5)
    d = tr.directions
    np.testing.assert_allclose(E.g, -(d @ u) / tr.lengths, rtol=1e-12)
