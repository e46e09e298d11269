import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddinfer.material_data import (DataFormatError, LocalDataSet, beta_estimate, load,
                                   material_metric, sample_sliding_gaussian,
                                   sample_weibull_bimodal, save, weibull_cdf)

UNIT = material_metric(1.0)


def _data(points):
    pts = np.asarray(points, dtype=float)
    return LocalDataSet(pts, np.ones(len(pts)))


@pytest.mark.parametrize("delta", [1e-3, 0.5, 7.0])
def test_beta_two_points(delta):
    assert beta_estimate(_data([[0, 0], [delta, 0]]), UNIT) == pytest.approx(1 / delta**2, rel=1e-12)


def test_beta_three_collinear_points():
    delta = 0.2
    D = _data([[0, 0], [0, delta], [0, 3 * delta]])
    assert 1 / beta_estimate(D, UNIT) == pytest.approx(2 * delta**2, rel=1e-12)


def test_beta_uses_the_material_metric():
    # weighted distance of (d_eps, d_sig) is sqrt(C d_eps^2 + d_sig^2 / C)
    D = _data([[0, 0], [0.01, 0]])
    assert beta_estimate(D, material_metric(100.0)) == pytest.approx(1 / (100 * 1e-4))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100.0))
def test_beta_scaling_and_permutation(seed, alpha):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(40, 2))
    b = beta_estimate(_data(pts), UNIT)
    np.testing.assert_allclose(beta_estimate(_data(alpha * pts), UNIT), b / alpha**2, rtol=1e-9)
    np.testing.assert_allclose(beta_estimate(_data(rng.permutation(pts)), UNIT), b, rtol=1e-12)


def test_beta_errors():
    with pytest.raises(ValueError):
        beta_estimate(_data([[1, 1], [1, 1]]), UNIT)
    with pytest.raises(ValueError):
        beta_estimate(_data([[1, 1]]), UNIT)


def test_sliding_gaussian_noiseless_limit():
    D = sample_sliding_gaussian(250.0, 0.0, [-1, 1], 100, rng=0)
    np.testing.assert_allclose(D.stresses[:, 0], 250.0 * D.strains[:, 0], rtol=1e-15)
    np.testing.assert_array_equal(D.confidences, 1.0)


def test_sliding_gaussian_moments():
    C, s, M = 1e4, 5e-4, 100_000
    D = sample_sliding_gaussian(C, s, [0, 0.02], M, rng=1)
    eps = D.strains[:, 0]
    r = D.stresses[:, 0] - C * eps
    s_eff = s * np.sqrt(C)
    assert abs(r.mean()) < 4 * s_eff / np.sqrt(M)
    assert r.var() == pytest.approx(s_eff**2, rel=0.1)
    assert abs(np.corrcoef(eps, r)[0, 1]) < 4 / np.sqrt(M)
    assert eps.min() >= 0 and eps.max() <= 0.02


def test_sliding_gaussian_member_weight():
    D = sample_sliding_gaussian(1.0, 1.0, [0, 1], 100_000, rng=2, weight=4.0)
    assert np.std(D.stresses[:, 0] - D.strains[:, 0]) == pytest.approx(0.5, rel=0.02)


def test_weibull_cdf_values():
    np.testing.assert_allclose(weibull_cdf([0.0, -5.0, 120.0], 120.0, 4.0), [0, 0, 1 - np.exp(-1)])


@pytest.mark.parametrize("eps", [0.006, 0.012, 0.018])
def test_weibull_branch_frequency(eps):
    C, sigma0, p, M = 1e4, 120.0, 4.0, 10_000
    _, failed = sample_weibull_bimodal(C, sigma0, p, 0.0, [eps, eps * (1 + 1e-12)], M,
                                       rng=3, return_branches=True)
    W = weibull_cdf(C * eps, sigma0, p)
    se = np.sqrt(W * (1 - W) / M)
    assert abs(failed.mean() - W) <= 3 * se


def test_weibull_branches_are_linear_and_compression_never_fails():
    C = 1e4
    D, failed = sample_weibull_bimodal(C, 120.0, 4.0, 0.0, [-0.01, 0.03], 5000, rng=4,
                                       return_branches=True)
    eps, sig = D.strains[:, 0], D.stresses[:, 0]
    np.testing.assert_array_equal(sig[failed], 0.0)
    np.testing.assert_allclose(sig[~failed], C * eps[~failed], rtol=1e-15)
    assert not failed[eps < 0].any()
    assert failed.any() and (~failed[eps > 0]).any()


def test_weibull_noise_level():
    C, s = 1e4, 1e-4
    D, failed = sample_weibull_bimodal(C, 120.0, 4.0, s, [0, 0.02], 50_000, rng=5,
                                       return_branches=True)
    resid = D.stresses[:, 0] - np.where(failed, 0.0, C * D.strains[:, 0])
    assert resid.std() == pytest.approx(s * np.sqrt(C), rel=0.02)


def test_generator_validation():
    with pytest.raises(ValueError):
        sample_sliding_gaussian(1.0, 1.0, [0, 1], 0)
    with pytest.raises(ValueError):
        sample_sliding_gaussian(1.0, 1.0, [1, 0], 10)
    with pytest.raises(ValueError):
        sample_weibull_bimodal(1.0, -1.0, 4.0, 0.0, [0, 1], 10)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    D = LocalDataSet(rng.normal(size=(50, 4)), rng.uniform(size=50), "steel", 3.25e5)
    save(D, tmp_path / "d.txt")
    back = load(tmp_path / "d.txt")
    np.testing.assert_array_equal(back.points, D.points)
    np.testing.assert_array_equal(back.confidences, D.confidences)
    assert (back.material, back.beta, back.d) == ("steel", D.beta, 2)


@pytest.mark.parametrize("text", ["", "# material=a d=1\n", "1 2 0.5\n1 2\n", "1 2 3 4\n",
                                  "1 x 1\n", "# d=2\n1 2 1\n"])
def test_load_rejects_malformed_files(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(DataFormatError):
        load(path)


def test_confidence_out_of_range(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("0.1 1.0 1.5\n")
    with pytest.raises(DataFormatError):
        load(path)
    with pytest.raises(DataFormatError):
        LocalDataSet(np.zeros((1, 2)), [-0.1])
