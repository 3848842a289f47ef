"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import countfuse as cf

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_mesh_and_projector():
    mesh = cf.build_mesh(UNIT_SQUARE, 0.3, 0.3, 0.2)
    assert mesh.n_nodes >= 16
    assert mesh.total_area() > 1.0  # polygon plus buffer
    assert np.all(mesh.mass > 0)

    # stiffness rows sum to zero
    stiff = mesh.stiffness
    rowsum = np.zeros(mesh.n_nodes)
    np.add.at(rowsum, np.asarray(stiff["row"]), np.asarray(stiff["data"]))
    assert np.max(np.abs(rowsum)) < 1e-10

    pts = np.array([[0.5, 0.5], [0.25, 0.75], [5.0, 5.0]])
    proj = mesh.projector(pts)
    rowsum = np.zeros(3)
    np.add.at(rowsum, np.asarray(proj["row"]), np.asarray(proj["data"]))
    assert rowsum[0] == pytest.approx(1.0, abs=1e-12)
    assert rowsum[1] == pytest.approx(1.0, abs=1e-12)
    assert proj["outside"] == [False, False, True]
    assert rowsum[2] == 0.0


def test_matern_and_pc_prior():
    assert cf.matern_cov(0.0, 1.0, 2.0) == pytest.approx(4.0)
    # frozen high-precision value of sqrt(8) K_1(sqrt(8))
    assert cf.matern_cov(1.0, 1.0, 1.0) == pytest.approx(0.13966747401529314, rel=1e-9)

    from scipy.integrate import dblquad

    # P(rho < 20000): the sigma mass beyond 40 is negligible
    p_below, _ = dblquad(
        lambda s, r: math.exp(cf.pc_prior_logpdf(r, s, 20000.0, 0.1, 1.0, 0.1)),
        1.0, 20000.0, 1e-9, 40.0,
    )
    assert p_below == pytest.approx(0.1, abs=1e-4)


def test_grf_sampling_is_deterministic():
    mesh = cf.build_mesh(UNIT_SQUARE, 0.25, 0.25, 0.25)
    a = cf.sample_grf(mesh, 0.5, 1.0, seed=7)
    b = cf.sample_grf(mesh, 0.5, 1.0, seed=7)
    c = cf.sample_grf(mesh, 0.5, 1.0, seed=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (mesh.n_nodes,)


def test_scores_match_numpy_oracles():
    rng = np.random.default_rng(3)
    loglik = rng.normal(-2.0, 0.3, size=(50, 4))
    lppd = np.log(np.exp(loglik).mean(axis=0)).sum()
    penalty = loglik.var(axis=0, ddof=1).sum()
    assert cf.waic(loglik) == pytest.approx(-2.0 * (lppd - penalty), rel=1e-12)

    cpo, lpml = cf.cpo_lpml(loglik)
    want = 1.0 / np.mean(np.exp(-loglik), axis=0)
    assert np.allclose(cpo, want)
    assert lpml == pytest.approx(np.log(want).sum(), rel=1e-9)

    draws = rng.normal(size=2000)
    term1 = np.abs(draws - 0.3).mean()
    term2 = np.abs(draws[:, None] - draws[None, :]).mean()
    assert cf.crps_empirical(draws.tolist(), 0.3) == pytest.approx(term1 - 0.5 * term2, rel=1e-9)

    bias, rmse = cf.bias_rmse([1.0, 3.0], 2.0)
    assert bias == pytest.approx(0.0)
    assert rmse == pytest.approx(1.0)


def test_simulate_and_fit_roundtrip():
    sim = cf.simulate_scenario(1, seed=11, n_sites_a=24, n_sites_b=14,
                               domain_size=40000.0, max_edge=7000.0, buffer_width=10000.0)
    assert len(sim["country"]) == 38
    assert set(sim["obs_source"]) == {1, 2, 3, 4}

    mesh = cf.build_mesh(
        np.array([[0.0, 0.0], [40000.0, 0.0], [40000.0, 40000.0], [0.0, 40000.0]]),
        7000.0, 7000.0, 10000.0,
    )
    result = cf.fit(
        mesh, "M1", sim["site_xy"], sim["country"], sim["obs_site"], sim["obs_source"],
        np.asarray(sim["obs_y"]), sim["covariates"], sim["covariate_names"],
        n_samples=400, seed=5, nm_max_evals=900,
    )
    params = result["parameters"]
    assert "Intercept" in params and "zeta2" in params
    assert params["Intercept"]["q025"] <= params["Intercept"]["q50"] <= params["Intercept"]["q975"]
    # generator intercept is beta0 + log(zeta1*) = 4.70 + log(0.91)
    assert abs(params["Intercept"]["mean"] - 4.606) < 1.0
    assert result["weights"].sum() == pytest.approx(1.0)

    with pytest.raises(ValueError):
        cf.fit(mesh, "M9", sim["site_xy"], sim["country"], sim["obs_site"],
               sim["obs_source"], np.asarray(sim["obs_y"]), sim["covariates"],
               sim["covariate_names"])
