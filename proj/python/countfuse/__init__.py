"""Joint spatial modeling of count surveys with different sampling protocols."""

from ._core import (
    InputError,
    NumericError,
    TriMesh,
    bias_rmse,
    build_mesh,
    cpo_lpml,
    crps_empirical,
    dic,
    fit,
    matern_cov,
    pc_prior_logpdf,
    sample_grf,
    simulate_scenario,
    spde_precision,
    waic,
)

__all__ = [
    "InputError",
    "NumericError",
    "TriMesh",
    "bias_rmse",
    "build_mesh",
    "cpo_lpml",
    "crps_empirical",
    "dic",
    "fit",
    "matern_cov",
    "pc_prior_logpdf",
    "sample_grf",
    "simulate_scenario",
    "spde_precision",
    "waic",
]
