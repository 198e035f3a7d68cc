"""Shared model builders for the test suite."""

import numpy as np
import pytest

from ssdgp import model_from_dict


def single_node_model(alpha=1, ell=0.5, sigma=1.0):
    """One observed Matern node with fixed hyperparameters (a plain GP)."""
    return model_from_dict(
        {
            "nodes": [
                {
                    "layer": 1,
                    "position": 1,
                    "alpha": alpha,
                    "lengthscale": {"fixed": ell},
                    "magnitude": {"fixed": sigma},
                }
            ]
        }
    )


def two_layer_model(sf=2.0, leaf_alpha=0, leaf_ell=0.5, leaf_sigma=1.0,
                    wrapping="exp", f_alpha=1):
    """f driven by one latent lengthscale process (the two-node hierarchy)."""
    return model_from_dict(
        {
            "nodes": [
                {
                    "layer": 1,
                    "position": 1,
                    "alpha": f_alpha,
                    "lengthscale": {"parent": [2, 1], "wrapping": wrapping},
                    "magnitude": {"fixed": sf},
                },
                {
                    "layer": 2,
                    "position": 1,
                    "alpha": leaf_alpha,
                    "lengthscale": {"fixed": leaf_ell},
                    "magnitude": {"fixed": leaf_sigma},
                },
            ]
        }
    )


def three_node_model():
    """f with both lengthscale and magnitude driven by latent processes."""
    return model_from_dict(
        {
            "nodes": [
                {
                    "layer": 1,
                    "position": 1,
                    "alpha": 1,
                    "lengthscale": {"parent": [2, 1], "wrapping": "exp"},
                    "magnitude": {"parent": [2, 2], "wrapping": "exp"},
                },
                {
                    "layer": 2,
                    "position": 1,
                    "alpha": 0,
                    "lengthscale": {"fixed": 0.5},
                    "magnitude": {"fixed": 1.0},
                },
                {
                    "layer": 2,
                    "position": 2,
                    "alpha": 0,
                    "lengthscale": {"fixed": 0.7},
                    "magnitude": {"fixed": 0.8},
                },
            ]
        }
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
