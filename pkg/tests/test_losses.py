import math

import numpy as np
import pytest

import gradcases
import oracles
from ulhm.errors import ConfigError, DataError, DegenerateError
from ulhm.toy.losses import (
    LossWeights,
    contrastive_anchor_mask,
    loss_centroid,
    loss_consist,
    loss_contrastive,
    loss_cross_entropy,
    loss_local,
    loss_recon,
)
from ulhm.toy.model import Modality, ULHMBatch, ULHMModel, total_ulhm_loss
from ulhm.toy.network import Network, NetworkSpec

UNIT_TOL = {"consist": 1e-5, "contrastive": 1e-5, "composite": 1e-4}


@pytest.mark.parametrize("name", sorted(gradcases.CASES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(name, seed):
    f, x, analytic = gradcases.CASES[name](seed)
    numeric = oracles.numeric_grad(f, x)
    assert oracles.rel_err(analytic, numeric) < UNIT_TOL.get(name, 1e-6)


def test_recon_gaussian_cases():
    v, g = loss_recon(np.ones((2, 3)), np.ones((2, 3)))
    assert v == 0.0 and not g.any()
    v, g = loss_recon(np.zeros((1, 1)), np.ones((1, 1)))
    assert v == 1.0 and g[0, 0] == -2.0


def test_recon_errors():
    with pytest.raises(DataError):
        loss_recon(np.zeros((1, 2)), np.array([[0.0, 0.5]]), "bernoulli")
    with pytest.raises(ConfigError):
        loss_recon(np.zeros((1, 2)), np.zeros((1, 2)), "poisson")


def test_consist_cases():
    z = np.random.default_rng(0).standard_normal((5, 3))
    assert loss_consist([z, z.copy()], LossWeights(lambda_eucl=1.0))[0] == pytest.approx(0.0, abs=1e-12)
    v, _ = loss_consist([z, 3.0 * z], LossWeights(lambda_cos=1.0, lambda_eucl=0.0))
    assert abs(v) < 1e-12
    with pytest.raises(DegenerateError):
        loss_consist([np.zeros((1, 2)), np.ones((1, 2))], LossWeights())


def test_consist_skips_semantic_pairs():
    z = np.random.default_rng(1).standard_normal((3, 4, 2))
    w = LossWeights(lambda_cos=1.0)
    full, _ = loss_consist(list(z), w, [False, True, True])
    ref = sum(loss_consist([z[0], z[k]], w)[0] for k in (1, 2))
    assert full == pytest.approx(ref, rel=1e-14)


def test_local_cases():
    assert loss_local(np.ones((4, 2)), np.array([[0, 1], [1, 2]]))[0] == 0.0
    z = np.array([[0.0], [1.0]])
    assert loss_local(z, np.array([[0, 1], [1, 0]]))[0] == 2.0


def test_contrastive_cases():
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    v, g = loss_contrastive(z, [0, 0], [0, 1], 0.1)
    assert v == 0.0 and np.abs(g).max() < 1e-12
    y, dom = [0, 1, 1], [0, 0, 1]
    assert contrastive_anchor_mask(y, dom).tolist() == [False, True, True]
    zz = np.random.default_rng(2).standard_normal((3, 2))
    v, g = loss_contrastive(zz, y, dom, 0.5)
    # the skipped anchor contributes no term of its own; it enters only through denominators
    u = zz / np.linalg.norm(zz, axis=1, keepdims=True)
    s = u @ u.T / 0.5
    ref = -(s[1, 2] - math.log(math.exp(s[1, 0]) + math.exp(s[1, 2])))
    ref += -(s[2, 1] - math.log(math.exp(s[2, 0]) + math.exp(s[2, 1])))
    assert v == pytest.approx(ref, rel=1e-12)


def test_centroid_cases():
    z = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert loss_centroid(z, [0, 0], [0, 1])[0] == 4.0
    zz = np.ones((4, 2))
    assert loss_centroid(zz, [0, 0, 1, 1], [0, 1, 0, 1])[0] == 0.0


def test_cross_entropy_cases():
    logits = np.zeros((3, 5))
    logits[np.arange(3), [0, 2, 4]] = 1e3
    assert loss_cross_entropy(logits, [0, 2, 4])[0] < 1e-6
    assert loss_cross_entropy(np.zeros((4, 7)), [0, 1, 2, 3])[0] == pytest.approx(math.log(7), rel=1e-15)
    with pytest.raises(DataError):
        loss_cross_entropy(np.zeros((1, 2)), [2])


def _linear(w):
    return Network(NetworkSpec((w.shape[1], w.shape[0])), [w], [np.zeros(w.shape[0])])


def test_composite_perfect_autoencoder_zero():
    x = np.random.default_rng(3).standard_normal((6, 3))
    model = ULHMModel([Modality("x", _linear(np.eye(3)), _linear(np.eye(3)))])
    w = LossWeights(lambda_c=0.0, lambda_l=0.0, lambda_cos=0.0, lambda_cont=0.0, lambda_cent=0.0)
    assert total_ulhm_loss(model, ULHMBatch([x], [x]), w)[0] == 0.0


def test_composite_local_zero_for_identical_latents():
    x = np.ones((5, 3))
    model = ULHMModel([Modality("x", _linear(np.eye(3)), None)])
    edges = np.array([[0, 1], [2, 3], [4, 0]])
    _, comp = total_ulhm_loss(model, ULHMBatch([x], [None], edges=[edges]), LossWeights())
    assert comp["local"] == 0.0


def test_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(lambda_l=-1.0)
    with pytest.raises(ConfigError):
        LossWeights(temperature=0.0)
