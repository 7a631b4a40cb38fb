import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mobclust import autodiff as ad
from mobclust import objective as obj
from mobclust.autodiff import Tape, Tensor
from mobclust.model import forward

from conftest import check_all_term_gradients, small_model


def probs(k, rows, seed):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(k), size=rows)


# -- categorical KL ------------------------------------------------------------

def test_kl_categorical_uniform_is_zero():
    assert obj.kl_categorical(np.full((3, 6), 1 / 6)).item() == pytest.approx(0.0, abs=1e-15)


def test_kl_categorical_one_hot_is_log_k():
    q = np.eye(6)[[0, 3, 5]]
    assert obj.kl_categorical(q).item() == pytest.approx(math.log(6), abs=1e-12)


def test_kl_categorical_half_half():
    assert obj.kl_categorical([[0.5, 0.5, 0.0, 0.0]]).item() == pytest.approx(math.log(2), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 5), st.integers(0, 2**31))
def test_kl_categorical_nonnegative(k, rows, seed):
    q = probs(k, rows, seed)
    direct = np.mean([math.log(k) + sum(p * math.log(p) for p in row if p > 0) for row in q])
    val = obj.kl_categorical(q).item()
    assert val == pytest.approx(direct, abs=1e-12)
    assert val >= -1e-12


def test_kl_categorical_zero_only_for_uniform():
    assert obj.kl_categorical([[0.26, 0.24, 0.25, 0.25]]).item() > 0


# -- Gaussian term -------------------------------------------------------------

@pytest.mark.parametrize("L", [1, 2, 7])
def test_kl_gaussian_standard_normal_is_latent_dim(L):
    assert obj.kl_gaussian(np.zeros((4, L)), np.zeros((4, L))).item() == pytest.approx(L, abs=1e-12)


def test_kl_gaussian_hand_value():
    assert obj.kl_gaussian([[1.0, 0.0]], [[0.0, 0.0]]).item() == pytest.approx(3.0, abs=1e-12)


def test_kl_gaussian_stationary_at_zero_mean():
    mu = Tensor(np.zeros((2, 3)), requires_grad=True)
    with Tape() as tape:
        val = obj.kl_gaussian(mu, Tensor(np.zeros((2, 3))))
    np.testing.assert_array_equal(tape.backward(val, wrt=[mu])[mu], np.zeros((2, 3)))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)),
       arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_kl_gaussian_at_least_latent_dim(mu, lv):
    assert obj.kl_gaussian(mu, lv).item() >= 4 - 1e-12


# -- reconstruction ------------------------------------------------------------

def test_reconstruction_loss_composition():
    x = np.array([[1.0, 2.0, 3.0]])
    val = obj.reconstruction_loss(x, x, np.full((1, 4), 0.25), np.zeros((1, 5)), np.zeros((1, 5)))
    assert val.item() == pytest.approx(5.0, abs=1e-12)


def test_reconstruction_terms_are_additive(rng):
    x = rng.normal(size=(4, 3))
    xr = x + rng.normal(size=(4, 3))
    q, mu, lv = probs(3, 4, 1), rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    total = obj.reconstruction_loss(x, xr, q, mu, lv).item()
    perfect = obj.reconstruction_loss(x, x, q, mu, lv).item()
    assert total - perfect == pytest.approx(obj.reconstruction_error(x, xr).item(), rel=1e-12)
    doubled = obj.reconstruction_loss(x, x + math.sqrt(2) * (xr - x), q, mu, lv).item()
    assert doubled - perfect == pytest.approx(2 * (total - perfect), rel=1e-12)


def test_reconstruction_error_is_mean_per_instance_squared_norm():
    x = np.array([[0.0, 0.0], [1.0, 1.0]])
    xr = np.array([[3.0, 4.0], [1.0, 1.0]])
    assert obj.reconstruction_error(x, xr).item() == 12.5


# -- clustering terms ----------------------------------------------------------

CENTERS = np.array([[0.0, 0.0], [3.0, 4.0]])


def test_original_space_hand_example_uncapped():
    val = obj.clustering_loss_original([[0.0, 0.0]], CENTERS[[0]], CENTERS, margin=None)
    assert val.item() == pytest.approx(-25.0, abs=1e-12)


def test_original_space_hand_example_with_default_cap():
    val = obj.clustering_loss_original([[0.0, 0.0]], CENTERS[[0]], CENTERS)
    assert val.item() == pytest.approx(-obj.DEFAULT_MARGIN, abs=1e-12)


def test_cap_above_distance_is_inactive():
    val = obj.clustering_loss_original([[0.0, 0.0]], CENTERS[[0]], CENTERS, margin=25.0)
    assert val.item() == pytest.approx(-25.0, abs=1e-12)


def test_identical_centers_leave_intra_only(rng):
    x = rng.normal(size=(3, 2))
    c = np.tile([[1.0, -1.0]], (4, 1))
    val = obj.clustering_loss_original(x, c[:3], c, margin=None).item()
    assert val == pytest.approx(np.mean(((x - [1.0, -1.0]) ** 2).sum(axis=1)), rel=1e-12)


def test_instance_at_center_contributes_nothing():
    val = obj.clustering_loss_original(CENTERS[[1]], CENTERS[[1]], CENTERS, margin=None)
    assert val.item() == pytest.approx(-25.0, abs=1e-12)


def test_latent_space_mirrors_original_space():
    assert obj.clustering_loss_latent([[0.0, 0.0]], CENTERS[[0]], CENTERS, margin=None).item() \
        == pytest.approx(-25.0, abs=1e-12)
    c = np.tile([[2.0, 2.0]], (3, 1))
    assert obj.clustering_loss_latent([[2.0, 2.0]], c[[0]], c).item() == 0.0


def test_pairs_counted_once():
    c = np.array([[0.0], [1.0], [3.0]])
    # pairs: 1 + 9 + 4
    assert obj.inter_center_term(c, margin=None).item() == pytest.approx(14.0)
    assert obj.inter_center_term(c[:1]).item() == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31), st.sampled_from([None, 2.0, 50.0]))
def test_cluster_relabeling_invariance(k, seed, margin):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(k, 3))
    x = rng.normal(size=(5, 3))
    assign = rng.integers(0, k, 5)
    perm = rng.permutation(k)
    inv = np.argsort(perm)
    a = obj.clustering_loss_original(x, centers[assign], centers, margin).item()
    b = obj.clustering_loss_original(x, centers[perm][inv[assign]], centers[perm], margin).item()
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_cap_stops_gradient_beyond_margin():
    c = Tensor(CENTERS, requires_grad=True)
    with Tape() as tape:
        val = obj.inter_center_term(c, margin=10.0)
    np.testing.assert_array_equal(tape.backward(val, wrt=[c])[c], np.zeros((2, 2)))


# -- total ---------------------------------------------------------------------

def forward_pass(rng, n=4):
    p = small_model(rng, D=2, K=2, H=3, L=2)
    x = rng.normal(size=(n, 2))
    fp = forward(x, p, 0.5, gumbel_noise=rng.gumbel(size=(n, 2)), gauss_eps=rng.normal(size=(n, 2)))
    return x, p, fp


def test_zero_weights_total_is_reconstruction(rng):
    x, p, fp = forward_pass(rng)
    from mobclust.model import centers
    br = obj.total_loss(x, fp, *centers(p), 0.0, 0.0)
    assert br.total == pytest.approx(br.reconstruction, rel=1e-15)
    assert br.loss_original == br.loss_latent == 0.0


def test_total_with_hand_example(rng):
    _, p, fp = forward_pass(rng, n=1)
    fp.x_c = Tensor([[0.0, 0.0]])
    x = Tensor([[0.0, 0.0]])
    br = obj.total_loss(x, fp, Tensor(CENTERS), Tensor(CENTERS), 1.0, 0.0, margin=None)
    assert br.loss_original == pytest.approx(-25.0)
    assert br.total == pytest.approx(br.reconstruction - 25.0, rel=1e-12)


def test_total_invariant_and_lambda_linearity(rng):
    from mobclust.model import centers
    x, p, fp = forward_pass(rng)
    b1 = obj.total_loss(x, fp, *centers(p), 0.3, 0.2)
    b2 = obj.total_loss(x, fp, *centers(p), 0.3, 0.4)
    assert b1.total == pytest.approx(b1.reconstruction + 0.3 * b1.loss_original
                                     + 0.2 * b1.loss_latent, rel=1e-12)
    assert (b2.total - b2.reconstruction - 0.3 * b2.loss_original) == pytest.approx(
        2 * (b1.total - b1.reconstruction - 0.3 * b1.loss_original), rel=1e-12)


def test_negative_weights_rejected(rng):
    from mobclust.model import centers
    x, p, fp = forward_pass(rng)
    with pytest.raises(ValueError):
        obj.total_loss(x, fp, *centers(p), -0.1, 0.1)


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_term_is_named(rng):
    from mobclust.model import centers
    x, p, fp = forward_pass(rng)
    huge = Tensor(np.full((4, 2), 1e200))
    with pytest.raises(obj.LossTermError) as info:
        obj.total_loss(huge, fp, *centers(p), 0.1, 0.1)
    assert info.value.term == "mse_recon"


# -- gradients -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(12))
def test_every_term_matches_finite_differences(seed):
    worst = check_all_term_gradients(seed)
    assert max(worst.values()) < 1e-4, worst
