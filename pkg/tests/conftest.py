import numpy as np
import pytest

from mobclust.model import ModelConfig, ModelParams


def central_diff(fn, arrays, h=1e-5):
    """Central differences of ``fn() -> 1-D array`` w.r.t. every entry of
    every array in ``arrays`` (perturbed in place, then restored).

    Returns {name: (n_outputs, *shape)}.
    """
    out = {}
    for name, a in arrays.items():
        base = np.asarray(fn())
        g = np.zeros((base.size,) + a.shape)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            up = np.asarray(fn())
            a[idx] = old - h
            down = np.asarray(fn())
            a[idx] = old
            g[(slice(None),) + idx] = (up - down) / (2 * h)
        out[name] = g
    return out


def rel_err(analytic, numeric, floor=1e-5):
    """Entrywise relative error.  The denominator is floored so entries whose
    true gradient is zero are compared absolutely (at ``1e-4 * floor``)
    instead of against finite-difference roundoff."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def small_model(rng, D=3, K=3, H=4, L=2, activation="tanh"):
    cfg = ModelConfig(D, K, hidden_dim=H, latent_dim=L, activation=activation)
    params = ModelParams.init(cfg, rng)
    # nonzero biases so every path is exercised
    for name, arr in params.arrays().items():
        if "_b" in name:
            arr[...] = rng.normal(scale=0.3, size=arr.shape)
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TERM_NAMES = ("mse_recon", "kl_categorical", "kl_gaussian", "reconstruction",
              "loss_original", "loss_latent", "total")


def loss_terms(x, params, gumbel, eps, tau=0.7, lambda1=0.3, lambda2=0.2, margin=None):
    """Every loss term as a tensor for one forward pass with fixed noise."""
    from mobclust import objective as obj
    from mobclust.autodiff import Tensor
    from mobclust.model import centers, forward

    fp = forward(x, params, tau, gumbel_noise=gumbel, gauss_eps=eps)
    cx, cz = centers(params)
    xt = Tensor(x)
    br = obj.total_loss(xt, fp, cx, cz, lambda1, lambda2, margin)
    return [obj.reconstruction_error(xt, fp.x_rec), obj.kl_categorical(fp.q_y),
            obj.kl_gaussian(fp.mu, fp.log_var),
            obj.reconstruction_loss(xt, fp.x_rec, fp.q_y, fp.mu, fp.log_var),
            obj.clustering_loss_original(xt, fp.x_c, cx, margin),
            obj.clustering_loss_latent(fp.z, fp.z_c, cz, margin), br.total_tensor]


def random_gradient_case(seed):
    """A random small configuration: (x, params, gumbel noise, gaussian eps, margin)."""
    rng = np.random.default_rng(seed)
    D, K, H, L = (int(v) for v in (rng.integers(2, 5), rng.integers(1, 5), rng.integers(2, 6), rng.integers(1, 4)))
    n = int(rng.integers(1, 6))
    params = small_model(rng, D, K, H, L, activation=("tanh", "relu")[seed % 2])
    x = rng.normal(size=(n, D))
    gumbel = rng.gumbel(size=(n, K))
    eps = rng.normal(size=(n, L))
    # alternate between uncapped and capped repulsion; keep away from the cap's kink
    margin = None if seed % 3 else 1e3
    return x, params, gumbel, eps, margin


def check_all_term_gradients(seed, h=1e-5):
    """Max relative error per loss term between tape gradients and central differences."""
    from mobclust.autodiff import Tape

    x, params, gumbel, eps, margin = random_gradient_case(seed)
    arrays = params.arrays()
    leaves = list(params.tensors.values())

    def values():
        return np.array([t.item() for t in loss_terms(x, params, gumbel, eps, margin=margin)])

    numeric = central_diff(values, arrays, h)
    worst = {}
    for i, name in enumerate(TERM_NAMES):
        with Tape() as tape:
            term = loss_terms(x, params, gumbel, eps, margin=margin)[i]
        grads = tape.backward(term, wrt=leaves)
        worst[name] = max(rel_err(grads[t], numeric[t.name][i]).max() for t in leaves)
    return worst


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def report_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    """Record one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
