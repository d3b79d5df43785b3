import numpy as np
import pytest

from ganhash import autodiff as ad

# one line per acceptance criterion, echoed after the test summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def finite_difference(f, x, h=1e-5):
    """Central-difference gradient of scalar f w.r.t. array x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def finite_difference_sampled(f, x, idx, h=1e-5):
    """Central differences at a subset of flat indices of x."""
    flat = x.reshape(-1)
    out = np.zeros(len(idx))
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[n] = (fp - fm) / (2.0 * h)
    return out


def grad_close(analytic, numeric, rtol=1e-4, floor=1e-7):
    """Relative-error comparison with an absolute floor for near-zero pairs."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    small = denom < floor
    rel = np.where(small, 0.0, np.abs(analytic - numeric) / np.where(small, 1.0, denom))
    return bool(np.all(rel <= rtol))


def check_gradients(build_loss, params, rng, rtol=1e-4, h=1e-5, max_coords=6):
    """Assert tape gradients of build_loss() match central differences.

    build_loss must construct the graph from the params' current data and
    return the scalar loss tensor.  For each param a random subset of
    coordinates (at most max_coords) is probed.
    """
    ad.zero_grads(params)
    loss = build_loss()
    ad.backward(loss)

    def value():
        with ad.no_grad():
            return build_loss().item()

    for p in params:
        assert p.grad is not None, "parameter missed by backward pass"
        n = p.data.size
        k = min(max_coords, n)
        idx = rng.choice(n, size=k, replace=False) if n > k else np.arange(n)
        numeric = finite_difference_sampled(value, p.data, idx, h=h)
        analytic = p.grad.reshape(-1)[idx]
        assert grad_close(analytic, numeric, rtol=rtol), (
            f"gradient mismatch: analytic={analytic}, numeric={numeric}"
        )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def f64():
    """Run the test with float64 tensors for finite-difference headroom."""
    ad.set_default_dtype(np.float64)
    yield
    ad.set_default_dtype(np.float32)
