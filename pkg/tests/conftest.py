import numpy as np
import pytest

from c2fnet.data import generate_synthetic


def fd_gradient(loss_fn, x, h=1e-3):
    """Central finite differences of a scalar function wrt every element of x.

    x is perturbed in place (and restored); the effective step is measured
    after float32 rounding so the quotient uses the true perturbation.
    """
    grad = np.zeros(x.size, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(flat[i])
        f_hi = loss_fn()
        flat[i] = orig - h
        lo = float(flat[i])
        f_lo = loss_fn()
        flat[i] = orig
        grad[i] = (f_hi - f_lo) / (hi - lo)
    return grad.reshape(x.shape)


def assert_grads_close(analytic, fd, rtol=1e-3, atol=2e-4):
    """Relative agreement within rtol, with an absolute floor for entries the
    float32 forward noise cannot resolve (|loss| rounding / 2h ~ 5e-5)."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    b = np.asarray(fd, dtype=np.float64).reshape(-1)
    err = np.abs(a - b)
    bound = atol + rtol * np.maximum(np.abs(a), np.abs(b))
    worst = int(np.argmax(err - bound))
    assert (err <= bound).all(), (
        f"gradient mismatch: analytic {a[worst]:.6e} vs fd {b[worst]:.6e} "
        f"(|diff| {err[worst]:.2e} > bound {bound[worst]:.2e})"
    )


def projection_loss(y, coeffs):
    """Scalar readout sum(c * y) accumulated in float64."""
    return float(np.sum(coeffs * y, dtype=np.float64))


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """16-image synthetic dataset (8 per class, 32x32) shared across tests."""
    root = tmp_path_factory.mktemp("synth")
    generate_synthetic(8, 32, 7, root)
    return root
