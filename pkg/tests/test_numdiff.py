import numpy as np
from numpy.testing import assert_allclose

from spinflow.numdiff import fd_deriv, fd_grad, step_size


def test_polynomial_exact():
    # scheme with Richardson is exact through degree 5 (up to roundoff)
    def f(x):
        return x[..., 0] ** 5 - 2.0 * x[..., 1] ** 4 * x[..., 0] + x[..., 2] ** 3

    x = np.array([0.3, -0.7, 1.1])
    g = fd_grad(f, x)
    expect = np.array(
        [
            5 * 0.3**4 - 2 * (-0.7) ** 4,
            -8 * (-0.7) ** 3 * 0.3,
            3 * 1.1**2,
        ]
    )
    assert_allclose(g, expect, rtol=1e-9, atol=1e-10)


def test_smooth_accuracy_and_batching():
    def f(x):
        return np.sin(x[..., 0]) * np.exp(x[..., 1]) + np.cos(x[..., 2])

    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 4, 3)) * 0.5
    g = fd_grad(f, x)
    assert g.shape == (5, 4, 3)
    expect = np.stack(
        [
            np.cos(x[..., 0]) * np.exp(x[..., 1]),
            np.sin(x[..., 0]) * np.exp(x[..., 1]),
            -np.sin(x[..., 2]),
        ],
        axis=-1,
    )
    assert_allclose(g, expect, rtol=1e-10, atol=1e-11)


def test_matrix_valued_complex():
    def f(x):
        a = x[..., 0] + 1j * x[..., 1]
        out = np.zeros(x.shape[:-1] + (2, 2), dtype=complex)
        out[..., 0, 0] = np.exp(a)
        out[..., 1, 1] = x[..., 2] ** 2
        out[..., 0, 1] = 1j * x[..., 0] * x[..., 2]
        return out

    x = np.array([0.2, 0.4, -0.3])
    g = fd_grad(f, x)
    assert g.shape == (3, 2, 2)
    ea = np.exp(0.2 + 0.4j)
    assert_allclose(g[0, 0, 0], ea, rtol=1e-10)
    assert_allclose(g[1, 0, 0], 1j * ea, rtol=1e-10)
    assert_allclose(g[0, 0, 1], 1j * (-0.3), atol=1e-11)
    assert_allclose(g[2, 0, 1], 1j * 0.2, atol=1e-11)
    assert_allclose(g[2, 1, 1], -0.6, rtol=1e-10)


def test_step_size_scaling():
    assert_allclose(step_size(np.zeros(3)), 1e-4)
    assert_allclose(step_size(np.array([3.0, 0.0, 4.0])), 6e-4)


def test_fd_deriv_scalar():
    g = fd_deriv(lambda t: np.array([np.sin(t), t**3]), 0.7)
    assert_allclose(g, [np.cos(0.7), 3 * 0.49], rtol=1e-10)
