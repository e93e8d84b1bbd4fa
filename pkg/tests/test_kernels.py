import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blurkp import kernels


def test_python_backend_always_available():
    assert "python" in kernels.backends()
    assert kernels.BACKEND in kernels.backends()


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@pytest.mark.parametrize("dtype, tol", [(np.float64, 1e-12), (np.float32, 2e-6)])
def test_gelu_matches_tanh_formula(backend, dtype, tol, rng):
    x = rng.uniform(-6, 6, size=(5, 7, 3)).astype(dtype)
    ref = 0.5 * x.astype(np.float64) * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x.astype(np.float64) ** 3)))
    out = kernels.gelu_forward(x, backend=backend)
    assert out.dtype == dtype and out.shape == x.shape
    np.testing.assert_allclose(out, ref, rtol=tol, atol=tol)


def test_gelu_values(backend):
    x = np.array([0.0, 1.0, 10.0, -10.0])
    y = kernels.gelu_forward(x, backend=backend)
    assert y[0] == 0.0
    assert abs(y[1] - 0.8413447) < 2e-3
    assert abs(y[2] - 10.0) < 1e-4
    assert abs(y[3]) < 1e-4


def test_gelu_backward_agrees_across_backends(rng):
    x = rng.uniform(-5, 5, 1000)
    g = rng.normal(size=1000)
    outs = [kernels.gelu_backward(x, g, backend=b) for b in kernels.backends()]
    for o in outs[1:]:
        np.testing.assert_allclose(o, outs[0], rtol=1e-10, atol=1e-12)


def test_gelu_extreme_inputs_finite(backend):
    x = np.array([-1e4, -100.0, 100.0, 1e4], dtype=np.float32)
    assert np.isfinite(kernels.gelu_forward(x, backend=backend)).all()
    assert np.isfinite(kernels.gelu_backward(x, np.ones_like(x), backend=backend)).all()


def test_layer_norm_forward_backward_agree(rng):
    x = rng.normal(size=(50, 16)) * 3 + 1
    gamma, beta = rng.normal(size=16), rng.normal(size=16)
    gout = rng.normal(size=(50, 16))
    res = []
    for b in kernels.backends():
        y, xhat, rstd = kernels.layer_norm_forward(x, gamma, beta, 1e-6, backend=b)
        res.append((y, *kernels.layer_norm_backward(gout, xhat, rstd, gamma, backend=b)))
    for other in res[1:]:
        for a, c in zip(res[0], other):
            np.testing.assert_allclose(a, c, rtol=1e-9, atol=1e-10)


def test_layer_norm_normalizes(backend, rng):
    x = rng.normal(size=(20, 8)) * 5 + 2
    y, _, _ = kernels.layer_norm_forward(x, np.ones(8), np.zeros(8), 1e-12, backend=backend)
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1, atol=1e-9)


def _brute_greedy(pairs, n_ref, n_tgt):
    used_i, used_j, out = set(), set(), []
    for k, (i, j) in enumerate(pairs):
        if i not in used_i and j not in used_j:
            used_i.add(i)
            used_j.add(j)
            out.append(k)
    return out


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 6)), max_size=30))
def test_greedy_match_backends(pairs):
    ii = np.array([p[0] for p in pairs], dtype=np.intp)
    jj = np.array([p[1] for p in pairs], dtype=np.intp)
    want = _brute_greedy(pairs, 6, 7)
    for b in kernels.backends():
        assert kernels.greedy_match(ii, jj, 6, 7, backend=b).tolist() == want


def test_nms_disk_suppresses_within_radius(backend):
    ys = np.array([10, 10, 10, 20])
    xs = np.array([10, 13, 15, 20])
    keep = kernels.nms_disk(ys, xs, 32, 32, 4.0, backend=backend)
    # (10,13) is 3 px from the first point; (10,15) is 5 px away
    assert keep.tolist() == [True, False, True, True]


def test_nms_disk_radius_is_inclusive(backend):
    keep = kernels.nms_disk(np.array([5, 5]), np.array([5, 9]), 16, 16, 4.0, backend=backend)
    assert keep.tolist() == [True, False]


def test_nms_backends_agree(rng):
    ys = rng.integers(0, 40, 300)
    xs = rng.integers(0, 50, 300)
    masks = [kernels.nms_disk(ys, xs, 40, 50, 4.0, backend=b) for b in kernels.backends()]
    for m in masks[1:]:
        assert (m == masks[0]).all()


def test_splat_bilinear_center_and_split(backend):
    w = kernels.splat_bilinear([0.0], [0.0], [1.0], 3, backend=backend)
    assert w[1, 1] == 1.0 and w.sum() == 1.0
    w = kernels.splat_bilinear([0.25], [0.0], [2.0], 3, backend=backend)
    np.testing.assert_allclose(w[1], [0.0, 1.5, 0.5])


def test_splat_bilinear_out_of_support(backend):
    with pytest.raises(ValueError):
        kernels.splat_bilinear([1.5], [0.0], [1.0], 3, backend=backend)


def test_splat_backends_agree(rng):
    xs, ys = rng.uniform(-3, 3, 200), rng.uniform(-3, 3, 200)
    ws = rng.uniform(0, 1, 200)
    outs = [kernels.splat_bilinear(xs, ys, ws, 9, backend=b) for b in kernels.backends()]
    for o in outs[1:]:
        np.testing.assert_allclose(o, outs[0], rtol=1e-12, atol=1e-14)


def test_tune_allocator_is_idempotent():
    first = kernels.tune_allocator()
    assert kernels.tune_allocator() == first
