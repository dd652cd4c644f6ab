"""Parity between the compiled kernels and the numpy fallback."""
import numpy as np
import pytest

from lptm import _backend, _kernels_py

from conftest import random_image

pytestmark = pytest.mark.skipif("cython" not in _backend.available(),
                                reason="compiled extension not built")


@pytest.fixture
def ck():
    from lptm import _ckernels
    return _ckernels


def test_backend_names():
    assert _backend.current() in _backend.available()
    assert "numpy" in _backend.available()


def test_set_backend_round_trip():
    prev = _backend.set_backend("numpy")
    assert _backend.current() == "numpy"
    _backend.set_backend(prev)
    assert _backend.current() == prev


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.set_backend("fortran")


class TestParity:
    def test_trilinear_forward(self, ck, rng):
        table = rng.uniform(size=(9, 9, 9, 3))
        img = rng.uniform(-0.1, 1.1, (23, 17, 3))
        np.testing.assert_allclose(ck.trilinear_forward(table, img),
                                   _kernels_py.trilinear_forward(table, img), atol=1e-14)

    def test_trilinear_backward(self, ck, rng):
        table = rng.uniform(size=(5, 5, 5, 3))
        img = rng.uniform(-0.1, 1.1, (31, 29, 3))
        g = rng.normal(size=img.shape)
        gt_c, gi_c = ck.trilinear_backward(table, img, g)
        gt_p, gi_p = _kernels_py.trilinear_backward(table, img, g)
        np.testing.assert_allclose(gt_c, gt_p, atol=1e-12)
        np.testing.assert_allclose(gi_c, gi_p, atol=1e-12)

    @pytest.mark.parametrize("printed", [False, True])
    def test_remap_level(self, ck, rng, printed):
        img = random_image(rng, 19, 21)
        alpha = rng.uniform(0.1, 3, (19, 21))
        beta = rng.uniform(0, 3, (19, 21))
        for g in (0.0, 0.37, 1.0):
            rc, ac, bc = ck.remap_level(img, g, alpha, beta, 0.1, printed, True)
            rp, ap, bp = _kernels_py.remap_level(img, g, alpha, beta, 0.1, printed, True)
            np.testing.assert_allclose(rc, rp, atol=1e-14)
            np.testing.assert_allclose(ac, ap, atol=1e-14)
            np.testing.assert_allclose(bc, bp, atol=1e-14)
            np.testing.assert_allclose(ck.remap_level(img, g, alpha, beta, 0.1, printed), rp,
                                       atol=1e-14)

    def test_backward_is_deterministic(self, ck, rng):
        table = rng.uniform(size=(9, 9, 9, 3))
        img = rng.uniform(size=(64, 64, 3))
        g = rng.normal(size=img.shape)
        a = ck.trilinear_backward(table, img, g)
        b = ck.trilinear_backward(table, img, g)
        np.testing.assert_array_equal(a[0], b[0])


def test_pipeline_same_on_both_backends(backend, rng):
    from lptm.pipeline import PipelineConfig, forward
    from lptm.predictor import init_state
    img = random_image(rng, 32, 32)
    out = forward(init_state(n_levels=2, n_bins=9), img, PipelineConfig(target_low=8)).output
    ref_prev = _backend.set_backend("numpy")
    ref = forward(init_state(n_levels=2, n_bins=9), img, PipelineConfig(target_low=8)).output
    _backend.set_backend(ref_prev)
    np.testing.assert_allclose(out, ref, atol=1e-12)
