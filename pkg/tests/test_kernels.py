"""Backend equivalence: the numba kernels and the numpy fallback must agree."""

import numpy as np
import pytest

from kfpose import _kernels

from oracles import trilinear_point

pytestmark = pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba not installed")


@pytest.fixture
def backends():
    current = _kernels.active_backend()
    yield
    _kernels.set_backend(current)


def _random_field(rng, shape=(2, 6, 7, 8)):
    return rng.standard_normal(shape).astype(np.float32)


def test_trilinear_backends_bit_equal(rng, backends):
    data = _random_field(rng)
    n = 5000
    ux = rng.uniform(-2, 9, n)
    uy = rng.uniform(-2, 8, n)
    uz = rng.uniform(-2, 7, n)
    for circular in (False, True):
        _kernels.set_backend("numba")
        a = _kernels.trilinear_gather(data, ux, uy, uz, circular)
        _kernels.set_backend("numpy")
        b = _kernels.trilinear_gather(data, ux, uy, uz, circular)
        np.testing.assert_array_equal(a, b)


def test_trilinear_against_pointwise_oracle(rng):
    data = _random_field(rng, (1, 5, 6, 7))
    pts = rng.uniform(-1.5, 7.5, size=(200, 3))
    for circular in (False, True):
        got = _kernels.trilinear_gather(data, pts[:, 0], pts[:, 1], pts[:, 2], circular)[0]
        want = [trilinear_point(data[0], x, y, z, circular) for x, y, z in pts]
        np.testing.assert_allclose(got, want, atol=1e-5)


def test_trilinear_snaps_to_lattice(rng):
    data = _random_field(rng, (1, 4, 4, 4))
    # coordinates a hair off the lattice reproduce stored values exactly
    eps = 2e-7
    coords = np.array([1.0 + eps, 2.0 - eps, 0.0 + eps])
    got = _kernels.trilinear_gather(
        data, coords[:1], np.array([2.0 - eps]), np.array([3.0 + eps]), False
    )
    np.testing.assert_array_equal(got[0], data[0, 3, 2, 1])


def test_direct_backends_close(rng, backends):
    scene = _random_field(rng, (2, 8, 8, 8))
    kerns = _random_field(rng, (3, 2, 4, 4, 4))
    xs = np.arange(8)
    for circular in (False, True):
        _kernels.set_backend("numba")
        a = _kernels.direct_correlate(scene, kerns, xs, xs, xs, circular)
        _kernels.set_backend("numpy")
        b = _kernels.direct_correlate(scene, kerns, xs, xs, xs, circular)
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6)


def test_backend_selection_errors():
    with pytest.raises(ValueError):
        _kernels.set_backend("cuda")
    with pytest.raises(ValueError):
        _kernels.set_workers(0)


def test_workers_do_not_change_results(rng):
    scene = _random_field(rng, (1, 8, 8, 8))
    kerns = _random_field(rng, (2, 1, 4, 4, 4))
    xs = np.arange(8)
    before = _kernels.workers()
    try:
        _kernels.set_workers(1)
        a = _kernels.direct_correlate(scene, kerns, xs, xs, xs, False)
        _kernels.set_workers(2)
        b = _kernels.direct_correlate(scene, kerns, xs, xs, xs, False)
    finally:
        _kernels.set_workers(before)
    np.testing.assert_array_equal(a, b)
