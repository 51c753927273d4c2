import numpy as np
import pytest

from hardmine import kernels
from oracles import brute_edt_squared, brute_nearest

BACKENDS = [kernels.python] + ([kernels.compiled] if kernels.compiled is not None else [])


def _masks(n, seed=0, max_side=16):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        h, w = rng.integers(1, max_side + 1, size=2)
        yield np.ascontiguousarray(rng.random((h, w)) < rng.uniform(0.2, 0.9), dtype=np.uint8)


def test_compiled_backend_is_built():
    # the editable install builds the extension; a missing build is a packaging bug
    assert kernels.compiled is not None
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.__name__.rsplit(".", 1)[-1])
def test_edt_matches_brute_force(backend):
    for fg in _masks(40, seed=1):
        np.testing.assert_array_equal(backend.edt_squared(fg), brute_edt_squared(fg))


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.__name__.rsplit(".", 1)[-1])
def test_edt_edge_cases(backend):
    np.testing.assert_array_equal(backend.edt_squared(np.zeros((3, 4), np.uint8)), 0.0)
    # full foreground: distance to the outside ring
    full = backend.edt_squared(np.ones((5, 5), np.uint8))
    np.testing.assert_array_equal(full, brute_edt_squared(np.ones((5, 5))))
    assert full[2, 2] == 9.0
    np.testing.assert_array_equal(backend.edt_squared(np.ones((1, 1), np.uint8)), [[1.0]])


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.__name__.rsplit(".", 1)[-1])
def test_nearest_scan_matches_exhaustive(backend):
    rng = np.random.default_rng(2)
    for _ in range(50):
        n, dim = int(rng.integers(1, 300)), int(rng.choice([2, 3, 8]))
        pts = rng.normal(size=(n, dim))
        ids = rng.permutation(n * 3)[:n].astype(np.int64)
        q = rng.normal(size=dim)
        excl = (rng.random(n) < 0.3).astype(np.uint8)
        row = backend.nearest_scan(pts, ids, q, excl)
        expected = brute_nearest(pts, ids, q, {int(i) for i in ids[excl == 1]})
        assert (None if row < 0 else int(ids[row])) == expected


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.__name__.rsplit(".", 1)[-1])
def test_nearest_scan_ties_go_to_lowest_id(backend):
    pts = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    ids = np.array([9, 4, 2], dtype=np.int64)
    none = np.zeros(3, np.uint8)
    assert ids[backend.nearest_scan(pts, ids, np.array([1.0, 0.0]), none)] == 2
    # equidistant to (0,0) and (1,0): lowest id among the three is 2
    assert ids[backend.nearest_scan(pts, ids, np.array([0.5, 0.0]), none)] == 2
    assert backend.nearest_scan(pts, ids, np.array([0.0, 0.0]), np.ones(3, np.uint8)) == -1


def test_backends_agree_bitwise():
    if kernels.compiled is None:
        pytest.skip("compiled backend not built")
    for fg in _masks(30, seed=3, max_side=40):
        a, b = kernels.python.edt_squared(fg), kernels.compiled.edt_squared(fg)
        assert a.tobytes() == b.tobytes()
    rng = np.random.default_rng(4)
    for _ in range(30):
        pts = rng.normal(size=(500, 3))
        ids = np.arange(500, dtype=np.int64)
        q = rng.normal(size=3)
        excl = np.zeros(500, np.uint8)
        assert kernels.python.nearest_scan(pts, ids, q, excl) == kernels.compiled.nearest_scan(pts, ids, q, excl)


def test_wrapper_validates_and_coerces():
    with pytest.raises(ValueError):
        kernels.edt_squared(np.ones(4))
    # bool input and list query are coerced
    assert kernels.edt_squared(np.ones((2, 2), dtype=bool)).dtype == np.float64
    assert kernels.nearest_scan([[0.0, 0.0], [3.0, 3.0]], [0, 1], [2.9, 2.9]) == 1
