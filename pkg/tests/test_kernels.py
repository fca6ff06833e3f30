"""Backend parity: the numba kernels and the numpy fallback must agree."""

import numpy as np
import pytest

from otalign import _kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _with_backend(monkeypatch, name):
    monkeypatch.setenv("OTALIGN_BACKEND", name)


def test_backend_env_validation(monkeypatch):
    _with_backend(monkeypatch, "nonsense")
    with pytest.raises(ValueError):
        _kernels.backend()


def test_backend_selection(monkeypatch):
    _with_backend(monkeypatch, "numpy")
    assert _kernels.backend() == "numpy"
    if _kernels.NUMBA_AVAILABLE:
        _with_backend(monkeypatch, "numba")
        assert _kernels.backend() == "numba"


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_sinkhorn_potentials_backend_parity(monkeypatch, rng):
    cost = rng.uniform(0, 2, (6, 9))
    log_a = np.log(rng.dirichlet(np.ones(6)))
    log_b = np.log(rng.dirichlet(np.ones(9)))
    results = {}
    for name in ("numba", "numpy"):
        _with_backend(monkeypatch, name)
        results[name] = _kernels.sinkhorn_potentials(cost, log_a, log_b, 0.05, 2000, 1e-9)
    f_nb, g_nb, it_nb, v_nb = results["numba"]
    f_np, g_np, it_np, v_np = results["numpy"]
    assert it_nb == it_np
    np.testing.assert_allclose(f_nb, f_np, atol=1e-9)
    np.testing.assert_allclose(g_nb, g_np, atol=1e-9)
    assert abs(v_nb - v_np) < 1e-9


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_sinkhorn_batch_backend_parity(monkeypatch, rng):
    costs = rng.uniform(0, 2, (7, 4, 5))
    log_a = np.log(rng.dirichlet(np.ones(4)))
    log_b = np.log(rng.dirichlet(np.ones(5), size=7))
    results = {}
    for name in ("numba", "numpy"):
        _with_backend(monkeypatch, name)
        results[name] = _kernels.sinkhorn_potentials_batch(
            costs, log_a, log_b, 0.02, 5000, 1e-8
        )
    np.testing.assert_allclose(results["numba"][0], results["numpy"][0], atol=1e-8)
    np.testing.assert_allclose(results["numba"][1], results["numpy"][1], atol=1e-8)
    np.testing.assert_array_equal(results["numba"][2], results["numpy"][2])


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_eigh_backend_parity(monkeypatch, rng):
    mat = rng.standard_normal((40, 90))
    gram = mat @ mat.T
    spectra = {}
    bases = {}
    for name in ("numba", "numpy"):
        _with_backend(monkeypatch, name)
        w, v = _kernels.symmetric_eigh_desc(gram)
        spectra[name] = w
        bases[name] = v
    np.testing.assert_allclose(
        spectra["numba"], spectra["numpy"], rtol=1e-10, atol=1e-10 * spectra["numpy"][0]
    )
    # same invariant subspaces: principal angles of the top-10 block
    q1, q2 = bases["numba"][:, :10], bases["numpy"][:, :10]
    sv = np.linalg.svd(q1.T @ q2, compute_uv=False)
    assert np.arccos(np.clip(sv, -1, 1)).max() < 1e-7


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_jacobi_orthonormal_eigvectors(monkeypatch, rng):
    _with_backend(monkeypatch, "numba")
    mat = rng.standard_normal((25, 25))
    gram = mat @ mat.T
    w, v = _kernels.symmetric_eigh_desc(gram)
    np.testing.assert_allclose(v.T @ v, np.eye(25), atol=1e-12)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, gram, atol=1e-10 * abs(w[0]))
    assert (np.diff(w) <= 1e-12).all()


def test_eigh_zero_matrix(monkeypatch):
    for name in ("numba", "numpy") if _kernels.NUMBA_AVAILABLE else ("numpy",):
        _with_backend(monkeypatch, name)
        w, v = _kernels.symmetric_eigh_desc(np.zeros((5, 5)))
        np.testing.assert_allclose(w, np.zeros(5))
        np.testing.assert_allclose(v.T @ v, np.eye(5), atol=1e-14)
