"""Backend selection and agreement between the numba and numpy kernel builds."""

import numpy as np
import pytest

from harmonize import _kernels
from harmonize._backend import BACKEND_ENV, HAS_NUMBA, active_backend
from harmonize.measurement import MeasurementModel, discretize
from harmonize.probcore import tv_distance
from harmonize.solver import FitOptions, fit


def test_env_forces_numpy(monkeypatch):
    for value in ("numpy", "python", "NumPy", " numpy "):
        monkeypatch.setenv(BACKEND_ENV, value)
        assert active_backend() == "numpy"


def test_env_unset_prefers_numba(monkeypatch):
    monkeypatch.delenv(BACKEND_ENV, raising=False)
    assert active_backend() == ("numba" if HAS_NUMBA else "numpy")
    monkeypatch.setenv(BACKEND_ENV, "")
    assert active_backend() == ("numba" if HAS_NUMBA else "numpy")


def test_env_rejects_unknown_value(monkeypatch):
    monkeypatch.setenv(BACKEND_ENV, "fortran")
    with pytest.raises(ValueError, match="HARMONIZE_BACKEND"):
        active_backend()


def test_impl_table_covers_both_solvers():
    keys = set(_kernels._IMPLS)
    for solver in ("em_fixed_point", "mirror_ascent"):
        assert (solver, "numpy") in keys
        assert (solver, "numba") in keys


def _problem():
    disc = discretize(MeasurementModel(family="gaussian", support_size=10, bandwidth=1.2), 25)
    rng = np.random.default_rng(7)
    phat = rng.dirichlet(np.ones(11) * 2.0)
    return disc, phat


@pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")
def test_backends_agree(monkeypatch):
    disc, phat = _problem()
    results = {}
    for backend in ("numpy", "numba"):
        monkeypatch.setenv(BACKEND_ENV, backend)
        for solver in ("em_fixed_point", "mirror_ascent"):
            results[(solver, backend)] = fit(
                disc, phat, mu=0.01, options=FitOptions(solver=solver)
            )
    for solver in ("em_fixed_point", "mirror_ascent"):
        a = results[(solver, "numpy")]
        b = results[(solver, "numba")]
        # summation order differs between BLAS and the numba build, so the
        # stop fires a few iterations apart and the iterates sit at slightly
        # different points of the same flat optimum; the fits must agree
        assert a.converged and b.converged
        assert abs(a.iterations - b.iterations) <= max(5, a.iterations // 100)
        assert tv_distance(a.theta, b.theta) <= 1e-6
        assert a.loglik == pytest.approx(b.loglik, abs=1e-9)


def _kernel_args(disc, phat, **over):
    a = np.ascontiguousarray(disc.matrix)
    kw = dict(
        A=a,
        At=np.ascontiguousarray(a.T),
        phat=np.asarray(phat, dtype=np.float64),
        mu=0.01,
        theta0=np.full(a.shape[1], 1.0 / a.shape[1]),
        max_iters=50_000,
        tol=1e-10,
        floor=0.0,
    )
    kw.update(over)
    return kw


def test_kernel_status_ok_and_maxiter():
    disc, phat = _problem()
    kw = _kernel_args(disc, phat)
    theta, obj, iters, converged, gain, status = _kernels.run_fit(
        "em_fixed_point", "numpy", **kw
    )
    assert status == _kernels.STATUS_OK
    assert converged
    assert 0 < iters < 50_000
    assert np.isfinite(obj)
    kw = _kernel_args(disc, phat, max_iters=2, tol=1e-18)
    theta, obj, iters, converged, gain, status = _kernels.run_fit(
        "mirror_ascent", "numpy", **kw
    )
    assert status == _kernels.STATUS_MAXITER
    assert not converged
    assert iters == 2


def test_kernel_status_degenerate():
    a = np.array([[0.5, 0.5], [0.0, 0.0]])
    kw = _kernel_args(
        type("D", (), {"matrix": a})(), np.array([0.5, 0.5]), mu=0.0, theta0=np.array([0.5, 0.5])
    )
    for solver in ("em_fixed_point", "mirror_ascent"):
        theta, obj, iters, converged, gain, status = _kernels.run_fit(solver, "numpy", **kw)
        assert status == _kernels.STATUS_DEGENERATE
        assert iters == 0
        assert obj == -np.inf


def test_kernel_solvers_cross_check():
    disc, phat = _problem()
    out = {}
    for solver in ("em_fixed_point", "mirror_ascent"):
        kw = _kernel_args(disc, phat, tol=1e-15, max_iters=200_000)
        out[solver] = _kernels.run_fit(solver, "numpy", **kw)
    t_em, obj_em = out["em_fixed_point"][0], out["em_fixed_point"][1]
    t_mi, obj_mi = out["mirror_ascent"][0], out["mirror_ascent"][1]
    assert tv_distance(t_em, t_mi) <= 1e-5
    assert abs(obj_em - obj_mi) <= 1e-9
