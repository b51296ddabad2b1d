import numpy as np
import pytest
from numpy.testing import assert_allclose

from adiabat import expansion as ex
from adiabat import models as M
from adiabat.errors import DimensionError, NumericError
from adiabat.symbols import ConstantSymbol, FormalSymbol, FunctionSymbol, fd_step_scale

TWISTED = M.TwoLevelParams(twist=0.7, h1_amp=0.3)


@pytest.fixture(scope="module")
def twisted():
    model = M.TwoLevelModel(TWISTED)
    ctx = model.context(N=2)
    pi = ex.moyal_projector(ctx, 2)
    u = ex.moyal_unitary(ctx, pi, 2)
    return model, ctx, pi, u


@pytest.fixture(scope="module")
def points():
    r = np.random.default_rng(3)
    return np.c_[r.uniform(-4, 4, 60), r.uniform(-2, 2, 60)]


def test_projector_defects_vanish(twisted, points):
    _, ctx, pi, _ = twisted
    defects = ex.projector_defects(pi, ctx.H, points)
    for key, vals in defects.items():
        assert len(vals) == 3
        assert max(vals) < 1e-10, key


def test_unitary_defects_vanish(twisted, points):
    _, ctx, pi, u = twisted
    defects = ex.unitary_defects(u, pi, ctx.pi_r, points)
    for key, vals in defects.items():
        assert max(vals) < 1e-10, key


def test_closed_forms_on_complex_frame(twisted, points):
    # the twisted benchmark has {pi0, pi0} != 0 and {u0, u0*} != 0
    _, ctx, pi, u = twisted
    assert_allclose(pi.term(1)(points), ex.pi1_closed(ctx, points), atol=1e-10)
    assert_allclose(u.term(1)(points), ex.u1_closed(ctx, points), atol=1e-10)
    assert_allclose(ex.u1_closed(ctx, points, adjoint=True),
                    np.conj(np.swapaxes(ex.u1_closed(ctx, points), -1, -2)), atol=1e-14)


def test_effective_symbol_blocks(twisted, points):
    _, ctx, _, u = twisted
    h = ex.effective_symbol(ctx, u, 2)
    bd = ex.block_defects(ctx, h, points)
    assert max(bd["block"]) < 1e-10
    assert max(bd["hermiticity"]) < 1e-10
    # pi_r h0 pi_r = E_r on the band
    assert_allclose(h.term(0)(points)[:, 0, 0], ctx.energy(points)[:, 0, 0], atol=1e-12)
    assert_allclose(h.term(1)(points)[:, :1, :1], ex.h1_block(ctx, points), atol=1e-10)
    assert_allclose(h.term(2)(points)[:, :1, :1], ex.h2_block(ctx, points), atol=1e-10)


def test_closed_frame_and_nagy_frame_agree_on_gauge_free_data(points):
    model = M.TwoLevelModel(TWISTED)
    a = model.context(N=1, closed_frame=True)
    b = model.context(N=1, closed_frame=False)
    pa = ex.moyal_projector(a, 1)
    pb = ex.moyal_projector(b, 1)
    assert_allclose(pa.term(1)(points), pb.term(1)(points), atol=1e-10)
    assert_allclose(a.energy(points), b.energy(points), atol=1e-14)


def test_gauge_covariance_dirac(rng):
    model = M.DiracModel()
    ctx = model.context()
    z = np.c_[rng.uniform(-2, 2, (20, 3)), rng.uniform(-1, 1, (20, 3))]
    theta, phi = 0.7, 1.9
    V = np.array([[np.cos(theta), -np.exp(1j * phi) * np.sin(theta)],
                  [np.exp(-1j * phi) * np.sin(theta), np.cos(theta)]])
    W = np.eye(4, dtype=complex)
    W[:2, :2] = V.conj().T
    ctx_v = ex.ExpansionContext(ctx.H, ctx.band, 1, u0=ConstantSymbol(W, 3) @ ctx.u0)
    assert_allclose(ctx_v.frame(z), ctx.frame(z) @ V, atol=1e-13)
    h = ex.h1_block(ctx, z)
    hv = ex.h1_block(ctx_v, z)
    assert_allclose(hv, V.conj().T @ h @ V, atol=1e-12)
    assert_allclose(np.linalg.eigvalsh(hv), np.linalg.eigvalsh(h), atol=1e-12)


def _fd_context():
    model = M.TwoLevelModel(TWISTED)
    H0 = FunctionSymbol(model.H0.evaluator, 1, (2, 2), hermitian=True)
    return ex.ExpansionContext(FormalSymbol([H0, model.H.term(1)]), model.band, N=2)


def test_uniqueness_probe_under_step_halving(points):
    ctx = _fd_context()
    pi1 = ex.moyal_projector(ctx, 1).term(1)(points)
    h1 = ex.h1_block(ctx, points)
    with fd_step_scale(0.5):
        pi1_half = ex.moyal_projector(ctx, 1).term(1)(points)
        h1_half = ex.h1_block(ctx, points)
    assert np.abs(pi1 - pi1_half).max() < 1e-5
    assert np.abs(h1 - h1_half).max() < 1e-5


def test_h2_conditioning_diagnostic(points):
    rep = ex.h2_conditioning(_fd_context(), points[:20])
    assert set(rep) == {"relative_change", "resolvent_norm", "h2_norm"}
    assert rep["relative_change"] < 1e-5
    assert rep["resolvent_norm"] == pytest.approx(0.5)


def test_context_validation(rng):
    model = M.TwoLevelModel()
    ctx = model.context()
    rep = ctx.validate(rng.uniform(-2, 2, (10, 2)))
    assert rep["unitarity"] < 1e-12
    with pytest.raises(DimensionError):
        ex.ExpansionContext(model.H, model.band, ref_basis=np.eye(2))
    bad = ex.ExpansionContext(model.H, model.band, u0=ConstantSymbol(np.eye(2), 1))
    with pytest.raises(NumericError):
        bad.validate(rng.uniform(-2, 2, (10, 2)))


def test_check_defects_raises():
    from adiabat.errors import DefectError
    with pytest.raises(DefectError):
        ex.check_defects({"idempotency": [0.0, 1e-3]}, 1e-6)
    ex.check_defects({"idempotency": [0.0, 1e-9]}, 1e-6)
