import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from adiabat import models as M
from adiabat.bands import (BandSpec, BandSymbols, eig_frame, gap_check, nagy_transport,
                           reduced_resolvent, smooth_frame, spectral_decomposition,
                           spectral_projector)
from adiabat.errors import BandIdentificationError, GapViolation, TransportDomainError
from adiabat.symbols import FunctionSymbol, fd_step_scale


def _herm(x):
    return np.conj(np.swapaxes(x, -1, -2))


def _gapped(seed, n=4, ell=1):
    """Random hermitian matrix whose top ``ell`` eigenvalues sit at 3, rest in [-1, 1]."""
    r = np.random.default_rng(seed)
    q, _ = np.linalg.qr(r.normal(size=(n, n)) + 1j * r.normal(size=(n, n)))
    evals = np.concatenate([r.uniform(-1, 1, n - ell), np.full(ell, 3.0)])
    return (q * evals) @ q.conj().T


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 2))
def test_projector_and_resolvent_identities(seed, ell):
    H = _gapped(seed, 4, ell)
    s = spectral_decomposition(H, BandSpec.upper(4, multiplicity=ell))
    P, R = s["P"], s["R"]
    eye = np.eye(4)
    assert_allclose(P @ P, P, atol=1e-10)
    assert_allclose(P, _herm(P), atol=1e-10)
    assert abs(np.trace(P).real - ell) < 1e-10
    assert_allclose((H - s["E"] * eye) @ R, eye - P, atol=1e-10)
    assert_allclose(s["E"], 3.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.4))
def test_nagy_transport_intertwines(seed, size):
    r = np.random.default_rng(seed)
    H = _gapped(seed, 3, 1)
    K = r.normal(size=(3, 3)) + 1j * r.normal(size=(3, 3))
    K = size * (K + K.conj().T) / np.linalg.norm(K + K.conj().T, 2)
    pa = spectral_decomposition(H, BandSpec.upper(3))["P"]
    pb = spectral_decomposition(H + K, BandSpec.upper(3))["P"]
    if np.linalg.norm(pa - pb, 2) >= 1:
        return
    w = nagy_transport(pa, pb)
    assert_allclose(w @ _herm(w), np.eye(3), atol=1e-10)
    assert_allclose(w @ pb @ _herm(w), pa, atol=1e-10)


def test_nagy_transport_domain():
    pa = np.diag([1.0, 0.0])
    pb = np.diag([0.0, 1.0])
    with pytest.raises(TransportDomainError):
        nagy_transport(pa, pb)


def test_band_spec_validation():
    with pytest.raises(ValueError):
        BandSpec()
    with pytest.raises(ValueError):
        BandSpec(indices=(0,), window=(0, 1))
    with pytest.raises(ValueError):
        BandSpec(indices=(0, 1), multiplicity=1)
    with pytest.raises(ValueError):
        BandSpec(indices=(0,), gap_floor=0.0)


def test_window_selection_and_count_mismatch():
    H = np.diag([-1.0, 0.5, 2.0])
    s = spectral_decomposition(H, BandSpec(window=(0.0, 1.0)))
    assert_allclose(s["E"], 0.5)
    with pytest.raises(BandIdentificationError):
        spectral_decomposition(H, BandSpec(window=(0.0, 3.0)))


def test_degenerate_band_must_be_degenerate():
    with pytest.raises(BandIdentificationError):
        spectral_decomposition(np.diag([0.0, 1.0, 1.1]), BandSpec.upper(3, multiplicity=2))
    s = spectral_decomposition(np.diag([0.0, 1.0, 1.0]), BandSpec.upper(3, multiplicity=2))
    assert_allclose(s["gap"], 1.0)


def test_gap_violation_and_report():
    model = M.TwoLevelModel()
    z = np.array([[0.0, 0.0], [1.0, 0.5]])
    tight = BandSpec.upper(2, gap_floor=2.5)
    with pytest.raises(GapViolation) as info:
        spectral_projector(model.H0, z, tight)
    assert info.value.gap == pytest.approx(2.0)
    rep = gap_check(model.H0, tight, z)
    assert not rep.ok and len(rep.violations) == 2
    assert rep.min_gap == pytest.approx(2.0)
    assert gap_check(model.H0, model.band, z).ok


def test_closed_forms_match_spectral_path(rng):
    model = M.TwoLevelModel(M.TwoLevelParams(twist=0.7))
    z = rng.uniform(-4, 4, (50, 2))
    bs = BandSymbols(model.H0, model.band)
    assert_allclose(bs.projector(z), model.projector(z), atol=1e-12)
    assert_allclose(bs.energy(z)[:, 0, 0], model.energy(z), atol=1e-12)
    R = reduced_resolvent(model.H0, z, model.band)
    assert_allclose(R, -(np.eye(2) - model.projector(z)) / 2, atol=1e-12)


def test_eig_frame_fields():
    model = M.TwoLevelModel()
    fr = eig_frame(model.H0, [0.3, -0.2], model.band)
    assert fr.gap == pytest.approx(2.0)
    assert_allclose(fr.pi0 @ fr.basis, fr.basis, atol=1e-14)


def test_frame_jets_are_gauge_fixed(rng):
    # derivatives of the frame must stay inside the Nagy gauge: psi* d psi = 0 at the center
    model = M.TwoLevelModel(M.TwoLevelParams(twist=0.7))
    z = rng.uniform(-2, 2, (10, 2))
    jet = smooth_frame(model.H0, model.band, z, 2)
    psi = jet.value
    for g in [(1, 0), (0, 1)]:
        assert_allclose(_herm(psi) @ jet.derivative_value(g), 0, atol=1e-12)


def test_frame_jets_converge_under_refinement(rng):
    model = M.TwoLevelModel(M.TwoLevelParams(twist=0.7))
    fd = FunctionSymbol(model.H0.evaluator, 1, (2, 2), hermitian=True)
    z = rng.uniform(-2, 2, (20, 2))
    exact = smooth_frame(model.H0, model.band, z, 2).coeffs
    errs = []
    # steps large enough that truncation, not round-off, dominates
    for scale in (64, 32, 16):
        with fd_step_scale(scale):
            errs.append(np.abs(smooth_frame(fd, model.band, z, 2).coeffs - exact).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates >= 2.0)
