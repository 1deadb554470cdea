import numpy as np
import pytest

from qpat import mesh as fem
from qpat.errors import (InvalidParameterError, UndefinedRegionError,
                         UnreliableReconstructionError)
from qpat.forward import SpnModel
from qpat.inverse import (SigmaSObjective, diagnostic_VN, misfit_matrix, reconstruct_gruneisen,
                          reconstruct_sigma_a, reconstruct_sigma_s, safe_ratio)
from qpat.optimize import LbfgsOptions
from qpat.phantoms import boundary_source

from conftest import phantom_coefficients


def datum(mesh, coeffs, N, source="f1"):
    f = boundary_source(source, mesh)
    phi = SpnModel(mesh, N, coeffs.g).forward(coeffs, f).phi0
    return coeffs.upsilon * coeffs.sigma_a * phi, f, phi


def transferred_datum(gen, rec, N, source="f1"):
    """Datum generated on ``gen`` with phi_0 interpolated onto ``rec``."""
    c_gen, c_rec = phantom_coefficients(gen), phantom_coefficients(rec)
    _, _, phi = datum(gen, c_gen, N, source)
    phi_rec = fem.interpolate_field(gen, phi, rec.nodes)
    return c_rec.upsilon * c_rec.sigma_a * phi_rec, c_rec


class TestSafeRatio:
    def test_fills_from_nearest(self, mesh8):
        den = np.ones(mesh8.n_nodes)
        den[40] = 0.0
        num = np.arange(mesh8.n_nodes, dtype=float)
        out, flags = safe_ratio(mesh8, num, den)
        assert flags.sum() == 1 and flags[40]
        assert out[40] in (num[39], num[41], num[31], num[49])

    def test_too_many_flagged(self, mesh8):
        den = np.ones(mesh8.n_nodes)
        den[:10] = 0.0
        with pytest.raises(UnreliableReconstructionError) as info:
            safe_ratio(mesh8, den, den)
        assert info.value.flagged.sum() == 10


class TestSigmaA:
    def test_zero_datum(self, mesh16, coeffs16):
        f = boundary_source("f1", mesh16)
        res = reconstruct_sigma_a(mesh16, np.zeros(mesh16.n_nodes), coeffs16.upsilon,
                                  coeffs16.sigma_s, f, 3)
        assert not np.any(res.recovered)
        assert res.n_flagged == 0

    @pytest.mark.parametrize("N", [1, 3, 7])
    def test_same_mesh_is_exact(self, mesh16, coeffs16, N):
        # with vertex quadrature the eliminated system is the forward system itself
        H, f, phi = datum(mesh16, coeffs16, N)
        res = reconstruct_sigma_a(mesh16, H, coeffs16.upsilon, coeffs16.sigma_s, f, N,
                                  truth=coeffs16.sigma_a)
        assert res.relative_l2_error <= 1e-9
        np.testing.assert_allclose(res.phi0, phi, rtol=1e-10)

    def test_reinserted_absorption_reproduces_solution(self, mesh16, coeffs16):
        H, f, _ = datum(mesh16, coeffs16, 5)
        res = reconstruct_sigma_a(mesh16, H, coeffs16.upsilon, coeffs16.sigma_s, f, 5)
        phi = SpnModel(mesh16, 5).forward(coeffs16.replace(sigma_a=res.recovered), f).phi0
        np.testing.assert_allclose(phi, res.phi0, rtol=1e-10)

    def test_bit_identical_rerun(self, mesh16, coeffs16):
        H, f, _ = datum(mesh16, coeffs16, 3)
        a = reconstruct_sigma_a(mesh16, H, coeffs16.upsilon, coeffs16.sigma_s, f, 3)
        b = reconstruct_sigma_a(mesh16, H, coeffs16.upsilon, coeffs16.sigma_s, f, 3)
        np.testing.assert_array_equal(a.recovered, b.recovered)

    def test_requires_simplified(self, mesh16, coeffs16):
        H, f, _ = datum(mesh16, coeffs16, 3)
        with pytest.raises(InvalidParameterError):
            reconstruct_sigma_a(mesh16, H, coeffs16.upsilon, coeffs16.sigma_s, f, 3,
                                simplified=False)

    def test_error_decreases_under_refinement(self):
        gen = fem.generate_uniform_mesh(192)
        errs = []
        for n in (32, 64, 96):
            rec = fem.generate_uniform_mesh(n)
            H, c = transferred_datum(gen, rec, 1)
            res = reconstruct_sigma_a(rec, H, c.upsilon, c.sigma_s,
                                      boundary_source("f1", rec), 1, truth=c.sigma_a)
            errs.append(res.relative_l2_error)
        assert errs[0] > errs[1] > errs[2]


class TestGruneisen:
    def test_constant_round_trip(self):
        gen, rec = fem.generate_uniform_mesh(48), fem.generate_uniform_mesh(32)
        c_gen = phantom_coefficients(gen)
        c_gen = c_gen.replace(upsilon=np.full(gen.n_nodes, 1.5))
        _, _, phi = datum(gen, c_gen, 3)
        c_rec = phantom_coefficients(rec)
        H = 1.5 * c_rec.sigma_a * fem.interpolate_field(gen, phi, rec.nodes)
        res = reconstruct_gruneisen(rec, H, c_rec.sigma_a, c_rec.sigma_s,
                                    boundary_source("f1", rec), 3,
                                    truth=np.full(rec.n_nodes, 1.5))
        assert res.relative_l2_error <= 5e-3

    def test_scaling(self, mesh16, coeffs16):
        H, f, _ = datum(mesh16, coeffs16, 3)
        a = reconstruct_gruneisen(mesh16, H, coeffs16.sigma_a, coeffs16.sigma_s, f, 3)
        b = reconstruct_gruneisen(mesh16, 2 * H, coeffs16.sigma_a, coeffs16.sigma_s, f, 3)
        np.testing.assert_allclose(b.recovered, 2 * a.recovered, rtol=1e-14)

    def test_undefined_region(self, mesh16, coeffs16):
        H, f, _ = datum(mesh16, coeffs16, 3)
        sa = coeffs16.sigma_a.copy()
        sa[[5, 6, 7]] = 0.0
        with pytest.raises(UndefinedRegionError) as info:
            reconstruct_gruneisen(mesh16, H, sa, coeffs16.sigma_s, f, 3)
        np.testing.assert_array_equal(info.value.nodes, [5, 6, 7])


class TestSigmaS:
    def test_truth_start_is_stationary(self, mesh16, coeffs16):
        H, f, _ = datum(mesh16, coeffs16, 3)
        res = reconstruct_sigma_s(mesh16, H, coeffs16.sigma_a, coeffs16.upsilon,
                                  coeffs16.sigma_s, f, 3, x0=coeffs16.sigma_s)
        assert res.iterations == 0
        assert res.trace[0]["grad_norm"] <= 1e-6 * max(res.trace[0]["objective"], 1.0)
        np.testing.assert_array_equal(res.recovered, coeffs16.sigma_s)

    def test_improves_on_initial_guess(self, mesh16, coeffs16):
        H, f, _ = datum(mesh16, coeffs16, 3)
        x0 = np.full(mesh16.n_nodes, 5.0)
        res = reconstruct_sigma_s(mesh16, H, coeffs16.sigma_a, coeffs16.upsilon,
                                  coeffs16.sigma_s, f, 3, truth=coeffs16.sigma_s,
                                  opts=LbfgsOptions(max_iters=30, lower=0.5, upper=50.0))
        initial = fem.relative_l2_error(mesh16, x0, coeffs16.sigma_s)
        assert res.relative_l2_error < 0.8 * initial
        assert np.all(res.recovered[mesh16.boundary_mask] == coeffs16.sigma_s[mesh16.boundary_mask])

    def test_penalty_prefers_constant(self, mesh16, coeffs16):
        const = np.full(mesh16.n_nodes, 6.0)
        f = boundary_source("f1", mesh16)
        obj = SigmaSObjective(mesh16, np.zeros(mesh16.n_nodes), coeffs16.sigma_a,
                              coeffs16.upsilon, const, f, 3, beta=1e-3)
        H = obj.predict(const)[0]
        obj.H_star = H
        bump = np.exp(-((mesh16.nodes - 0.5) ** 2).sum(axis=1) / 0.01)
        j0, _ = obj(obj.map.restrict(const))
        j1, _ = obj(obj.map.restrict(const + bump))
        assert j0 < j1
        assert j0 == pytest.approx(0.0, abs=1e-20)

    def test_negative_beta(self, mesh16, coeffs16):
        with pytest.raises(InvalidParameterError):
            SigmaSObjective(mesh16, coeffs16.sigma_a, coeffs16.sigma_a, coeffs16.upsilon,
                            coeffs16.sigma_s, boundary_source("f1", mesh16), 3, beta=-1.0)

    def test_misfit_norms(self, mesh8):
        e = np.ones(mesh8.n_nodes)
        assert e @ misfit_matrix(mesh8, "L2") @ e == pytest.approx(1.0)
        # constants carry no gradient, so H1 and L2 agree
        assert e @ misfit_matrix(mesh8, "H1") @ e == pytest.approx(1.0)
        with pytest.raises(InvalidParameterError):
            misfit_matrix(mesh8, "H2")


class TestDiagnostic:
    def _inputs(self, mesh, coeffs, N):
        f = boundary_source("f1", mesh)
        model = SpnModel(mesh, N)
        sol = model.forward(coeffs, f)
        H = coeffs.upsilon * coeffs.sigma_a * sol.phi0
        return model, sol.Phi, H

    def test_n1_vanishes(self, mesh16, coeffs16):
        model, Phi, H = self._inputs(mesh16, coeffs16, 1)
        rep = diagnostic_VN(mesh16, model, Phi, coeffs16.sigma_s, coeffs16.sigma_a,
                            coeffs16.upsilon, H, 1.0, 1.0)
        assert not np.any(rep.values)

    @pytest.mark.parametrize("lam", [0.0, 2.0, -1.0])
    def test_lambda_range(self, mesh16, coeffs16, lam):
        model, Phi, H = self._inputs(mesh16, coeffs16, 3)
        with pytest.raises(InvalidParameterError):
            diagnostic_VN(mesh16, model, Phi, coeffs16.sigma_s, coeffs16.sigma_a,
                          coeffs16.upsilon, H, lam, 1.0)

    def test_linear_in_lambda(self, mesh16, coeffs16):
        model, Phi, H = self._inputs(mesh16, coeffs16, 3)
        args = (mesh16, model, Phi, coeffs16.sigma_s, coeffs16.sigma_a, coeffs16.upsilon, H)
        v1 = diagnostic_VN(*args, 0.5, 1.0).values
        v2 = diagnostic_VN(*args, 1.5, 1.0).values
        w = model.mats.s1 @ (model.mats.Q @ Phi)
        # at lambda -> 2 c_lower the first coefficient is sigma_s1 alone
        np.testing.assert_allclose(v1 - v2, w ** 2, atol=1e-12 * np.abs(v1).max())
        rep = diagnostic_VN(*args, 2.0 - 1e-12, 1.0)
        first = coeffs16.sigma_s * w ** 2
        rest = v2 - (coeffs16.sigma_s + 0.5) * w ** 2
        np.testing.assert_allclose(rep.values, first + rest, atol=1e-9 * np.abs(v1).max())
        assert 0.0 <= rep.positive_fraction <= 1.0

