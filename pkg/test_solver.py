import unittest
from types import SimpleNamespace
from unittest.mock import patch
import sys
import os

import numpy as np

# Add project root to path
sys.path.append(os.getcwd())

from core.spectral import SpectralBox
from core.model import (
    CouplingConfig,
    ModelConfig,
    SpinorField,
    VectorPotential,
    build_cutoff,
    build_potential,
    kramers_conjugate,
)
from core.energy import PauliOperator, energy
from core.solver import (
    ConvergenceError,
    SolverSettings,
    el_residuals,
    fix_phase,
    ground_state_scalar,
    lowest_eigenpair,
    minimize,
    update_A,
)
from core.experiments import (
    SweepError,
    a1_comparison,
    binding_report,
    contraction_estimate,
    decay_fit,
    expansion_fit,
    gap_check,
    kramers_probe,
    optimality_probe,
    perturbative_c2,
    predicted_c2,
    random_potential,
    spin_direction,
    uniqueness_probe,
    uv_sweep,
)
from core.verify_suites import hermite_oracle


def make_model(box, g=0.05, decomposition="cutoff", kind="harmonic", params=None):
    params = dict(params or {"omega0": 1.0})
    params["decomposition"] = {"kind": decomposition}
    return ModelConfig(
        box=box,
        potential=build_potential(kind, params, box),
        cutoff=build_cutoff("sharp", {"Lambda": 3.0}, box),
        coupling=CouplingConfig(g=g),
    )


class TestSolverSettings(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(ValueError) as ctx:
            SolverSettings(damping=0.0)
        self.assertIn("SOLVER_PARAMS", str(ctx.exception))
        with self.assertRaises(ValueError):
            SolverSettings(max_outer=0)

        settings = SolverSettings.from_dict({"tol_A": "1e-6", "max_outer": 12.0, "unknown_knob": 3})
        self.assertEqual(settings.tol_A, 1e-6)
        self.assertEqual(settings.max_outer, 12)
        self.assertIsInstance(settings.max_outer, int)
        print("✅ Test 1 Passed: Solver Settings")


class TestGroundState(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.box = SpectralBox(10.0, 16)
        cls.settings = SolverSettings(tol_A=1e-7, tol_u=1e-7, max_outer=200)
        cls.model = make_model(cls.box, g=0.05)
        cls.reference = ground_state_scalar(cls.box, cls.model.potential.values)
        cls.result = minimize(cls.model, cls.settings, reference=cls.reference)

    def test_scalar_ground_state(self):
        oracle = hermite_oracle(self.box, 1.0)
        self.assertLess(abs(self.reference.mu - oracle), 1e-6)
        self.assertGreater(np.sum(self.reference.u_v), 0.0)
        self.assertAlmostEqual(self.box.norm(self.reference.u_v), 1.0, delta=1e-12)
        print("✅ Test 2 Passed: Scalar Ground State Matches Oracle")

    def test_uncoupled_shortcut(self):
        model = self.model.with_coupling(0.0)
        result = minimize(model, self.settings, reference=self.reference)
        self.assertEqual(result.iterations, 0)
        self.assertEqual(result.A_gs.hdot1_norm(), 0.0)
        self.assertAlmostEqual(result.E_V, result.mu_V, delta=1e-12 * max(1.0, abs(result.mu_V)))
        self.assertTrue(result.converged)
        print("✅ Test 3 Passed: g=0 Shortcut")

    def test_coupled_minimizer(self):
        r = self.result
        self.assertTrue(r.converged)
        self.assertLessEqual(r.residual_A, self.settings.tol_A)
        self.assertLessEqual(r.residual_u, self.settings.tol_u)
        # A ≡ 0 是容许的，所以 E_V ≤ μ_V
        self.assertLessEqual(r.E_V, r.mu_V + 1e-12)
        history = np.array(r.energy_history)
        self.assertTrue(np.all(np.diff(history) <= 1e-12 * max(1.0, abs(history[0]))))
        self.assertLessEqual(np.linalg.norm(r.virial), self.settings.tol_virial)
        self.assertTrue(r.u_gs.is_normalized())
        record = r.to_record()
        self.assertNotIn("wall_time", record)
        print("✅ Test 4 Passed: Coupled Minimizer")

    def test_residuals_and_optimality(self):
        residuals = el_residuals(self.result.u_gs, self.result.A_gs, self.model, self.reference)
        self.assertLessEqual(residuals.residual_A, self.settings.tol_A)
        self.assertLessEqual(residuals.residual_u, self.settings.tol_u)
        worst = optimality_probe(self.result, self.model, np.random.default_rng(1), samples=5)
        self.assertGreaterEqual(worst, -1e-8)
        print("✅ Test 5 Passed: Euler-Lagrange Residuals / Optimality")

    def test_kramers_image_energy(self):
        u_img, A_img = kramers_conjugate(self.result.u_gs, self.result.A_gs)
        image = energy(u_img, A_img, self.model).total
        self.assertLess(abs(image - self.result.E_V), 1e-10 * max(1.0, abs(self.result.E_V)))
        print("✅ Test 6 Passed: Kramers Image Energy")

    def test_fix_phase(self):
        u = self.reference.spinor()
        rotated = SpinorField(self.box, u.values * np.exp(1.3j))
        fixed = fix_phase(rotated, u)
        z = u.inner(fixed)
        self.assertAlmostEqual(z.imag, 0.0, delta=1e-12)
        self.assertGreater(z.real, 0.0)
        print("✅ Test 7 Passed: Phase Fixing")

    def test_descent_stall(self):
        settings = SolverSettings(tol_A=1e-16, tol_u=1e-16, max_outer=1, inner_steps=1)
        with self.assertRaises(ConvergenceError) as ctx:
            minimize(self.model, settings, reference=self.reference)
        self.assertIn("DESCENT_STALL", str(ctx.exception))
        self.assertIsNotNone(ctx.exception.best)
        self.assertIn("energy_history", ctx.exception.diagnostics)
        print("✅ Test 8 Passed: Descent Stall Reported")

    def test_update_A_damping(self):
        with self.assertRaises(ValueError):
            update_A(self.result.u_gs, self.result.A_gs, self.model, damping=1.5)
        print("✅ Test 9 Passed: update_A Damping Validation")

    def test_uniqueness_and_contraction(self):
        model = self.model.with_coupling(0.01)
        u = self.reference.spinor()
        rng = np.random.default_rng(9)
        seeds = [random_potential(self.box, rng), random_potential(self.box, rng, scale=2.0)]
        report = uniqueness_probe(u, model, seeds, damping=1.0)
        self.assertTrue(report.contracting)
        self.assertLess(report.max_distance, 1e-7)
        self.assertLess(contraction_estimate(u, model, rng, pairs=3), 1.0)
        print("✅ Test 10 Passed: Uniqueness Of A Given u")

    def test_c2_predictions(self):
        self.assertGreater(predicted_c2(self.model, self.reference), 0.0)
        self.assertLess(perturbative_c2(self.model, self.reference), 0.0)
        up = self.reference.spinor((1.0, 0.0))
        self.assertTrue(np.allclose(spin_direction(up, self.reference), [0.0, 0.0, 1.0], atol=1e-12))
        tilted = self.reference.spinor((1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)))
        self.assertTrue(np.allclose(spin_direction(tilted, self.reference), [1.0, 0.0, 0.0], atol=1e-12))
        print("✅ Test 11 Passed: Second Order Coefficients / Spin Direction")


class TestSweeps(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.box = SpectralBox(10.0, 16)
        cls.model = make_model(cls.box, g=0.05)
        cls.reference = ground_state_scalar(cls.box, cls.model.potential.values)

    def _fake_result(self, E, mu=0.0, phi=0.0):
        return SimpleNamespace(
            E_V=E, mu_V=mu, residual_A=0.0, residual_u=0.0, phi_norm=phi,
            u_gs=self.reference.spinor(), A_gs=VectorPotential.zeros(self.box),
        )

    def test_ladder_validation(self):
        with self.assertRaises(ValueError) as ctx:
            uv_sweep(self.model, [4.0, 2.0], reference=self.reference)
        self.assertIn("LADDER_INVALID", str(ctx.exception))
        with self.assertRaises(ValueError) as ctx:
            expansion_fit(self.model, [0.05], reference=self.reference)
        self.assertIn("FIT_CONDITIONING", str(ctx.exception))
        print("✅ Test 12 Passed: Ladder Validation")

    def test_uv_sweep_monotone(self):
        def fake(model, settings=None, reference=None, **kwargs):
            return self._fake_result(1.0 / model.uv_cutoff ** 2)

        with patch('core.experiments.minimize', side_effect=fake):
            report = uv_sweep(self.model, [1.0, 2.0, 4.0], reference=self.reference, workers=2)
        self.assertTrue(report.monotone)
        self.assertTrue(report.cauchy_shrinking)
        self.assertEqual([e.uv_cutoff for e in report.entries], [1.0, 2.0, 4.0])
        self.assertAlmostEqual(report.differences[0], 0.75, delta=1e-15)
        print("✅ Test 13 Passed: UV Sweep Monotonicity")

    def test_uv_sweep_member_failure(self):
        def fake(model, settings=None, reference=None, **kwargs):
            if model.uv_cutoff == 2.0:
                raise ConvergenceError("DESCENT_STALL: test")
            return self._fake_result(1.0 / model.uv_cutoff)

        with patch('core.experiments.minimize', side_effect=fake):
            with self.assertRaises(SweepError) as ctx:
                uv_sweep(self.model, [1.0, 2.0, 4.0], reference=self.reference)
        partial = ctx.exception.partial
        self.assertIn(2.0, partial.failures)
        self.assertEqual(len(partial.entries), 2)
        print("✅ Test 14 Passed: UV Sweep Keeps Partial Results")

    def test_expansion_fit_synthetic(self):
        mu_v = energy(self.reference.spinor(), VectorPotential.zeros(self.box),
                      self.model.with_coupling(0.0)).total
        c2, c4 = -3.0, 5.0

        def fake(model, settings=None, reference=None, **kwargs):
            g = model.g
            return self._fake_result(mu_v + c2 * g ** 2 + c4 * g ** 4, mu=mu_v, phi=g ** 2)

        with patch('core.experiments.minimize', side_effect=fake):
            report = expansion_fit(self.model, [0.08, 0.02, 0.04], reference=self.reference)
        self.assertEqual(report.g_values, [0.02, 0.04, 0.08])
        self.assertAlmostEqual(report.c2, c2, delta=1e-8)
        self.assertAlmostEqual(report.c4, c4, delta=1e-4)
        self.assertAlmostEqual(report.remainder_slope, 4.0, delta=1e-3)
        self.assertAlmostEqual(report.phi_slope, 2.0, delta=1e-10)
        self.assertEqual(report.sign, -1)
        header, rows = report.table()
        self.assertEqual(len(rows), 3)
        self.assertEqual(len(header), len(rows[0]))
        print("✅ Test 15 Passed: Expansion Fit On Synthetic Energies")

    def test_gap_check(self):
        def fake(model, settings=None, **kwargs):
            if model.potential.params.get("derived_from"):
                return self._fake_result(0.5, mu=0.6)
            return self._fake_result(0.2, mu=0.3)

        with patch('core.experiments.minimize', side_effect=fake):
            report = gap_check(self.model)
        self.assertAlmostEqual(report.gap, 0.3, delta=1e-15)
        self.assertTrue(report.binding)

        trivial = make_model(self.box, decomposition="none")
        with patch('core.experiments.minimize', side_effect=fake) as mocked:
            report = gap_check(trivial)
        self.assertEqual(report.gap, 0.0)
        mocked.assert_called_once()
        print("✅ Test 16 Passed: Gap Check")


class TestDecayFit(unittest.TestCase):
    def setUp(self):
        self.box = SpectralBox(16.0, 24)

    def test_yukawa_rate(self):
        r = np.maximum(self.box.r, self.box.dx)
        report = decay_fit(np.exp(-r) / r, self.box)
        self.assertLess(abs(report.gamma - 1.0), 0.1)
        self.assertFalse(report.super_exponential)
        print("✅ Test 17 Passed: Exponential Decay Rate")

    def test_gaussian_flagged(self):
        report = decay_fit(np.exp(-self.box.r2 / 2.0), self.box)
        self.assertTrue(report.super_exponential)
        print("✅ Test 18 Passed: Super-Exponential Decay Flagged")

    def test_flat_profile(self):
        with self.assertRaises(ValueError) as ctx:
            decay_fit(np.ones(self.box.shape), self.box)
        self.assertIn("NO_DECAY", str(ctx.exception))
        print("✅ Test 19 Passed: Flat Profile Rejected")


class TestProbes(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.box = SpectralBox(10.0, 16)
        cls.settings = SolverSettings(tol_A=1e-7, tol_u=1e-7, max_outer=200)
        cls.model = make_model(cls.box, g=0.05)
        cls.reference = ground_state_scalar(cls.box, cls.model.potential.values)
        cls.result = minimize(cls.model, cls.settings, reference=cls.reference)

    def test_lowest_eigenpair(self):
        H = PauliOperator(self.model)
        seed = SpinorField.from_scalar(self.box, np.exp(-0.4 * self.box.r2)).normalize()
        mu, u = lowest_eigenpair(H, seed, tol=1e-9)
        self.assertAlmostEqual(mu, self.reference.mu, delta=1e-7)
        self.assertTrue(u.is_normalized())
        with self.assertRaises(ValueError) as ctx:
            lowest_eigenpair(H, SpinorField(self.box, 2.0 * seed.values))
        self.assertIn("U_NOT_NORMALIZED", str(ctx.exception))
        print("✅ Test 20 Passed: Lowest Eigenpair")

    def test_first_order_potential(self):
        report = a1_comparison(self.result.u_gs, self.result.A_gs, self.model, self.reference)
        self.assertGreater(report.a_norm, 0.0)
        self.assertLess(report.deviation, 0.1 * report.a_norm)
        self.assertAlmostEqual(float(np.linalg.norm(report.omega)), 1.0, delta=1e-2)
        print("✅ Test 21 Passed: First Order Vector Potential")

    def test_binding_report(self):
        record = binding_report(self.model, self.result)
        self.assertEqual(record["E_V"], self.result.E_V)
        self.assertGreaterEqual(record["binding_energy"], -1e-12)
        self.assertNotIn("binding", record)
        print("✅ Test 22 Passed: Binding Report")

    def test_kramers_probe(self):
        probe = kramers_probe(self.model, self.result, self.settings, self.reference)
        scale = max(1.0, abs(self.result.E_V))
        self.assertLess(abs(probe.image_energy - probe.E_V), 1e-10 * scale)
        self.assertLess(abs(probe.rerun_energy - probe.E_V), 1e-6 * scale)
        print("✅ Test 23 Passed: Kramers Probe")


class TestSolverFailures(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.box = SpectralBox(10.0, 16)
        cls.settings = SolverSettings(tol_A=1e-7, tol_u=1e-7, max_outer=200)
        cls.model = make_model(cls.box, g=0.05)
        cls.reference = ground_state_scalar(cls.box, cls.model.potential.values)

    def test_eigenpair_residual(self):
        A = random_potential(self.box, np.random.default_rng(12), scale=0.5)
        H = PauliOperator(self.model, A)
        seed = self.reference.spinor()
        mu, u = lowest_eigenpair(H, seed, tol=1e-9)
        residual = self.box.norm(H.apply(u.values) - mu * u.values)
        self.assertLessEqual(residual, 1e-8)
        self.assertLessEqual(mu, H.expectation(seed.values) + 1e-12 * max(1.0, abs(mu)))
        print("✅ Test 24 Passed: Eigenpair Residual")

    def test_eigenvalue_above_seed_restarts(self):
        H = PauliOperator(self.model)
        seed = SpinorField.from_scalar(self.box, np.exp(-0.4 * self.box.r2)).normalize()

        def excited(operator, apply, X0, preconditioner, tol, maxiter):
            vectors = X0 / np.linalg.norm(X0, axis=0)
            return np.array([100.0, 100.0]), vectors, np.zeros(2)

        with patch('core.solver._lobpcg_lowest', side_effect=excited):
            mu, u = lowest_eigenpair(H, seed, tol=1e-9)
        self.assertAlmostEqual(mu, self.reference.mu, delta=1e-7)
        self.assertLessEqual(self.box.norm(H.apply(u.values) - mu * u.values), 1e-8)

        with patch('core.solver._lobpcg_lowest', side_effect=excited), \
                patch('core.solver._eigsh_lowest', side_effect=RuntimeError("no convergence")):
            with self.assertRaises(ConvergenceError) as ctx:
                lowest_eigenpair(H, seed, tol=1e-9)
        self.assertIn("EIG_NOT_MINIMAL", str(ctx.exception))
        print("✅ Test 25 Passed: Eigenvalue Above Seed Restarts")

    def test_virial_defect_not_converged(self):
        with patch('core.solver.virial', return_value=np.array([0.5, 0.0, 0.0])):
            with self.assertRaises(ConvergenceError) as ctx:
                minimize(self.model, self.settings, reference=self.reference)
        self.assertIn("VIRIAL_DEFECT", str(ctx.exception))
        self.assertFalse(ctx.exception.best.converged)
        self.assertEqual(ctx.exception.diagnostics["virial"], [0.5, 0.0, 0.0])
        print("✅ Test 26 Passed: Virial Defect Is Not Convergence")


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
