import unittest
from unittest.mock import patch
import sys
import os

import numpy as np

# Add project root to path
sys.path.append(os.getcwd())

from core.spectral import SpectralBox, smooth_random
from core.model import CouplingConfig, ModelConfig, SpinorField, VectorPotential, build_cutoff, build_potential
from core.energy import energy
from core.quasiclassical import (
    PhotonParameter,
    normal_ordering_constant,
    parameter_from_potential,
    polarization_frame,
    potential_from_parameter,
    product_state_energy,
)
from core.fockcheck import (
    TruncatedFock,
    adversarial_state,
    coherent_eigen_check,
    coherent_expectation_check,
    field_estimate_check,
    poisson_tail,
    tiny_reduction_check,
)


F = (0.05 + 0.02j, -0.03j)
H = (0.7, 0.3 - 0.2j)
OMEGA = (1.0, 2.5)


def make_model(box, g=0.3, cutoff="sharp"):
    return ModelConfig(
        box=box,
        potential=build_potential("harmonic", {"omega0": 1.0}, box),
        cutoff=build_cutoff(cutoff, {"Lambda": 3.0}, box),
        coupling=CouplingConfig(g=g),
    )


def random_parameter(box, rng):
    mask = box.band_mask(0.5)
    c1 = (rng.standard_normal(box.shape) + 1j * rng.standard_normal(box.shape)) * mask
    c2 = (rng.standard_normal(box.shape) + 1j * rng.standard_normal(box.shape)) * mask
    return PhotonParameter.from_components(box, c1, c2)


class TestPhotonParameter(unittest.TestCase):
    def setUp(self):
        self.box = SpectralBox(10.0, 16)
        self.rng = np.random.default_rng(21)

    def test_polarization_frame(self):
        eps1, eps2 = polarization_frame(self.box)
        nonzero = self.box.kabs > 0
        self.assertLess(np.max(np.abs(np.sum(eps1 ** 2, axis=0) - 1.0)), 1e-14)
        self.assertLess(np.max(np.abs(np.sum(eps2 ** 2, axis=0) - 1.0)), 1e-14)
        self.assertLess(np.max(np.abs(np.sum(eps1 * eps2, axis=0))), 1e-14)
        self.assertLess(np.max(np.abs(np.sum(self.box.k * eps1, axis=0)[nonzero])), 1e-12)
        self.assertLess(np.max(np.abs(np.sum(self.box.k * eps2, axis=0)[nonzero])), 1e-12)
        print("✅ Test 1 Passed: Polarization Frame")

    def test_transversality(self):
        longitudinal = self.box.k.astype(np.complex128)
        with self.assertRaises(ValueError) as ctx:
            PhotonParameter(self.box, longitudinal, project=False)
        self.assertIn("NOT_TRANSVERSE", str(ctx.exception))
        projected = PhotonParameter(self.box, longitudinal)
        self.assertLess(np.max(np.abs(projected.f)), 1e-12)
        print("✅ Test 2 Passed: Transversality")

    def test_plus_minus_split(self):
        f = random_parameter(self.box, self.rng)
        plus, minus = f.plus_part(), f.minus_part()
        self.assertLess(np.max(np.abs(plus + minus - f.f)), 1e-14)
        self.assertLess(np.max(np.abs(self.box.reflect(plus) - np.conj(plus))), 1e-14)
        self.assertLess(np.max(np.abs(self.box.reflect(minus) + np.conj(minus))), 1e-14)
        total = f.kinetic("full")
        self.assertAlmostEqual(total, f.kinetic("plus") + f.kinetic("minus"), delta=1e-10 * total)
        print("✅ Test 3 Passed: f± Split")

    def test_potential_roundtrip(self):
        f = random_parameter(self.box, self.rng)
        A = potential_from_parameter(f)
        recovered = parameter_from_potential(A)
        scale = np.max(np.abs(f.plus_part()))
        self.assertLess(np.max(np.abs(recovered.f - f.plus_part())), 1e-10 * scale)
        self.assertLess(recovered.kinetic("minus"), 1e-20 + 1e-12 * recovered.kinetic("full"))
        again = potential_from_parameter(recovered)
        self.assertLess(np.max(np.abs(again.values - A.values)), 1e-10 * np.max(np.abs(A.values)))
        print("✅ Test 4 Passed: A_f Roundtrip")

    def test_normal_ordering_constant(self):
        sharp = build_cutoff("sharp", {"Lambda": 3.0}, self.box)
        modes = [((1, 0, 0), 0), ((0, 2, 0), 1)]
        expected = 0.3 ** 2 * sum(self.box.w_k / float(self.box.kabs[idx]) for idx, _ in modes)
        self.assertAlmostEqual(normal_ordering_constant(sharp, 0.3, modes=modes), expected, delta=1e-14)
        with self.assertRaises(ValueError) as ctx:
            normal_ordering_constant(sharp, 0.3, modes=[((0, 0, 0), 0)])
        self.assertIn("MODE_INVALID", str(ctx.exception))

        one = build_cutoff("one", {}, self.box)
        self.assertLess(normal_ordering_constant(one, 0.3, uv_cutoff=2.0), normal_ordering_constant(sharp, 0.3))
        with patch('core.quasiclassical.logger') as mock_logger:
            normal_ordering_constant(one, 0.3)
        mock_logger.warning.assert_called_once()
        print("✅ Test 5 Passed: Normal Ordering Constant")

    def test_product_state_vacuum(self):
        model = make_model(self.box)
        u = SpinorField(self.box, smooth_random(self.box, self.rng, components=2, real=False)).normalize()
        result = product_state_energy(u, PhotonParameter.zeros(self.box), model)
        expected = result.constant + energy(u, VectorPotential.zeros(self.box), model).total
        self.assertAlmostEqual(result.total, expected, delta=1e-12)
        self.assertEqual(result.minus_term, 0.0)

        other = SpectralBox(12.0, 16)
        with self.assertRaises(ValueError) as ctx:
            product_state_energy(u, PhotonParameter.zeros(other), model)
        self.assertIn("BOX_MISMATCH", str(ctx.exception))
        print("✅ Test 6 Passed: Product State In Vacuum")


class TestTruncatedFock(unittest.TestCase):
    def test_dimensions_and_params(self):
        self.assertEqual(TruncatedFock(2, 3).dim, 10)
        self.assertEqual(TruncatedFock(1, 5).dim, 6)
        with self.assertRaises(ValueError) as ctx:
            TruncatedFock(5, 3)
        self.assertIn("FOCK_PARAMS", str(ctx.exception))
        print("✅ Test 7 Passed: Fock Dimensions")

    def test_ccr(self):
        self.assertLess(TruncatedFock(2, 10).ccr_residual(), 1e-12)
        print("✅ Test 8 Passed: Canonical Commutation Relations")

    def test_coherent_eigenvector(self):
        fock = TruncatedFock(2, 10)
        check = coherent_eigen_check(fock, F, H)
        self.assertTrue(check.passed, check.to_dict())
        self.assertAlmostEqual(abs(check.eigenvalue - np.vdot(H, F)), 0.0, delta=1e-15)

        with self.assertRaises(ValueError) as ctx:
            coherent_eigen_check(TruncatedFock(2, 4), (3.0, 0.0), H)
        self.assertIn("FOCK_CUTOFF_TOO_SMALL", str(ctx.exception))
        print("✅ Test 9 Passed: Coherent State Eigenvector")

    def test_expectations(self):
        fock = TruncatedFock(2, 10)
        check = coherent_expectation_check(fock, F, H, OMEGA)
        self.assertEqual(check.prefactor, "sqrt2")
        self.assertTrue(check.dgamma_passed)
        self.assertAlmostEqual(check.phi_expectation, check.phi_reference_sqrt2, delta=1e-10)

        orthogonal = tuple(1j * np.asarray(F))
        check = coherent_expectation_check(fock, F, orthogonal, OMEGA)
        self.assertEqual(check.prefactor, "undetermined")
        print("✅ Test 10 Passed: Coherent Expectations")

    def test_field_estimates(self):
        fock = TruncatedFock(2, 6)
        rng = np.random.default_rng(8)
        for _ in range(20):
            slack1, slack2 = field_estimate_check(fock, OMEGA, H, fock.random_state(rng))
            self.assertGreaterEqual(slack1, -1e-12)
            self.assertGreaterEqual(slack2, -1e-12)
        tight, _ = field_estimate_check(fock, OMEGA, H, adversarial_state(fock, OMEGA, H))
        self.assertLess(abs(tight), 1e-12)

        with self.assertRaises(ValueError) as ctx:
            field_estimate_check(fock, (1.0, 0.0), H, fock.vacuum())
        self.assertIn("OMEGA_NOT_POSITIVE", str(ctx.exception))
        print("✅ Test 11 Passed: Field Operator Estimates")

    def test_poisson_tail(self):
        self.assertEqual(poisson_tail(0.0, 1), 0.0)
        self.assertEqual(poisson_tail(0.7, 0), 1.0)
        tails = [poisson_tail(0.7, n) for n in range(1, 8)]
        self.assertTrue(all(b < a for a, b in zip(tails, tails[1:])))
        self.assertAlmostEqual(poisson_tail(0.7, 1), 1.0 - np.exp(-0.7), delta=1e-14)
        print("✅ Test 12 Passed: Poisson Tail")


class TestTinyReduction(unittest.TestCase):
    def setUp(self):
        self.box = SpectralBox(10.0, 16)
        self.model = make_model(self.box, g=0.3)
        rng = np.random.default_rng(13)
        self.u = SpinorField(self.box, smooth_random(self.box, rng, components=2, real=False)).normalize()
        self.modes = [((1, 0, 0), 0), ((0, 1, 0), 1)]
        self.alphas = (0.05, 0.03j)

    def test_reduction_matches_formula(self):
        result = tiny_reduction_check(self.u, self.model, self.modes, self.alphas)
        self.assertTrue(result.passed, result.to_dict())
        self.assertLess(result.discrepancy, 1e-6)
        print("✅ Test 13 Passed: Few-Mode Product State Energy")

    def test_invalid_modes(self):
        with self.assertRaises(ValueError) as ctx:
            tiny_reduction_check(self.u, self.model, [((1, 0, 0), 0), ((1, 0, 0), 0)], self.alphas)
        self.assertIn("MODE_INVALID", str(ctx.exception))
        with self.assertRaises(ValueError) as ctx:
            tiny_reduction_check(self.u, self.model, [((8, 0, 0), 0)], (0.05,))
        self.assertIn("MODE_INVALID", str(ctx.exception))
        print("✅ Test 14 Passed: Invalid Photon Modes")


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
