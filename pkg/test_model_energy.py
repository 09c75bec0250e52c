import unittest
import sys
import os

import numpy as np

# Add project root to path
sys.path.append(os.getcwd())

from core.spectral import SpectralBox, smooth_random
from core.model import (
    CouplingConfig,
    DecompositionKind,
    ModelConfig,
    SpinorField,
    VectorPotential,
    build_cutoff,
    build_potential,
    hypothesis_report,
    kramers_conjugate,
    localization_pair,
)
from core.energy import (
    FIELD_WEIGHT,
    PauliOperator,
    energy,
    energy_cutoff,
    ims_check,
    uv_split,
    virial,
)


def make_model(box, g=0.1, cutoff_kind="sharp", Lambda=3.0, uv=None, potential="harmonic"):
    potential = build_potential(potential, {"omega0": 1.0}, box)
    cutoff = build_cutoff(cutoff_kind, {"Lambda": Lambda}, box)
    return ModelConfig(box=box, potential=potential, cutoff=cutoff, coupling=CouplingConfig(g=g, uv_cutoff=uv))


def random_pair(box, rng):
    u = SpinorField(box, smooth_random(box, rng, components=2, real=False)).normalize()
    A = VectorPotential.project(box, smooth_random(box, rng, components=3))
    return u, A


class TestModel(unittest.TestCase):
    def setUp(self):
        self.box = SpectralBox(10.0, 16)
        self.rng = np.random.default_rng(3)

    def test_localization_pair(self):
        eta, eta_tilde, _, _ = localization_pair(self.box, 2.0)
        self.assertLess(np.max(np.abs(eta ** 2 + eta_tilde ** 2 - 1.0)), 1e-14)
        self.assertTrue(np.all(eta[self.box.r <= 2.0] == 1.0))
        self.assertTrue(np.all(eta_tilde[self.box.r >= 4.0] == 1.0))
        with self.assertRaises(ValueError) as ctx:
            localization_pair(self.box, 3.0)
        self.assertIn("RADIUS_TOO_LARGE", str(ctx.exception))
        print("✅ Test 1 Passed: Localization Pair")

    def test_potential_decompositions(self):
        cut = build_potential("harmonic", {"omega0": 1.0}, self.box)
        self.assertEqual(cut.decomposition, DecompositionKind.CUTOFF)
        self.assertLess(cut.decomposition_residual(), 1e-12)
        self.assertGreaterEqual(float(np.min(cut.v1)), 0.0)

        lift = build_potential("gaussian-well", {"depth": 2.0, "width": 1.0,
                                                 "decomposition": {"kind": "lift", "radius": 2.0}}, self.box)
        self.assertLess(lift.decomposition_residual(), 1e-12)
        self.assertGreaterEqual(float(np.min(lift.v1)), 0.0)

        none = build_potential("gaussian-well", {"decomposition": {"kind": "none"}}, self.box)
        self.assertTrue(np.all(none.v2 == 0.0))
        print("✅ Test 2 Passed: Potential Decompositions")

    def test_asymmetric_potential(self):
        values = self.box.x[0] + 0.5 * self.box.r2
        with self.assertRaises(ValueError) as ctx:
            build_potential("custom", {"values": values}, self.box)
        self.assertIn("POTENTIAL_ASYMMETRIC", str(ctx.exception))

        lenient = build_potential("custom", {"values": values}, self.box, strict=False)
        cutoff = build_cutoff("sharp", {"Lambda": 3.0}, self.box)
        report = hypothesis_report(lenient, cutoff)
        self.assertFalse(report.passed)
        self.assertIn("V_NOT_EVEN", report.issues)
        print("✅ Test 3 Passed: Asymmetric Potential Flagged")

    def test_cutoff_validation(self):
        with self.assertRaises(ValueError) as ctx:
            build_cutoff("sharp", {}, self.box)
        self.assertIn("CUTOFF_PARAMS", str(ctx.exception))
        with self.assertRaises(ValueError) as ctx:
            build_cutoff("triangle", {}, self.box)
        self.assertIn("CUTOFF_KIND", str(ctx.exception))

        one = build_cutoff("one", {}, self.box)
        self.assertTrue(np.all(one.chi1 == 0.0))
        sharp = build_cutoff("sharp", {"Lambda": 3.0}, self.box)
        self.assertTrue(np.all(sharp.chi2 == 0.0))
        restricted = one.restricted(2.0)
        self.assertTrue(np.all(restricted.values[self.box.kabs > 2.0] == 0.0))
        print("✅ Test 4 Passed: Cutoff Validation")

    def test_hypothesis_report_default(self):
        model = make_model(self.box)
        report = hypothesis_report(model.potential, model.cutoff, model.coupling)
        self.assertTrue(report.passed, report.issues)
        self.assertGreater(report.chi1_l2, 0.0)
        self.assertEqual(report.chi2_weak, 0.0)
        self.assertTrue(report.smallness_ok)
        self.assertIn("candidates", report.to_dict())
        print("✅ Test 5 Passed: Hypothesis Report")

    def test_vector_potential_admissibility(self):
        raw = smooth_random(self.box, self.rng, components=3)
        with self.assertRaises(ValueError) as ctx:
            VectorPotential(self.box, raw)
        self.assertIn("A_NOT_ADMISSIBLE", str(ctx.exception))
        A = VectorPotential.project(self.box, raw)
        self.assertGreater(A.hdot1_norm(), 0.0)
        print("✅ Test 6 Passed: Vector Potential Admissibility")

    def test_kramers_conjugate(self):
        u, A = random_pair(self.box, self.rng)
        image, A_image = kramers_conjugate(u, A)
        twice, A_twice = kramers_conjugate(image, A_image)
        self.assertLess(np.max(np.abs(twice.values + u.values)), 1e-14)
        self.assertLess(np.max(np.abs(A_twice.values - A.values)), 1e-14)
        self.assertLess(abs(image.inner(u)), 1e-12)
        print("✅ Test 7 Passed: Kramers Conjugate")


class TestEnergy(unittest.TestCase):
    def setUp(self):
        self.box = SpectralBox(10.0, 16)
        self.rng = np.random.default_rng(5)
        self.model = make_model(self.box)

    def test_zero_potential_terms_vanish(self):
        u, _ = random_pair(self.box, self.rng)
        e = energy(u, VectorPotential.zeros(self.box), self.model)
        self.assertEqual(e.e2, 0.0)
        self.assertEqual(e.e4, 0.0)
        self.assertEqual(e.e5, 0.0)
        self.assertAlmostEqual(e.total, e.e1, delta=1e-12 * abs(e.e1))
        print("✅ Test 8 Passed: Zero Vector Potential")

    def test_pauli_form_matches_five_terms(self):
        for _ in range(5):
            u, A = random_pair(self.box, self.rng)
            e = energy(u, A, self.model)
            self.assertLess(abs(e.total - e.pauli_total), 1e-10 * max(1.0, abs(e.total)))
            self.assertLess(abs(e.recombine() - e.total), 1e-14 * max(1.0, abs(e.total)))
        print("✅ Test 9 Passed: Pauli Form Identity")

    def test_operator_expectation_matches_energy(self):
        u, A = random_pair(self.box, self.rng)
        H = PauliOperator(self.model, A)
        e = energy(u, A, self.model)
        self.assertAlmostEqual(H.field_energy, FIELD_WEIGHT * e.e2, delta=1e-12 * max(1.0, e.e2))
        self.assertLess(abs(H.expectation(u.values) + H.field_energy - e.total), 1e-10 * max(1.0, abs(e.total)))

        # Hermitian
        v, _ = random_pair(self.box, self.rng)
        lhs = self.box.inner(v.values, H.apply(u.values))
        rhs = np.conj(self.box.inner(u.values, H.apply(v.values)))
        self.assertLess(abs(lhs - rhs), 1e-10 * max(1.0, abs(lhs)))
        print("✅ Test 10 Passed: Pauli Operator")

    def test_free_laplacian(self):
        model = make_model(self.box, g=0.0)
        u, _ = random_pair(self.box, self.rng)
        H = PauliOperator(model)
        expected = self.box.ifft(self.box.k2 * self.box.fft(u.values)) + model.potential.values[None] * u.values
        self.assertLess(np.max(np.abs(H.apply(u.values) - expected)), 1e-9)
        print("✅ Test 11 Passed: Free Pauli Operator")

    def test_kramers_invariance(self):
        u, A = random_pair(self.box, self.rng)
        image, A_image = kramers_conjugate(u, A)
        e = energy(u, A, self.model).total
        e_image = energy(image, A_image, self.model).total
        self.assertLess(abs(e - e_image), 1e-12 * max(1.0, abs(e)))
        print("✅ Test 12 Passed: Kramers Invariance")

    def test_uv_split_identity(self):
        u, A = random_pair(self.box, self.rng)
        Lambda = self.box.band_radius / 2.0
        low, high = uv_split(A, Lambda)
        self.assertLess(np.max(np.abs(low.values + high.values - A.values)), 1e-13)

        # ℰ_Λ(u, A) = ℰ(u, A_{≤Λ}) + ‖A_{>Λ}‖²/(32π³)
        model = self.model.with_uv_cutoff(Lambda)
        lhs = energy_cutoff(u, A, model).total
        rhs = energy(u, low, model).total + FIELD_WEIGHT * self.box.hdot1_norm(high.values) ** 2
        self.assertLess(abs(lhs - rhs), 1e-12 * max(1.0, abs(lhs)))

        with self.assertRaises(ValueError) as ctx:
            energy_cutoff(u, A, self.model)
        self.assertIn("LAMBDA_MISSING", str(ctx.exception))
        print("✅ Test 13 Passed: UV Split")

    def test_ims_localization(self):
        u, A = random_pair(self.box, self.rng)
        report = ims_check(u, A, self.box.L / 8.0)
        self.assertLess(report.relative_residual, 1e-10)
        swapped = ims_check(u, A, self.box.L / 8.0, swap=True)
        self.assertLess(swapped.relative_residual, 1e-10)
        print("✅ Test 14 Passed: IMS Localization")

    def test_virial_of_plane_wave(self):
        k0 = 2.0 * np.pi / self.box.L
        wave = np.exp(1j * k0 * self.box.x[0])
        u = SpinorField.from_scalar(self.box, wave).normalize()
        values = virial(u, VectorPotential.zeros(self.box), self.model)
        self.assertAlmostEqual(values[0], k0, delta=1e-12)
        self.assertAlmostEqual(values[1], 0.0, delta=1e-12)

        real = SpinorField.from_scalar(self.box, np.exp(-self.box.r2)).normalize()
        self.assertLess(np.max(np.abs(virial(real, VectorPotential.zeros(self.box), self.model))), 1e-12)
        print("✅ Test 15 Passed: Virial")


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
