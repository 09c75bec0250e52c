"""
MSQED Lab - 截断 Fock 空间
少模、有限光子数的稠密矩阵模型，用来精确检验相干态恒等式、场算符估计以及乘积态能量公式
"""
from dataclasses import dataclass
from itertools import product
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.special import gammainc, gammaln

from .model import ModelConfig, SpinorField, spin_density
from .energy import energy
from .quasiclassical import PhotonParameter, normal_ordering_constant, polarization_frame, potential_from_parameter


MAX_MODES = 4
MAX_PHOTONS = 10
ROUNDOFF = 1e-12


def poisson_tail(lam: float, n: int) -> float:
    """P(N ≥ n)，N ~ Poisson(λ)"""
    if n <= 0:
        return 1.0
    if lam <= 0:
        return 0.0
    return float(gammainc(n, lam))


class TruncatedFock:
    """
    M 个模、总光子数 ≤ n_max 的截断 Fock 空间

    a_i 为精确的限制矩阵，a_i† 取其共轭转置。
    """

    def __init__(self, M: int, n_max: int):
        if not 1 <= M <= MAX_MODES:
            raise ValueError(f"FOCK_PARAMS: 模数 M 必须在 [1, {MAX_MODES}] 内, 收到 {M}")
        if not 0 <= n_max <= MAX_PHOTONS:
            raise ValueError(f"FOCK_PARAMS: n_max 必须在 [0, {MAX_PHOTONS}] 内, 收到 {n_max}")
        self.M = M
        self.n_max = n_max
        basis = [occ for occ in product(range(n_max + 1), repeat=M) if sum(occ) <= n_max]
        basis.sort(key=lambda occ: (sum(occ), tuple(-n for n in occ)))
        self.basis: List[Tuple[int, ...]] = basis
        self.index = {occ: i for i, occ in enumerate(basis)}
        self.dim = len(basis)
        self.occupations = np.array(basis, dtype=float)
        self.totals = self.occupations.sum(axis=1)

        self.annihilators = []
        for i in range(M):
            a = np.zeros((self.dim, self.dim), dtype=np.complex128)
            for col, occ in enumerate(basis):
                if occ[i] == 0:
                    continue
                lowered = list(occ)
                lowered[i] -= 1
                a[self.index[tuple(lowered)], col] = np.sqrt(occ[i])
            self.annihilators.append(a)
        logger.debug(f"截断 Fock 空间: M={M}, n_max={n_max}, 维数 {self.dim}")

    def _check_vector(self, h: Sequence[complex]) -> np.ndarray:
        h = np.asarray(h, dtype=np.complex128)
        if h.shape != (self.M,):
            raise ValueError(f"FOCK_PARAMS: 需要长度为 {self.M} 的向量, 收到形状 {h.shape}")
        return h

    def a(self, h: Sequence[complex]) -> np.ndarray:
        """a(h) = Σ conj(h_i) a_i"""
        h = self._check_vector(h)
        return sum(np.conj(h[i]) * self.annihilators[i] for i in range(self.M))

    def a_dag(self, h: Sequence[complex]) -> np.ndarray:
        return self.a(h).conj().T

    def field(self, h: Sequence[complex]) -> np.ndarray:
        """Φ(h) = (a(h) + a†(h))/√2"""
        ah = self.a(h)
        return (ah + ah.conj().T) / np.sqrt(2.0)

    def second_quantization(self, omega) -> np.ndarray:
        """dΓ(ω) = Σ ω_ij a_i† a_j；一维输入视为对角"""
        omega = np.asarray(omega, dtype=np.complex128)
        if omega.ndim == 1:
            omega = np.diag(omega)
        if omega.shape != (self.M, self.M):
            raise ValueError(f"FOCK_PARAMS: ω 需要形状 {(self.M, self.M)}, 收到 {omega.shape}")
        out = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for i in range(self.M):
            for j in range(self.M):
                if omega[i, j] != 0:
                    out += omega[i, j] * self.annihilators[i].conj().T @ self.annihilators[j]
        return out

    def number_operator(self) -> np.ndarray:
        return np.diag(self.totals).astype(np.complex128)

    def vacuum(self) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=np.complex128)
        psi[0] = 1.0
        return psi

    def coherent(self, f: Sequence[complex]) -> np.ndarray:
        """归一化的截断展开 e^{-‖f‖²/2} Σ f^{⊗n}/√n!"""
        f = self._check_vector(f)
        psi = np.ones(self.dim, dtype=np.complex128)
        for i in range(self.M):
            powers = np.array([complex(f[i]) ** p for p in range(self.n_max + 1)])
            n = self.occupations[:, i].astype(int)
            psi *= powers[n] * np.exp(-0.5 * gammaln(n + 1.0))
        return psi / np.linalg.norm(psi)

    def random_state(self, rng: np.random.Generator) -> np.ndarray:
        psi = rng.standard_normal(self.dim) + 1j * rng.standard_normal(self.dim)
        return psi / np.linalg.norm(psi)

    def ccr_residual(self) -> float:
        """在总光子数 ≤ n_max−1 的子空间上 max |[a_i, a_j†] − δ_ij|"""
        safe = self.totals <= self.n_max - 1
        worst = 0.0
        for i in range(self.M):
            for j in range(self.M):
                ai, aj = self.annihilators[i], self.annihilators[j]
                comm = ai @ aj.conj().T - aj.conj().T @ ai
                if i == j:
                    comm = comm - np.eye(self.dim)
                worst = max(worst, float(np.max(np.abs(comm[:, safe]))) if np.any(safe) else 0.0)
        return worst

    def tail(self, f: Sequence[complex]) -> float:
        """相干态在截断之外的权重 P(N > n_max)"""
        lam = float(np.sum(np.abs(self._check_vector(f)) ** 2))
        return poisson_tail(lam, self.n_max + 1)


def _require_tail(fock: TruncatedFock, f: Sequence[complex], tol: float) -> float:
    tail = fock.tail(f)
    if tail > tol:
        raise ValueError(f"FOCK_CUTOFF_TOO_SMALL: 截断尾部 {tail:.3e} > {tol:.1e}，请增大 n_max")
    return tail


@dataclass
class EigenCheck:
    residual: float
    bound: float
    eigenvalue: complex
    tail: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.bound

    def to_dict(self) -> Dict[str, Any]:
        return {"residual": self.residual, "bound": self.bound, "eigenvalue": self.eigenvalue,
                "tail": self.tail, "passed": self.passed}


def coherent_eigen_check(fock: TruncatedFock, f: Sequence[complex], h: Sequence[complex], tol: float = 1e-8) -> EigenCheck:
    """‖a(h)Ψ_f − ⟨h,f⟩Ψ_f‖，误差只来自最高光子数扇区"""
    tail = _require_tail(fock, f, tol)
    f = np.asarray(f, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    psi = fock.coherent(f)
    z = complex(np.vdot(h, f))
    residual = float(np.linalg.norm(fock.a(h) @ psi - z * psi))
    lam = float(np.vdot(f, f).real)
    bound = abs(z) * np.sqrt(poisson_tail(lam, fock.n_max) / (1.0 - tail)) + ROUNDOFF * (1.0 + abs(z))
    return EigenCheck(residual=residual, bound=float(bound), eigenvalue=z, tail=tail)


@dataclass
class ExpectationCheck:
    phi_expectation: float
    dgamma_expectation: float
    dgamma_reference: float
    dgamma_bound: float
    phi_reference_two: float
    phi_reference_sqrt2: float
    prefactor: str
    tail: float

    @property
    def dgamma_passed(self) -> bool:
        return abs(self.dgamma_expectation - self.dgamma_reference) <= self.dgamma_bound

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in self.__dataclass_fields__} | {"dgamma_passed": self.dgamma_passed}


def coherent_expectation_check(fock: TruncatedFock,
                               f: Sequence[complex],
                               h: Sequence[complex],
                               omega,
                               tol: float = 1e-8) -> ExpectationCheck:
    """
    ⟨Ψ_f,Φ(h)Ψ_f⟩ 与 ⟨Ψ_f,dΓ(ω)Ψ_f⟩

    Φ 的期望同时与 2Re⟨h,f⟩ 和 √2Re⟨h,f⟩ 比较，prefactor 记录与哪个吻合。
    """
    tail = _require_tail(fock, f, tol)
    f = np.asarray(f, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    omega_m = np.asarray(omega, dtype=np.complex128)
    if omega_m.ndim == 1:
        omega_m = np.diag(omega_m)
    psi = fock.coherent(f)
    phi = float(np.vdot(psi, fock.field(h) @ psi).real)
    dgamma = float(np.vdot(psi, fock.second_quantization(omega_m) @ psi).real)
    reference = float(np.vdot(f, omega_m @ f).real)
    re = float(np.vdot(h, f).real)

    lam = float(np.vdot(f, f).real)
    op_norm = float(np.linalg.norm(omega_m, 2))
    dgamma_bound = op_norm * lam * (poisson_tail(lam, fock.n_max) + tail) / (1.0 - tail) + ROUNDOFF * (1.0 + abs(reference))

    two, sqrt2 = 2.0 * re, np.sqrt(2.0) * re
    if abs(re) < ROUNDOFF:
        prefactor = "undetermined"
    else:
        prefactor = "sqrt2" if abs(phi - sqrt2) < abs(phi - two) else "2"
    if prefactor == "sqrt2":
        logger.info(f"Φ 期望为 √2·Re⟨h,f⟩ = {sqrt2:.12g}，而不是 2·Re⟨h,f⟩ = {two:.12g}")
    return ExpectationCheck(
        phi_expectation=phi,
        dgamma_expectation=dgamma,
        dgamma_reference=reference,
        dgamma_bound=float(dgamma_bound),
        phi_reference_two=two,
        phi_reference_sqrt2=float(sqrt2),
        prefactor=prefactor,
        tail=tail,
    )


def _check_omega(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 1 or np.any(omega <= 0):
        raise ValueError(f"OMEGA_NOT_POSITIVE: ω 必须是正的对角元, 收到 {omega}")
    return omega


def field_estimate_check(fock: TruncatedFock, omega, h: Sequence[complex], psi: np.ndarray) -> Tuple[float, float]:
    """
    两个场算符估计的松弛量（平方形式）

    ‖a(h)Ψ‖² ≤ ‖ω^{-1/2}h‖²⟨Ψ,dΓ(ω)Ψ⟩
    ‖a†(h)Ψ‖² ≤ ‖ω^{-1/2}h‖²⟨Ψ,dΓ(ω)Ψ⟩ + ‖h‖²‖Ψ‖²
    """
    omega = _check_omega(omega)
    h = np.asarray(h, dtype=np.complex128)
    weighted = float(np.sum(np.abs(h) ** 2 / omega))
    energy_form = float(np.vdot(psi, fock.second_quantization(omega) @ psi).real)
    norm2 = float(np.vdot(psi, psi).real)
    lhs1 = float(np.linalg.norm(fock.a(h) @ psi) ** 2)
    lhs2 = float(np.linalg.norm(fock.a_dag(h) @ psi) ** 2)
    rhs1 = weighted * energy_form
    rhs2 = rhs1 + float(np.sum(np.abs(h) ** 2)) * norm2
    return rhs1 - lhs1, rhs2 - lhs2


def adversarial_state(fock: TruncatedFock, omega, h: Sequence[complex]) -> np.ndarray:
    """单光子态 a†(ω^{-1}h)Ω/‖·‖，第一个估计在其上取等号"""
    omega = _check_omega(omega)
    h = np.asarray(h, dtype=np.complex128)
    psi = fock.a_dag(h / omega) @ fock.vacuum()
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise ValueError("DEGENERATE_INPUT: h 不能为 0")
    return psi / norm


# ---------------------------------------------------------------------------
# 乘积态能量的精确检验
# ---------------------------------------------------------------------------

@dataclass
class TinyReduction:
    exact: float
    formula: float
    discrepancy: float
    bound: float
    tail: float

    @property
    def passed(self) -> bool:
        return self.discrepancy <= self.bound

    def to_dict(self) -> Dict[str, Any]:
        return {"exact": self.exact, "formula": self.formula, "discrepancy": self.discrepancy,
                "bound": self.bound, "tail": self.tail, "passed": self.passed}


def _mode_vectors(model: ModelConfig, modes: Sequence[Tuple[Tuple[int, int, int], int]]):
    box = model.box
    eps = polarization_frame(box)
    out = []
    for index, tau in modes:
        index = tuple(int(i) for i in index)
        if box.nyquist[index] or box.kabs[index] == 0:
            raise ValueError(f"MODE_INVALID: 模 {index} 不能是零模或 Nyquist 模")
        if tau not in (0, 1):
            raise ValueError(f"MODE_INVALID: 偏振下标必须为 0 或 1, 收到 {tau}")
        k = box.k[(slice(None),) + index]
        e = eps[tau][(slice(None),) + index]
        c = np.sqrt(box.w_k) * float(model.cutoff.symbol[index]) / np.sqrt(box.kabs[index])
        phase = np.exp(1j * np.einsum("j,j...->...", k, box.x))
        out.append((index, k, e, c, phase))
    return out


def tiny_reduction_check(u: SpinorField,
                         model: ModelConfig,
                         modes: Sequence[Tuple[Tuple[int, int, int], int]],
                         alphas: Sequence[complex],
                         n_max: int = 8,
                         tol: float = 1e-8) -> TinyReduction:
    """
    只保留少数光子模时，⟨u⊗Ψ, H u⊗Ψ⟩ 的截断精确值与乘积态能量公式的比较

    modes 为 (k 网格下标, 偏振 0/1)；alphas 为各模的相干振幅 a_mΨ = α_mΨ。
    """
    box = model.box
    if u.box != box:
        raise ValueError(f"BOX_MISMATCH: u 属于 {u.box}, 模型盒子为 {box}")
    if not u.is_normalized():
        raise ValueError(f"U_NOT_NORMALIZED: ‖u‖ = {u.norm():.15g}")
    alphas = np.asarray(alphas, dtype=np.complex128)
    if len(modes) != len(alphas):
        raise ValueError("MODE_INVALID: modes 与 alphas 长度不一致")

    fock = TruncatedFock(len(modes), n_max)
    tail = _require_tail(fock, alphas, tol)
    psi_f = fock.coherent(alphas)
    mode_data = _mode_vectors(model, modes)
    if len({(tuple(index), tau) for index, tau in modes}) != len(modes):
        raise ValueError("MODE_INVALID: 保留的光子模不能重复")
    g = float(model.g)
    a = fock.annihilators
    ad = [m.conj().T for m in a]

    def expect(op) -> complex:
        return complex(np.vdot(psi_f, op @ psi_f))

    psi = u.values
    grad = box.grad(psi)
    momentum = -1j * grad
    density = np.sum(np.abs(psi) ** 2, axis=0)
    spin = spin_density(psi)

    # ⟨u, (−Δ + V) u⟩
    t0 = float(box.w_x * np.sum(np.abs(grad) ** 2) + box.w_x * np.sum(model.potential.values * density))

    cross = 0.0 + 0.0j
    spin_term = 0.0 + 0.0j
    field_term = 0.0 + 0.0j
    scale = 1.0
    for m, (_, k, e, c, phase) in enumerate(mode_data):
        am = expect(a[m])
        moved = phase[None] * psi
        back = np.conj(phase)[None] * psi
        x_m = sum(e[j] * (box.inner(momentum[j], moved) + box.inner(back, momentum[j])) for j in range(3))
        y_m = sum(e[j] * (box.inner(momentum[j], back) + box.inner(moved, momentum[j])) for j in range(3))
        cross += -g * c * (am * x_m + np.conj(am) * y_m)

        twist = 1j * np.cross(k, e)
        s_plus = box.w_x * np.sum(phase * np.einsum("j,j...->...", twist, spin))
        s_minus = box.w_x * np.sum(np.conj(phase) * np.einsum("j,j...->...", -twist, spin))
        spin_term += -g * c * (am * s_plus + np.conj(am) * s_minus)

        field_term += np.linalg.norm(k) * expect(ad[m] @ a[m])
        scale += abs(g) * c * (abs(x_m) + abs(y_m) + abs(s_plus) + abs(s_minus)) + np.linalg.norm(k)

    quad = 0.0 + 0.0j
    for m, (_, _, e_m, c_m, ph_m) in enumerate(mode_data):
        for n, (_, _, e_n, c_n, ph_n) in enumerate(mode_data):
            overlap = float(np.dot(e_m, e_n))
            if overlap == 0.0:
                continue
            pair = (
                expect(a[m] @ a[n]) * box.integrate(density * ph_m * ph_n)
                + expect(a[m] @ ad[n]) * box.integrate(density * ph_m * np.conj(ph_n))
                + expect(ad[m] @ a[n]) * box.integrate(density * np.conj(ph_m) * ph_n)
                + expect(ad[m] @ ad[n]) * box.integrate(density * np.conj(ph_m * ph_n))
            )
            quad += g ** 2 * c_m * c_n * overlap * pair
            scale += g ** 2 * c_m * c_n * 4.0

    exact = float((t0 + cross + quad + spin_term + field_term).real)

    f = np.zeros((3,) + box.shape, dtype=np.complex128)
    for alpha, (index, _, e, _, _) in zip(alphas, mode_data):
        f[(slice(None),) + index] += alpha * e / np.sqrt(box.w_k)
    parameter = PhotonParameter(box, f, project=False)

    constant = normal_ordering_constant(model.cutoff, g, modes=modes)
    formula = constant + parameter.kinetic("minus") + energy(u, potential_from_parameter(parameter), model).total

    lam = float(np.sum(np.abs(alphas) ** 2))
    bound = scale * (1.0 + lam) * poisson_tail(lam, n_max - 1) / (1.0 - tail) + tol
    discrepancy = abs(exact - formula)
    logger.info(f"小模型检验: 精确值 {exact:.12g}, 公式 {formula:.12g}, 差 {discrepancy:.3e}")
    return TinyReduction(exact=exact, formula=float(formula), discrepancy=discrepancy, bound=float(bound), tail=tail)
