"""
MSQED Lab - 能量泛函
Maxwell-Schrödinger 能量 ℰ_V(u,A) 的五项分解、Pauli 算符、紫外截断变体与 IMS / virial 诊断
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.sparse.linalg import LinearOperator

from .spectral import SpectralBox
from .model import (
    SIGMA,
    ModelConfig,
    SpinorField,
    VectorPotential,
    localization_pair,
    spin_density,
)


FIELD_WEIGHT = 1.0 / (32.0 * np.pi ** 3)


@dataclass
class EnergyBreakdown:
    """能量的五项分解"""
    e1: float
    e2: float
    e3: complex
    e4: float
    e5: float
    g: float
    total: float
    pauli_total: float

    @property
    def field_energy(self) -> float:
        return FIELD_WEIGHT * self.e2

    def recombine(self) -> float:
        """total = e1 + e2/(32π³) − 2g Re e3 + g² e4 − g e5"""
        return (self.e1 + FIELD_WEIGHT * self.e2 - 2.0 * self.g * self.e3.real
                + self.g ** 2 * self.e4 - self.g * self.e5)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "e1": self.e1,
            "e2": self.e2,
            "e3": self.e3,
            "e4": self.e4,
            "e5": self.e5,
            "g": self.g,
            "field_energy": self.field_energy,
            "total": self.total,
            "pauli_total": self.pauli_total,
        }


def smeared_potential(model: ModelConfig, A: VectorPotential) -> np.ndarray:
    """Ã = χ̂*A，以乘子 χ(k) 作用在 Â 上"""
    box = model.box
    return box.ifft(model.cutoff.symbol * box.fft(A.values)).real


def _check_inputs(u: SpinorField, A: VectorPotential, box: SpectralBox) -> None:
    if u.box != box or A.box != box:
        raise ValueError(f"BOX_MISMATCH: u/A 与模型盒子 {box} 不一致")
    if not isinstance(A, VectorPotential):
        raise ValueError("A_NOT_ADMISSIBLE: A 必须是 VectorPotential")


class PauliOperator:
    """
    Pauli 算符 H_{V,A} = (−i∇ − gÃ)² − gσ·B̃ + V

    场能 (32π³)^{-1}‖A‖²_{Ḣ¹} 单独记录在 field_energy 中。
    """

    def __init__(self, model: ModelConfig, A: Optional[VectorPotential] = None):
        self._model = model
        self._box = model.box
        self._g = float(model.g)
        if A is None:
            A = VectorPotential.zeros(model.box)
        if A.box != model.box:
            raise ValueError(f"BOX_MISMATCH: A 属于 {A.box}, 模型盒子为 {model.box}")
        self._A = A
        self._v = model.potential.values
        self._a_tilde = smeared_potential(model, A)
        self._b_tilde = self._box.curl(self._a_tilde)
        # σ·B̃ 的逐点 2x2 矩阵
        self._sigma_b = np.einsum("lab,l...->ab...", SIGMA, self._b_tilde)
        self._field_energy = FIELD_WEIGHT * self._box.hdot1_norm(A.values) ** 2

    @property
    def box(self) -> SpectralBox:
        return self._box

    @property
    def g(self) -> float:
        return self._g

    @property
    def potential(self) -> VectorPotential:
        return self._A

    @property
    def a_tilde(self) -> np.ndarray:
        return self._a_tilde

    @property
    def b_tilde(self) -> np.ndarray:
        return self._b_tilde

    @property
    def field_energy(self) -> float:
        return self._field_energy

    def covariant_gradient(self, u: np.ndarray) -> np.ndarray:
        """D_j u = −i∂_j u − gÃ_j u，形状 (3,2,N,N,N)"""
        grad = self._box.grad(u)
        return -1j * grad - self._g * self._a_tilde[:, None] * u[None]

    def apply(self, u: np.ndarray) -> np.ndarray:
        du = self.covariant_gradient(u)
        coeffs = self._box.fft(du)
        # Σ_j D_j(D_j u)
        div = self._box.ifft(np.sum(self._box.ik[:, None] * coeffs, axis=0))
        out = -1j * div - self._g * np.sum(self._a_tilde[:, None] * du, axis=0)
        out = out - self._g * np.einsum("ab...,b...->a...", self._sigma_b, u)
        return out + self._v[None] * u

    def __call__(self, u: SpinorField) -> SpinorField:
        return apply_pauli(self, u)

    def expectation(self, u: np.ndarray) -> float:
        return float(self._box.inner(u, self.apply(u)).real)

    def linear_operator(self) -> LinearOperator:
        """展平复向量上的 LinearOperator（内积按欧氏范数）"""
        shape = (2,) + self._box.shape
        size = int(np.prod(shape))

        def matvec(x):
            x = np.asarray(x)
            if x.ndim == 2:
                return np.column_stack([self.apply(col.reshape(shape)).ravel() for col in x.T])
            return self.apply(x.reshape(shape)).ravel()

        return LinearOperator((size, size), matvec=matvec, matmat=matvec, dtype=np.complex128)


def apply_pauli(H: PauliOperator, u: SpinorField) -> SpinorField:
    if u.box != H.box:
        raise ValueError(f"BOX_MISMATCH: u 属于 {u.box}, 算符属于 {H.box}")
    return SpinorField(H.box, H.apply(u.values))


def energy(u: SpinorField, A: VectorPotential, model: ModelConfig) -> EnergyBreakdown:
    """
    ℰ_V(u,A) 的五项分解

    Args:
        u: 归一化旋量
        A: 无散矢势
        model: 模型配置

    Returns:
        EnergyBreakdown，包括独立的 Pauli 形式 pauli_total
    """
    box = model.box
    _check_inputs(u, A, box)
    if not u.is_normalized():
        raise ValueError(f"U_NOT_NORMALIZED: ‖u‖ = {u.norm():.15g}")

    g = float(model.g)
    psi = u.values
    grad = box.grad(psi)
    v = model.potential.values

    kinetic = float(box.w_x * np.sum(np.abs(grad) ** 2))
    potential_term = float(box.w_x * np.sum(v * np.sum(np.abs(psi) ** 2, axis=0)))
    e1 = kinetic + potential_term

    a_coeffs = box.fft(A.values)
    e2 = box.spectral_sum(box.k2 * box._keep, a_coeffs)

    a_tilde = box.ifft(model.cutoff.symbol * a_coeffs).real
    e3 = complex(box.w_x * np.sum(np.conj(-1j * grad) * (a_tilde[:, None] * psi[None])))
    density = np.sum(np.abs(psi) ** 2, axis=0)
    e4 = float(box.w_x * np.sum(np.sum(a_tilde ** 2, axis=0) * density))
    # ∫Ã·(∇∧S) = ⟨u, σ·B̃ u⟩
    spin = spin_density(psi)
    e5 = float(box.w_x * np.sum(a_tilde * box.curl(spin)))

    breakdown = EnergyBreakdown(e1=e1, e2=e2, e3=e3, e4=e4, e5=e5, g=g, total=0.0, pauli_total=0.0)
    breakdown.total = breakdown.recombine()

    # σ·(−i∇ − gÃ)u
    du = -1j * grad - g * a_tilde[:, None] * psi[None]
    sigma_du = np.einsum("jab,jb...->a...", SIGMA, du)
    breakdown.pauli_total = float(box.w_x * np.sum(np.abs(sigma_du) ** 2)) + potential_term + FIELD_WEIGHT * e2
    return breakdown


def uv_split(A: VectorPotential, uv_cutoff: float) -> Tuple[VectorPotential, VectorPotential]:
    """A = A_{≤Λ} + A_{>Λ}"""
    box = A.box
    coeffs = box.fft(A.values)
    low = box.kabs <= uv_cutoff
    a_low = VectorPotential(box, box.ifft(coeffs * low).real)
    a_high = VectorPotential(box, box.ifft(coeffs * ~low).real)
    return a_low, a_high


def energy_cutoff(u: SpinorField, A: VectorPotential, model: ModelConfig) -> EnergyBreakdown:
    """ℰ_Λ(u,A)：截断函数换成 χ_Λ = χ·1_{|k|≤Λ}"""
    if model.uv_cutoff is None:
        raise ValueError("LAMBDA_MISSING: energy_cutoff 需要 coupling.uv_cutoff")
    restricted = ModelConfig(
        box=model.box,
        potential=model.potential,
        cutoff=model.cutoff.restricted(model.uv_cutoff),
        coupling=model.coupling,
    )
    return energy(u, A, restricted)


@dataclass
class ImsReport:
    """磁 IMS 局域化公式的两侧与残差"""
    lhs: float
    rhs: float
    residual: float
    spectral_residual: float
    radius: float

    @property
    def relative_residual(self) -> float:
        return self.residual / max(abs(self.lhs), 1e-300)


def ims_check(u: SpinorField, A: VectorPotential, R: float, swap: bool = False) -> ImsReport:
    """
    ‖(−i∇−A)u‖² = ‖(−i∇−A)ηu‖² + ‖(−i∇−A)η̃u‖² − ⟨u, (|∇η|² + |∇η̃|²)u⟩

    residual 用 Leibniz 形式 D(ηu) = ηDu − i(∇η)u 计算右侧；
    spectral_residual 直接对乘积 ηu 求谱导数（含混叠误差）。
    """
    box = u.box
    if A.box != box:
        raise ValueError(f"BOX_MISMATCH: u 属于 {box}, A 属于 {A.box}")
    eta, eta_tilde, grad_eta, grad_eta_tilde = localization_pair(box, R)
    if swap:
        eta, eta_tilde = eta_tilde, eta
        grad_eta, grad_eta_tilde = grad_eta_tilde, grad_eta

    psi = u.values
    a = A.values
    du = -1j * box.grad(psi) - a[:, None] * psi[None]
    lhs = float(box.w_x * np.sum(np.abs(du) ** 2))

    localization = float(box.w_x * np.sum(
        (np.sum(grad_eta ** 2, axis=0) + np.sum(grad_eta_tilde ** 2, axis=0)) * np.sum(np.abs(psi) ** 2, axis=0)
    ))

    rhs = -localization
    spectral_rhs = -localization
    for cut, grad_cut in ((eta, grad_eta), (eta_tilde, grad_eta_tilde)):
        leibniz = cut[None, None] * du - 1j * grad_cut[:, None] * psi[None]
        rhs += float(box.w_x * np.sum(np.abs(leibniz) ** 2))
        localized = cut[None] * psi
        direct = -1j * box.grad(localized) - a[:, None] * localized[None]
        spectral_rhs += float(box.w_x * np.sum(np.abs(direct) ** 2))

    return ImsReport(
        lhs=lhs,
        rhs=rhs,
        residual=abs(lhs - rhs),
        spectral_residual=abs(lhs - spectral_rhs),
        radius=R,
    )


def virial(u: SpinorField, A: VectorPotential, model: ModelConfig) -> np.ndarray:
    """⟨u, (−i∇ − gÃ)u⟩ 的三个分量"""
    box = model.box
    _check_inputs(u, A, box)
    psi = u.values
    a_tilde = smeared_potential(model, A)
    du = -1j * box.grad(psi) - model.g * a_tilde[:, None] * psi[None]
    values = np.array([box.inner(psi, du[j]) for j in range(3)])
    if np.max(np.abs(values.imag)) > 1e-8 * max(np.max(np.abs(values.real)), 1.0):
        logger.debug(f"virial 虚部偏大: {values.imag}")
    return values.real
