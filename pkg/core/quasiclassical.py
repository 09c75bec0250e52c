"""
MSQED Lab - 相干态字典
光子参数 f 与矢势 A_f 的互相转换、f± 分解、正规序常数与乘积态能量
"""
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .spectral import SpectralBox
from .model import CutoffKind, CutoffProfile, ModelConfig, SpinorField, VectorPotential
from .energy import EnergyBreakdown, energy


TRANSVERSE_TOL = 1e-12


def polarization_frame(box: SpectralBox) -> Tuple[np.ndarray, np.ndarray]:
    """
    标准偏振标架 ε₁ ∝ k∧ẑ，ε₂ = k̂∧ε₁

    k 在 z 轴上时 ε₁ = x̂；k = 0 处取 (x̂, ŷ)。
    """
    k = box.k
    eps1 = np.stack([k[1], -k[0], np.zeros_like(k[0])])
    norm1 = np.sqrt(np.sum(eps1 ** 2, axis=0))
    on_axis = norm1 == 0
    eps1 = np.where(on_axis[None], np.array([1.0, 0.0, 0.0])[:, None, None, None], eps1 / np.where(on_axis, 1.0, norm1))
    khat = k / np.where(box.kabs == 0, 1.0, box.kabs)[None]
    eps2 = np.cross(khat, eps1, axis=0)
    eps2[:, 0, 0, 0] = (0.0, 1.0, 0.0)
    return eps1, eps2


class PhotonParameter:
    """
    横向光子参数 f(k)，k·f(k) = 0，f(0) = 0

    project=True 时构造时投影到 k⊥；否则非横向输入直接报错。
    """

    def __init__(self, box: SpectralBox, f: np.ndarray, project: bool = True):
        f = np.asarray(f, dtype=np.complex128)
        if f.shape != (3,) + box.shape:
            raise ValueError(f"FIELD_SHAPE: 光子参数需要形状 {(3,) + box.shape}, 收到 {f.shape}")
        if project:
            kdot = np.sum(box.k * f, axis=0)
            f = f - box.k * kdot / box._k2_safe
        else:
            kdot = np.abs(np.sum(box.k * f, axis=0))
            scale = box.kabs * np.sqrt(np.sum(np.abs(f) ** 2, axis=0))
            if np.any(kdot > TRANSVERSE_TOL * np.maximum(scale, 1e-300)):
                worst = float(np.max(kdot - TRANSVERSE_TOL * scale))
                raise ValueError(f"NOT_TRANSVERSE: |k·f(k)| 超出容差 {worst:.3e}")
        f = f * box._keep
        f[:, 0, 0, 0] = 0.0
        f.setflags(write=False)
        self.box = box
        self.f = f
        self._plus: Optional[np.ndarray] = None
        self._minus: Optional[np.ndarray] = None

    def _split(self) -> None:
        mirrored = np.conj(self.box.reflect(self.f))
        self._plus = 0.5 * (self.f + mirrored)
        self._minus = 0.5 * (self.f - mirrored)

    def plus_part(self) -> np.ndarray:
        """f₊(k) = (f(k) + conj f(−k))/2"""
        if self._plus is None:
            self._split()
        return self._plus

    def minus_part(self) -> np.ndarray:
        """f₋(k) = (f(k) − conj f(−k))/2"""
        if self._minus is None:
            self._split()
        return self._minus

    def pairing(self, a: np.ndarray, b: np.ndarray) -> complex:
        """⟨a, |k| b⟩ = w_k Σ conj(a)·|k|b"""
        return complex(self.box.w_k * np.sum(np.conj(a) * self.box.kabs * b))

    def kinetic(self, part: str = "full") -> float:
        vec = {"full": self.f, "plus": self.plus_part(), "minus": self.minus_part()}[part]
        return self.pairing(vec, vec).real

    def l2_norm(self) -> float:
        """‖f‖_{L²}，有限等价于 A_f ∈ Ḣ^{1/2}"""
        return float(np.sqrt(self.box.w_k * np.sum(np.abs(self.f) ** 2)))

    def components(self) -> Tuple[np.ndarray, np.ndarray]:
        """偏振分量 (f·ε₁, f·ε₂)"""
        eps1, eps2 = polarization_frame(self.box)
        return np.sum(eps1 * self.f, axis=0), np.sum(eps2 * self.f, axis=0)

    @classmethod
    def from_components(cls, box: SpectralBox, c1: np.ndarray, c2: np.ndarray) -> 'PhotonParameter':
        eps1, eps2 = polarization_frame(box)
        return cls(box, c1[None] * eps1 + c2[None] * eps2, project=False)

    @classmethod
    def zeros(cls, box: SpectralBox) -> 'PhotonParameter':
        return cls(box, np.zeros((3,) + box.shape, dtype=np.complex128))


def potential_from_parameter(f: PhotonParameter) -> VectorPotential:
    """A_f = 2F(conj(f₊)|k|^{-1/2})，F(g)(x) = ∫e^{-ik·x}g(k)dk"""
    box = f.box
    inv_sqrt = np.where(box.kabs > 0, 1.0 / np.sqrt(np.where(box.kabs > 0, box.kabs, 1.0)), 0.0)
    g = np.conj(f.plus_part()) * inv_sqrt
    values = 2.0 * box.w_k * np.fft.fftn(g, axes=(-3, -2, -1))
    imag = float(np.max(np.abs(values.imag)))
    if imag > 1e-10 * max(float(np.max(np.abs(values.real))), 1e-300):
        logger.debug(f"A_f 虚部 {imag:.3e}")
    return VectorPotential(box, values.real)


def parameter_from_potential(A: VectorPotential) -> PhotonParameter:
    """conj(f₊) = ½|k|^{1/2}F^{-1}(A)，返回 f₋ = 0 的参数"""
    box = A.box
    inverse = np.fft.ifftn(A.values, axes=(-3, -2, -1)) * box.volume / (2.0 * np.pi) ** 3
    f_plus = np.conj(0.5 * np.sqrt(box.kabs) * inverse)
    return PhotonParameter(box, f_plus)


def normal_ordering_constant(cutoff: CutoffProfile,
                             g: float,
                             uv_cutoff: Optional[float] = None,
                             modes: Optional[Sequence[Tuple[Tuple[int, int, int], Any]]] = None) -> float:
    """
    2g²‖χ/√|k|‖²_{L²}（k=0 项略去）

    给定 modes 时只计入保留的 (k, ε) 光子模：g² Σ_modes w_k χ(k)²/|k|。
    """
    box = cutoff.box
    chi = cutoff.symbol
    if modes is not None:
        total = 0.0
        for index, _ in modes:
            kabs = float(box.kabs[index])
            if kabs == 0:
                raise ValueError("MODE_INVALID: 不能保留 k=0 光子模")
            total += box.w_k * float(chi[index]) ** 2 / kabs
        return float(g ** 2 * total)

    if uv_cutoff is not None:
        chi = chi * (box.kabs <= uv_cutoff)
    elif cutoff.kind == CutoffKind.ONE:
        logger.warning("χ = 1 且没有紫外截断时正规序常数发散，返回网格频带内的值")
    inv = np.where(box.kabs > 0, 1.0 / np.where(box.kabs > 0, box.kabs, 1.0), 0.0)
    return float(2.0 * g ** 2 * box.w_k * np.sum(chi ** 2 * inv))


@dataclass
class ProductStateEnergy:
    """乘积态 u⊗Ψ_f 的能量分解"""
    constant: float
    minus_term: float
    breakdown: EnergyBreakdown

    @property
    def total(self) -> float:
        return self.constant + self.minus_term + self.breakdown.total

    def to_dict(self) -> Dict[str, Any]:
        return {"constant": self.constant, "minus_term": self.minus_term,
                "E": self.breakdown.total, "total": self.total}


def product_state_energy(u: SpinorField, f: PhotonParameter, model: ModelConfig) -> ProductStateEnergy:
    """正规序常数 + ⟨f₋,|k|f₋⟩ + ℰ(u, A_f)"""
    if f.box != model.box:
        raise ValueError(f"BOX_MISMATCH: f 属于 {f.box}, 模型盒子为 {model.box}")
    constant = normal_ordering_constant(model.cutoff, model.g, model.uv_cutoff)
    A = potential_from_parameter(f)
    return ProductStateEnergy(
        constant=constant,
        minus_term=f.kinetic("minus"),
        breakdown=energy(u, A, model),
    )
