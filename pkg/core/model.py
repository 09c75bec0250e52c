"""
MSQED Lab - 物理模型
势函数 V（含 V₁+V₂ 分解）、截断函数 χ（含 χ₁+χ₂ 分裂）、耦合常数、旋量/矢势容器与 Kramers 对称
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .spectral import GridField, SpectralBox, VectorField, FourierMultiplier, Parity
from . import lorentz_lab


# Pauli 矩阵 σ₁, σ₂, σ₃
SIGMA = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=np.complex128)


class PotentialKind(Enum):
    """势函数类型"""
    HARMONIC = "harmonic"
    SOFT_COULOMB = "softened-coulomb"
    SPECTRAL_COULOMB = "spectral-coulomb"
    GAUSSIAN_WELL = "gaussian-well"
    CUSTOM = "custom"


class DecompositionKind(Enum):
    """V = V₁ + V₂ 的分解方式"""
    CUTOFF = "cutoff"
    LIFT = "lift"
    NONE = "none"


class CutoffKind(Enum):
    """截断函数 χ 的类型"""
    ONE = "one"
    SHARP = "sharp"
    GAUSSIAN = "gaussian"
    CUSTOM = "custom"


def localization_pair(box: SpectralBox, R: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    构造 η_R, η̃_R 及其解析梯度，η² + η̃² = 1

    η = cos(π s/2), η̃ = sin(π s/2)，s 为 clip(|x|/R − 1, 0, 1) 的五次 smoothstep。
    """
    if not R > 0:
        raise ValueError(f"RADIUS_INVALID: R 必须为正数, 收到 {R}")
    if 2.0 * R > box.L / 2.0:
        raise ValueError(f"RADIUS_TOO_LARGE: 2R={2 * R} 超过 L/2={box.L / 2}，η̃ 的支撑会发生周期缠绕")

    t = np.clip(box.r / R - 1.0, 0.0, 1.0)
    s = t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)
    ds = 30.0 * t ** 2 * (1.0 - t) ** 2
    theta = 0.5 * np.pi * s
    eta = np.cos(theta)
    eta_tilde = np.sin(theta)

    r_safe = np.where(box.r > 0, box.r, 1.0)
    dtheta = 0.5 * np.pi * ds / R
    radial = box.x / r_safe
    grad_eta = -np.sin(theta) * dtheta * radial
    grad_eta_tilde = np.cos(theta) * dtheta * radial
    return eta, eta_tilde, grad_eta, grad_eta_tilde


@dataclass(frozen=True, eq=False)
class Potential:
    """网格上的外势及其分解"""
    kind: PotentialKind
    box: SpectralBox
    values: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    decomposition: DecompositionKind = DecompositionKind.CUTOFF
    radius: Optional[float] = None
    params: Dict[str, Any] = field(default_factory=dict)
    issues: Tuple[str, ...] = ()

    @property
    def positive_part(self) -> np.ndarray:
        return np.maximum(self.values, 0.0)

    @property
    def negative_part(self) -> np.ndarray:
        """V₋ ≥ 0，V = V₊ − V₋"""
        return np.maximum(-self.values, 0.0)

    @property
    def is_radial(self) -> bool:
        return self.kind != PotentialKind.CUSTOM

    def evenness_residual(self) -> float:
        return float(np.max(np.abs(self.values - self.box.reflect(self.values))))

    def decomposition_residual(self) -> float:
        return float(np.max(np.abs(self.v1 + self.v2 - self.values)))

    def restricted_to_v1(self) -> 'Potential':
        """以 V₁ 作为新的外势（分解为平凡分解）"""
        return Potential(
            kind=PotentialKind.CUSTOM,
            box=self.box,
            values=self.v1.copy(),
            v1=self.v1.copy(),
            v2=np.zeros_like(self.v1),
            decomposition=DecompositionKind.NONE,
            params={"derived_from": self.kind.value},
        )


def _sample_potential(kind: PotentialKind, params: Dict[str, Any], box: SpectralBox) -> np.ndarray:
    if kind == PotentialKind.HARMONIC:
        omega0 = float(params.get("omega0", 1.0))
        if omega0 <= 0:
            raise ValueError(f"POTENTIAL_PARAMS: omega0 必须为正数, 收到 {omega0}")
        return omega0 ** 2 * box.r2

    if kind == PotentialKind.SOFT_COULOMB:
        c = float(params.get("c", 1.0))
        a_soft = params.get("a_soft")
        a_soft = box.dx if a_soft is None else float(a_soft)
        if c <= 0 or a_soft < 0:
            raise ValueError(f"POTENTIAL_PARAMS: 需要 c>0, a_soft>=0, 收到 c={c}, a_soft={a_soft}")
        if a_soft > 0:
            return -c / np.sqrt(box.r2 + a_soft ** 2)
        # 原点取等体积球平均
        r_cell = box.dx * (3.0 / (4.0 * np.pi)) ** (1.0 / 3.0)
        values = np.empty(box.shape)
        nonzero = box.r > 0
        values[nonzero] = -c / box.r[nonzero]
        values[~nonzero] = -1.5 * c / r_cell
        return values

    if kind == PotentialKind.SPECTRAL_COULOMB:
        c = float(params.get("c", 1.0))
        if c <= 0:
            raise ValueError(f"POTENTIAL_PARAMS: c 必须为正数, 收到 {c}")
        coeffs = -4.0 * np.pi * c * box.inv_k2
        return box.ifft(coeffs).real

    if kind == PotentialKind.GAUSSIAN_WELL:
        depth = float(params.get("depth", 1.0))
        width = float(params.get("width", 1.0))
        if depth <= 0 or width <= 0:
            raise ValueError(f"POTENTIAL_PARAMS: 需要 depth>0, width>0, 收到 depth={depth}, width={width}")
        return -depth * np.exp(-box.r2 / width ** 2)

    values = np.asarray(params.get("values"), dtype=float)
    if values.shape != box.shape:
        raise ValueError(f"POTENTIAL_PARAMS: 自定义势需要形状 {box.shape}, 收到 {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("POTENTIAL_PARAMS: 自定义势含非有限值")
    return values


def build_potential(kind: str,
                    params: Optional[Dict[str, Any]],
                    box: SpectralBox,
                    strict: bool = True) -> Potential:
    """
    采样势函数并构造 V₁ + V₂ 分解

    Args:
        kind: 势函数类型（PotentialKind 的取值）
        params: 参数；decomposition 子项为 {kind, radius, lift}
        box: 计算盒子
        strict: 自定义势不对称时是否直接拒绝

    Returns:
        Potential
    """
    params = dict(params or {})
    try:
        pkind = PotentialKind(kind)
    except ValueError:
        raise ValueError(f"POTENTIAL_KIND: 未知的势函数类型 {kind!r}")

    values = _sample_potential(pkind, params, box)
    issues: List[str] = []

    asym = float(np.max(np.abs(values - box.reflect(values))))
    scale = max(float(np.max(np.abs(values))), 1e-300)
    if asym > 1e-12 * scale:
        if strict:
            raise ValueError(f"POTENTIAL_ASYMMETRIC: V(x) ≠ V(-x)，残差 {asym:.3e}")
        logger.warning(f"自定义势不满足 V(x)=V(-x)，残差 {asym:.3e}")
        issues.append("V_NOT_EVEN")

    decomposition = dict(params.pop("decomposition", None) or {})
    dkind = DecompositionKind(decomposition.get("kind", "cutoff"))
    radius = decomposition.get("radius")
    radius = box.L / 4.0 if radius is None else float(radius)

    positive = np.maximum(values, 0.0)
    if dkind == DecompositionKind.NONE:
        v1 = values.copy()
        v2 = np.zeros_like(values)
        radius_used: Optional[float] = None
    else:
        eta, eta_tilde, _, _ = localization_pair(box, radius)
        radius_used = radius
        if dkind == DecompositionKind.CUTOFF:
            v1 = positive * eta_tilde ** 2
        else:
            lift = decomposition.get("lift")
            if lift is None:
                inside = box.r <= 2.0 * radius
                lift = float(np.max(positive[inside]))
            lift = float(lift)
            if lift < 0:
                raise ValueError(f"POTENTIAL_PARAMS: lift 必须非负, 收到 {lift}")
            v1 = positive + lift * eta ** 2
            params["lift"] = lift
        v2 = values - v1

    logger.debug(f"势函数已构造: kind={pkind.value}, decomposition={dkind.value}, R={radius_used}")
    return Potential(
        kind=pkind,
        box=box,
        values=values,
        v1=v1,
        v2=v2,
        decomposition=dkind,
        radius=radius_used,
        params=params,
        issues=tuple(issues),
    )


@dataclass(frozen=True, eq=False)
class CutoffProfile:
    """偶实截断函数 χ(k) 及分裂 χ = χ₁ + χ₂（χ₁/|k| ∈ L², χ₂/|k| ∈ L^{3,∞}）"""
    kind: CutoffKind
    box: SpectralBox
    values: np.ndarray
    chi1: np.ndarray
    chi2: np.ndarray
    params: Dict[str, Any] = field(default_factory=dict)
    issues: Tuple[str, ...] = ()

    def multiplier(self) -> FourierMultiplier:
        return FourierMultiplier(self.box, self.values, Parity.EVEN, f"chi[{self.kind.value}]")

    @property
    def symbol(self) -> np.ndarray:
        """Nyquist 置零后的 χ"""
        return self.values * self.box._keep

    def evenness_residual(self) -> float:
        return float(np.max(np.abs(self.values - self.box.reflect(self.values))))

    def restricted(self, uv_cutoff: float) -> 'CutoffProfile':
        """χ_Λ = χ·1_{|k|≤Λ}"""
        mask = (self.box.kabs <= uv_cutoff).astype(float)
        return replace(
            self,
            values=self.values * mask,
            chi1=self.chi1 * mask,
            chi2=self.chi2 * mask,
            params={**self.params, "uv_cutoff": uv_cutoff},
        )


def build_cutoff(kind: str,
                 params: Optional[Dict[str, Any]],
                 box: SpectralBox,
                 strict: bool = True) -> CutoffProfile:
    """构造截断函数与默认分裂"""
    params = dict(params or {})
    try:
        ckind = CutoffKind(kind)
    except ValueError:
        raise ValueError(f"CUTOFF_KIND: 未知的截断类型 {kind!r}")

    issues: List[str] = []
    if ckind == CutoffKind.ONE:
        values = np.ones(box.shape)
        chi1 = np.zeros(box.shape)
        chi2 = values.copy()
    elif ckind in (CutoffKind.SHARP, CutoffKind.GAUSSIAN):
        Lambda = params.get("Lambda")
        if Lambda is None or float(Lambda) <= 0:
            raise ValueError(f"CUTOFF_PARAMS: {ckind.value} 截断需要 Lambda>0, 收到 {Lambda}")
        Lambda = float(Lambda)
        if ckind == CutoffKind.SHARP:
            values = (box.kabs <= Lambda).astype(float)
        else:
            values = np.exp(-box.k2 / Lambda ** 2)
        chi1 = values.copy()
        chi2 = np.zeros(box.shape)
    else:
        values = np.asarray(params.get("values"), dtype=float)
        if values.shape != box.shape:
            raise ValueError(f"CUTOFF_PARAMS: 自定义截断需要形状 {box.shape}, 收到 {values.shape}")
        asym = float(np.max(np.abs(values - box.reflect(values))))
        if asym > 1e-12 * max(float(np.max(np.abs(values))), 1e-300):
            if strict:
                raise ValueError(f"CUTOFF_ASYMMETRIC: χ(k) ≠ χ(-k)，残差 {asym:.3e}")
            logger.warning(f"自定义截断不满足 χ(k)=χ(-k)，残差 {asym:.3e}")
            issues.append("CHI_NOT_EVEN")
        split_radius = float(params.get("split_radius", 1.0))
        chi1 = values * (box.kabs <= split_radius)
        chi2 = values - chi1

    return CutoffProfile(kind=ckind, box=box, values=values, chi1=chi1, chi2=chi2,
                         params=params, issues=tuple(issues))


@dataclass(frozen=True)
class CouplingConfig:
    """耦合常数 g 与可选紫外参数 Λ"""
    g: float = 0.0
    uv_cutoff: Optional[float] = None

    def __post_init__(self):
        if not np.isfinite(self.g):
            raise ValueError(f"COUPLING_INVALID: g 必须有限, 收到 {self.g}")
        if self.uv_cutoff is not None and not self.uv_cutoff > 0:
            raise ValueError(f"COUPLING_INVALID: Λ 必须为正数, 收到 {self.uv_cutoff}")

    def g_chi(self, cutoff: CutoffProfile) -> float:
        """g_χ = |g|(‖χ₁/|k|‖_{L²} + ‖χ₂/|k|‖_{L^{3,∞}})"""
        chi1_l2, chi2_weak, _ = lorentz_lab.chi_split_norms(cutoff)
        return abs(self.g) * (chi1_l2 + chi2_weak)


@dataclass(frozen=True, eq=False)
class ModelConfig:
    """完整模型配置"""
    box: SpectralBox
    potential: Potential
    cutoff: CutoffProfile
    coupling: CouplingConfig = field(default_factory=CouplingConfig)

    def __post_init__(self):
        if self.potential.box != self.box or self.cutoff.box != self.box:
            raise ValueError("BOX_MISMATCH: 势函数/截断函数与模型盒子不一致")

    @property
    def g(self) -> float:
        return self.coupling.g

    @property
    def uv_cutoff(self) -> Optional[float]:
        return self.coupling.uv_cutoff

    def with_coupling(self, g: float) -> 'ModelConfig':
        return replace(self, coupling=replace(self.coupling, g=float(g)))

    def with_uv_cutoff(self, uv_cutoff: Optional[float]) -> 'ModelConfig':
        return replace(self, coupling=replace(self.coupling, uv_cutoff=uv_cutoff))

    def with_potential(self, potential: Potential) -> 'ModelConfig':
        return replace(self, potential=potential)

    def uv_mask(self) -> Optional[np.ndarray]:
        if self.coupling.uv_cutoff is None:
            return None
        return (self.box.kabs <= self.coupling.uv_cutoff).astype(float)


def build_model(run_config) -> ModelConfig:
    """由运行配置（RunConfig）构造 ModelConfig"""
    box_cfg = run_config.box
    box = SpectralBox(float(box_cfg.get("L", 12.0)), int(box_cfg.get("N", 48)))

    potential_cfg = dict(run_config.potential)
    kind = potential_cfg.pop("kind", "harmonic")
    strict = bool(potential_cfg.pop("strict", True))
    potential = build_potential(kind, potential_cfg, box, strict=strict)

    cutoff_cfg = dict(run_config.cutoff)
    ckind = cutoff_cfg.pop("kind", "sharp")
    cutoff = build_cutoff(ckind, cutoff_cfg, box, strict=strict)

    coupling_cfg = run_config.coupling
    uv = coupling_cfg.get("Lambda")
    coupling = CouplingConfig(g=float(coupling_cfg.get("g", 0.0)),
                              uv_cutoff=None if uv is None else float(uv))
    return ModelConfig(box=box, potential=potential, cutoff=cutoff, coupling=coupling)


# ---------------------------------------------------------------------------
# 状态容器
# ---------------------------------------------------------------------------

class SpinorField(GridField):
    """两分量复旋量场 (2,N,N,N)"""
    COMPONENTS = 2
    REAL = False

    @classmethod
    def from_scalar(cls, box: SpectralBox, scalar: np.ndarray, spin: Sequence[complex] = (1.0, 0.0)) -> 'SpinorField':
        spin = np.asarray(spin, dtype=np.complex128)
        return cls(box, spin[:, None, None, None] * np.asarray(scalar)[None])

    def normalize(self) -> 'SpinorField':
        n = self.norm()
        if n == 0.0 or not np.isfinite(n):
            raise ValueError("ZERO_SPINOR: 无法归一化零旋量")
        return SpinorField(self.box, self.values / n)

    def is_normalized(self, tol: float = 1e-10) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def density(self) -> np.ndarray:
        return np.sum(np.abs(self.values) ** 2, axis=0)

    def spin_density(self) -> np.ndarray:
        """S_l = ⟨u, σ_l u⟩_{C²}，逐点实值 (3,N,N,N)"""
        return spin_density(self.values)


def spin_density(u: np.ndarray) -> np.ndarray:
    z = np.conj(u[0]) * u[1]
    return np.stack([
        2.0 * z.real,
        2.0 * z.imag,
        np.abs(u[0]) ** 2 - np.abs(u[1]) ** 2,
    ])


class VectorPotential(VectorField):
    """零均值、离散无散的实矢势"""

    def __post_init__(self):
        super().__post_init__()
        box = self.box
        coeffs = box.fft(self.values)
        size = float(np.sqrt(np.sum(np.abs(coeffs) ** 2) + np.sum(box.k2 * np.sum(np.abs(coeffs) ** 2, axis=0))))
        mean = float(np.max(np.abs(coeffs[:, 0, 0, 0])))
        div = float(np.sqrt(np.sum(np.abs(np.sum(box.k * coeffs, axis=0)) ** 2)))
        tol = 1e-10 * max(size, 1e-300)
        if mean > tol or div > tol:
            raise ValueError(f"A_NOT_ADMISSIBLE: 矢势需零均值且无散 (mean={mean:.3e}, div={div:.3e})")

    @classmethod
    def zeros(cls, box: SpectralBox) -> 'VectorPotential':
        return cls(box, np.zeros((3,) + box.shape))

    @classmethod
    def project(cls, box: SpectralBox, values: np.ndarray) -> 'VectorPotential':
        """Leray 投影后构造"""
        return cls(box, box.ifft(box.leray_coeffs(box.fft(np.asarray(values)))).real)

    def hdot1_norm(self) -> float:
        return self.box.hdot1_norm(self.values)

    def reflected(self) -> 'VectorPotential':
        return VectorPotential(self.box, self.box.reflect(self.values))


def kramers_conjugate(u: SpinorField,
                      A: Optional[VectorPotential] = None) -> Tuple[SpinorField, Optional[VectorPotential]]:
    """
    Kramers 共轭 (u, A) -> (σ₂·conj(u(-x)), A(-x))

    两次作用得到 (-u, A)。
    """
    v = np.conj(u.box.reflect(u.values))
    nu = np.stack([-1j * v[1], 1j * v[0]])
    image = SpinorField(u.box, nu)
    if A is None:
        return image, None
    if A.box != u.box:
        raise ValueError(f"BOX_MISMATCH: u 属于 {u.box}, A 属于 {A.box}")
    return image, A.reflected()


# ---------------------------------------------------------------------------
# 假设检查
# ---------------------------------------------------------------------------

@dataclass
class HypothesisReport:
    """网格层面的可行性报告（不是证明）"""
    v_even_residual: float
    v1_min: float
    decomposition_residual: float
    chi_even_residual: float
    chi1_l2: float
    chi2_weak: float
    chi_caveat: bool
    a: float
    b: float
    candidates: List[Tuple[float, float]]
    smallness_lhs: Optional[float] = None
    issues: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.issues

    @property
    def smallness_ok(self) -> bool:
        return self.smallness_lhs is None or self.smallness_lhs < 1.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "v_even_residual": self.v_even_residual,
            "v1_min": self.v1_min,
            "decomposition_residual": self.decomposition_residual,
            "chi_even_residual": self.chi_even_residual,
            "chi1_l2": self.chi1_l2,
            "chi2_weak": self.chi2_weak,
            "chi_caveat": self.chi_caveat,
            "a": self.a,
            "b": self.b,
            "candidates": [list(pair) for pair in self.candidates],
            "smallness_lhs": self.smallness_lhs,
            "issues": list(self.issues),
            "passed": self.passed,
        }


def _trial_states(box: SpectralBox) -> List[np.ndarray]:
    """Rayleigh 商采样用的归一化试探函数：常数与一族 Gaussian"""
    states = [np.full(box.shape, 1.0 / np.sqrt(box.volume))]
    for width in np.geomspace(2.0 * box.dx, box.L / 6.0, 12):
        phi = np.exp(-box.r2 / (2.0 * width ** 2))
        states.append(phi / box.norm(phi))
    return states


def estimate_ab(potential: Potential, a_values: Sequence[float]) -> List[Tuple[float, float]]:
    """
    估计 V₋ ≤ a√(−Δ) + b 的候选 (a, b)

    b(a) 为试探族上 ⟨V₋⟩ − a⟨√(−Δ)⟩ 的最大值，只是下界估计，不能证明不等式。
    """
    box = potential.box
    negative = potential.negative_part
    samples = []
    for phi in _trial_states(box):
        v_minus = float(box.w_x * np.sum(negative * phi ** 2))
        half = box.spectral_sum(box.kabs, box.fft(phi))
        samples.append((v_minus, half))
    return [(float(a), max(vm - a * h for vm, h in samples)) for a in a_values]


def hypothesis_report(potential: Potential,
                      cutoff: CutoffProfile,
                      coupling: Optional[CouplingConfig] = None,
                      a: float = 0.5,
                      C: float = 1.0) -> HypothesisReport:
    """检查 V 的偶性、V₁ ≥ 0、分解一致性、χ 的偶性，并估计 χ 分裂的范数"""
    issues = list(potential.issues) + [i for i in cutoff.issues if i not in potential.issues]

    scale = max(float(np.max(np.abs(potential.values))), 1e-300)
    v_even = potential.evenness_residual()
    if v_even > 1e-12 * scale and "V_NOT_EVEN" not in issues:
        issues.append("V_NOT_EVEN")
    v1_min = float(np.min(potential.v1))
    if v1_min < -1e-14 * scale:
        issues.append("V1_NEGATIVE")
    decomposition = potential.decomposition_residual()
    if decomposition > 1e-12 * scale:
        issues.append("DECOMPOSITION_MISMATCH")
    chi_even = cutoff.evenness_residual()
    if chi_even > 1e-12 and "CHI_NOT_EVEN" not in issues:
        issues.append("CHI_NOT_EVEN")

    chi1_l2, chi2_weak, caveat = lorentz_lab.chi_split_norms(cutoff)
    a_values = sorted({0.25, 0.5, 1.0, float(a)})
    candidates = estimate_ab(potential, a_values)
    b = dict(candidates)[float(a)]

    smallness = None
    if coupling is not None:
        smallness = 32.0 * np.pi ** 3 * a * C ** 2 * coupling.g ** 2 * chi2_weak ** 2

    report = HypothesisReport(
        v_even_residual=v_even,
        v1_min=v1_min,
        decomposition_residual=decomposition,
        chi_even_residual=chi_even,
        chi1_l2=chi1_l2,
        chi2_weak=chi2_weak,
        chi_caveat=caveat,
        a=float(a),
        b=float(b),
        candidates=candidates,
        smallness_lhs=smallness,
        issues=issues,
    )
    if report.issues:
        logger.warning(f"假设检查未通过: {report.issues}")
    else:
        logger.debug(f"假设检查通过: ‖χ₁/|k|‖₂={chi1_l2:.4g}, ‖χ₂/|k|‖₃,∞={chi2_weak:.4g}")
    return report
