"""
MSQED Lab - Lorentz 空间工具
弱 L^p 与 L^{p,q} 范数估计、Hölder/Young 不等式采样、χ̂*A 乘积估计与 Ḣ^{-1} 估计的经验常数、强制性证书
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.integrate import trapezoid

from .spectral import SpectralBox, smooth_random


# Z³ 上 Epstein zeta 函数在 s=2 处的值：Σ'_{|n|≤R} |n|^{-2} = 4πR + Z₂ + o(1)
EPSTEIN_Z2 = -8.913633
# 弱范数只取累计测度不小于半径 4h 球体积的层
RESOLVED_SHELLS = 4.0
TGRID_PER_DECADE = 400


class SmallnessViolation(ValueError):
    """强制性条件 32π³aC²g²‖χ₂/|k|‖² < 1 不成立"""

    def __init__(self, message: str, certificate: 'CoercivityCertificate'):
        super().__init__(message)
        self.certificate = certificate


# ---------------------------------------------------------------------------
# Lorentz 范数
# ---------------------------------------------------------------------------

def _levels(values: np.ndarray, weights) -> Tuple[np.ndarray, np.ndarray]:
    """降序的不同取值 a_j 与累计测度 M_j = λ({|f| ≥ a_j})"""
    v = np.abs(np.asarray(values)).ravel()
    w = np.broadcast_to(np.asarray(weights, dtype=float), np.shape(values)).ravel()
    keep = v > 0
    v, w = v[keep], w[keep]
    if v.size == 0:
        return v, w
    order = np.argsort(-v, kind="stable")
    v, w = v[order], w[order]
    levels, start = np.unique(-v, return_index=True)
    cumulative = np.cumsum(w)
    ends = np.append(start[1:], v.size) - 1
    return -levels, cumulative[ends]


def lorentz_norm(values: np.ndarray,
                 weights,
                 p: float,
                 q: float = np.inf,
                 min_measure: float = 0.0) -> float:
    """
    ‖f‖_{L^{p,q}} = p^{1/q} ‖λ({|f|>t})^{1/p} t‖_{L^q(dt/t)}

    对网格上的简单函数逐层精确求积。q = ∞ 时 min_measure 指定参与上确界的最小累计测度。
    """
    if not p >= 1 or not np.isfinite(p):
        raise ValueError(f"EXPONENT_RELATION: 需要 1 ≤ p < ∞, 收到 p={p}")
    if not q >= 1:
        raise ValueError(f"EXPONENT_RELATION: 需要 q ≥ 1, 收到 q={q}")
    levels, measures = _levels(values, weights)
    if levels.size == 0:
        if np.isinf(q):
            return 0.0
        raise ValueError("EMPTY_SUPPORT: 零函数的 L^{p,q} 估计没有支撑")

    if np.isinf(q):
        resolved = measures >= min_measure
        if not np.any(resolved):
            logger.debug(f"没有累计测度 ≥ {min_measure:.3e} 的层，退回全部层")
            resolved = np.ones_like(measures, dtype=bool)
        return float(np.max(levels[resolved] * measures[resolved] ** (1.0 / p)))

    nxt = np.append(levels[1:], 0.0)
    total = np.sum(measures ** (q / p) * (levels ** q - nxt ** q))
    return float((p / q * total) ** (1.0 / q))


def lorentz_norm_tgrid(values: np.ndarray, weights, p: float, q: float = np.inf) -> float:
    """在对数 t 网格（每十倍 400 点）上直接求分布函数积分，用于交叉检验"""
    v = np.abs(np.asarray(values)).ravel()
    w = np.broadcast_to(np.asarray(weights, dtype=float), np.shape(values)).ravel()
    keep = v > 0
    v, w = v[keep], w[keep]
    if v.size == 0:
        if np.isinf(q):
            return 0.0
        raise ValueError("EMPTY_SUPPORT: 零函数的 L^{p,q} 估计没有支撑")
    order = np.argsort(v)
    v, w = v[order], w[order]
    tail = np.cumsum(w[::-1])[::-1]
    lo, hi = float(v[0]), float(v[-1])
    decades = max(np.log10(hi / lo), 1.0 / TGRID_PER_DECADE)
    t = np.logspace(np.log10(lo), np.log10(hi), int(np.ceil(decades * TGRID_PER_DECADE)) + 1)
    # λ(t) = Σ_{|f|>t} w
    idx = np.searchsorted(v, t, side="right")
    lam = np.where(idx < v.size, tail[np.minimum(idx, v.size - 1)], 0.0)
    if np.isinf(q):
        return float(max(np.max(lam ** (1.0 / p) * t), tail[0] ** (1.0 / p) * lo))
    integrand = lam ** (q / p) * t ** q
    body = trapezoid(integrand, np.log(t))
    head = tail[0] ** (q / p) * lo ** q / q
    return float((p * (body + head)) ** (1.0 / q))


def resolved_measure(box: SpectralBox) -> float:
    """k 网格上可分辨的最小累计测度 (4π/3)(4h)³"""
    h = 2.0 * np.pi / box.L
    return 4.0 * np.pi / 3.0 * (RESOLVED_SHELLS * h) ** 3


def _power_law_weak_norm(box: SpectralBox,
                         magnitude: np.ndarray,
                         p: float,
                         power: float,
                         min_measure: float) -> float:
    """
    c|k|^{-α} 型符号的 L^{p,∞} 范数：内切球内用网格，球外与原点格元用解析测度

    λ(t) = w_k·#{网格上 |f| ≥ t} + (4π/3)[(c_out/t)^{3/α} − K³]₊ + (4π/3)min(r₀³, (c_in/t)^{3/α})
    """
    h = 2.0 * np.pi / box.L
    K = box.band_radius
    # 与原点格元等体积的球
    r0 = (3.0 * box.w_k / (4.0 * np.pi)) ** (1.0 / 3.0)
    inside = box._keep & (box.kabs > 0) & (box.kabs <= K)
    scaled = magnitude * box.kabs ** power
    c_out = float(np.median(scaled[inside & (box.kabs > K - 2.0 * h)]))
    c_in = float(np.median(scaled[inside & (box.kabs <= 1.0001 * h)]))

    v = np.sort(magnitude[inside])
    v = v[v > 0]
    if v.size == 0:
        return 0.0

    # 解析尾部上 t·λ(t)^{1/p} ∝ t^{1-3/(αp)}
    exponent = 1.0 - 3.0 / (power * p)
    if (c_in > 0 and exponent > 1e-9) or (c_out > 0 and exponent < -1e-9):
        logger.debug(f"|k|^(-{power}) 不属于 L^({p},∞)，范数发散")
        return float(np.inf)

    lo = c_out * K ** (-power) * 1e-2 if c_out > 0 else float(v[0])
    hi = c_in * r0 ** (-power) * 1e2 if c_in > 0 else float(v[-1])
    decades = max(np.log10(hi / lo), 1.0 / TGRID_PER_DECADE)
    t = np.concatenate([v, np.logspace(np.log10(lo), np.log10(hi),
                                       int(np.ceil(decades * TGRID_PER_DECADE)) + 1)])

    grid = box.w_k * (v.size - np.searchsorted(v, t, side="left"))
    outer = 4.0 * np.pi / 3.0 * np.maximum((c_out / t) ** (3.0 / power) - K ** 3, 0.0)
    inner = 4.0 * np.pi / 3.0 * np.minimum(r0 ** 3, (c_in / t) ** (3.0 / power))
    lam = grid + outer + inner
    # 网格计数只在可分辨的累计测度上参与上确界，纯解析的层总是参与
    resolved = (lam >= min_measure) | (grid == 0)
    return float(np.max(t[resolved] * lam[resolved] ** (1.0 / p)))


def symbol_norm(box: SpectralBox,
                values: np.ndarray,
                p: float,
                q: float = np.inf,
                resolved: bool = True,
                power: Optional[float] = None) -> float:
    """
    k 网格上符号的 L^{p,q} 估计（零模与 Nyquist 不计）

    power=α 时符号在频带外与原点附近按 c|k|^{-α} 延拓，系数从频带边缘与第一壳层读出，
    这两部分的测度解析给出；这类符号只有 q=∞ 的范数有限。
    power=None 时只在频带内估计，可靠性见 symbol_caveat。
    """
    min_measure = resolved_measure(box) if resolved and np.isinf(q) else 0.0
    if power is not None:
        if not power > 0:
            raise ValueError(f"EXPONENT_RELATION: 幂律指数需要 α>0, 收到 α={power}")
        if not np.isinf(q):
            raise ValueError(f"EXPONENT_RELATION: |k|^(-α) 型符号只有 q=∞ 的范数有限, 收到 q={q}")
        if not p >= 1 or not np.isfinite(p):
            raise ValueError(f"EXPONENT_RELATION: 需要 1 ≤ p < ∞, 收到 p={p}")
        return _power_law_weak_norm(box, np.abs(values), p, power, min_measure)

    sample = np.where(box._keep, np.abs(values), 0.0)
    sample[0, 0, 0] = 0.0
    return lorentz_norm(sample, box.w_k, p, q, min_measure=min_measure)


def symbol_caveat(box: SpectralBox, values: np.ndarray, power: Optional[float] = None) -> Optional[str]:
    """非幂律符号在频带边缘非零时，频带内的估计附带 band-only 说明"""
    if power is not None:
        return None
    edge = (box.kabs >= 0.9 * box.band_radius) & box._keep
    if np.max(np.abs(values[edge])) > 1e-12:
        return "band-only: 符号在频带边缘非零，Lorentz 范数仅在网格频带内估计"
    return None


def inverse_k_l2(box: SpectralBox, chi: np.ndarray) -> float:
    """‖χ/|k|‖_{L²}，格点和加上原点奇异性的 Epstein 修正 −hZ₂χ(0)²"""
    h = 2.0 * np.pi / box.L
    inv = np.where(box._keep, 1.0 / box._k2_safe, 0.0)
    inv[0, 0, 0] = 0.0
    total = box.w_k * np.sum(chi ** 2 * inv) - h * EPSTEIN_Z2 * float(chi[0, 0, 0]) ** 2
    return float(np.sqrt(max(total, 0.0)))


def chi_split_norms(cutoff) -> Tuple[float, float, Optional[str]]:
    """
    (‖χ₁/|k|‖_{L²}, ‖χ₂/|k|‖_{L^{3,∞}}, caveat)

    χ₂ ≡ 1 时使用解析值 (4π/3)^{1/3}；其余情形只在频带内估计，若 χ₂ 在频带边缘非零则给出 caveat。
    """
    box = cutoff.box
    chi1_l2 = inverse_k_l2(box, cutoff.chi1)
    chi2 = cutoff.chi2
    if not np.any(chi2):
        return chi1_l2, 0.0, None
    if np.all(chi2 == 1.0):
        return chi1_l2, float((4.0 * np.pi / 3.0) ** (1.0 / 3.0)), None

    inv = np.where(box._keep, 1.0 / np.sqrt(box._k2_safe), 0.0)
    chi2_weak = symbol_norm(box, chi2 * inv, 3.0, np.inf)
    caveat = symbol_caveat(box, chi2)
    if caveat:
        logger.warning(f"χ₂ 的弱范数只在频带内估计: {chi2_weak:.6g}")
    return chi1_l2, chi2_weak, caveat


# ---------------------------------------------------------------------------
# Hölder / Young 采样
# ---------------------------------------------------------------------------

def _conjugate(q1: float, q2: float) -> float:
    inv = (0.0 if np.isinf(q1) else 1.0 / q1) + (0.0 if np.isinf(q2) else 1.0 / q2)
    return np.inf if inv == 0 else 1.0 / inv


def target_exponents(p1: float, q1: float, p2: float, q2: float, kind: str = "holder") -> Tuple[float, float]:
    """Hölder: 1/p = 1/p₁+1/p₂；Young: 1+1/p = 1/p₁+1/p₂；两者都取 1/q = 1/q₁+1/q₂"""
    for p in (p1, p2):
        if not (1.0 <= p < np.inf):
            raise ValueError(f"EXPONENT_RELATION: 需要 1 ≤ p₁,p₂ < ∞, 收到 ({p1}, {p2})")
    inv = 1.0 / p1 + 1.0 / p2
    if kind == "holder":
        if inv > 1.0:
            raise ValueError(f"EXPONENT_RELATION: Hölder 需要 1/p₁+1/p₂ ≤ 1, 收到 {inv:.6g}")
        p = 1.0 / inv
    elif kind == "young":
        if not 1.0 < inv < 2.0:
            raise ValueError(f"EXPONENT_RELATION: Young 需要 1 < 1/p₁+1/p₂ < 2, 收到 {inv:.6g}")
        p = 1.0 / (inv - 1.0)
    else:
        raise ValueError(f"EXPONENT_RELATION: 未知的不等式类型 {kind!r}")
    q = max(_conjugate(q1, q2), 1.0)
    return p, q


def inequality_ratio(box: SpectralBox,
                     f1: np.ndarray,
                     f2: np.ndarray,
                     p1: float, q1: float,
                     p2: float, q2: float,
                     kind: str = "holder") -> float:
    """‖f₁f₂‖_{p,q}/(‖f₁‖_{p₁,q₁}‖f₂‖_{p₂,q₂})（Young 时分子换成卷积）"""
    p, q = target_exponents(p1, q1, p2, q2, kind)
    if kind == "holder":
        combined = f1 * f2
    else:
        combined = box.ifft(box.fft(f1) * box.fft(f2)).real
    if not np.any(np.abs(combined) > 1e-300):
        return 0.0
    denominator = lorentz_norm(f1, box.w_x, p1, q1) * lorentz_norm(f2, box.w_x, p2, q2)
    if denominator <= 0:
        raise ValueError("DEGENERATE_INPUT: 不等式右侧为 0")
    return lorentz_norm(combined, box.w_x, p, q) / denominator


def structured_sample(box: SpectralBox, rng: np.random.Generator, p: float) -> np.ndarray:
    """支撑在 |x| < L/4 内的示性函数、截断幂律或 Gaussian"""
    family = rng.integers(3)
    radius = rng.uniform(2.0 * box.dx, box.L / 4.0)
    r = np.maximum(box.r, box.dx / 2.0)
    ball = box.r < radius
    if family == 0:
        return ball.astype(float)
    if family == 1:
        alpha = rng.uniform(0.0, 0.9 * 3.0 / p)
        return np.where(ball, r ** (-alpha), 0.0)
    width = rng.uniform(box.dx, box.L / 12.0)
    return np.exp(-box.r2 / (2.0 * width ** 2))


@dataclass
class SamplerReport:
    """采样得到的经验常数（最佳常数的下界）"""
    kind: str
    exponents: Tuple[float, float, float, float]
    target: Tuple[float, float]
    constant: float
    ratios: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "exponents": list(self.exponents), "target": list(self.target),
                "constant": self.constant, "samples": len(self.ratios)}


def holder_young_sampler(box: SpectralBox,
                         p1: float, q1: float,
                         p2: float, q2: float,
                         n_samples: int = 50,
                         kind: str = "holder",
                         rng: Optional[np.random.Generator] = None) -> SamplerReport:
    """在结构化随机样本上取比值的最大值"""
    target = target_exponents(p1, q1, p2, q2, kind)
    rng = rng or np.random.default_rng(0)
    ratios = []
    for _ in range(n_samples):
        f1 = structured_sample(box, rng, p1)
        f2 = structured_sample(box, rng, p2)
        if kind == "holder":
            shift = tuple(int(s) for s in rng.integers(-box.N // 8, box.N // 8 + 1, size=3))
            f2 = np.roll(f2, shift, axis=(0, 1, 2))
        ratios.append(inequality_ratio(box, f1, f2, p1, q1, p2, q2, kind))
    report = SamplerReport(kind=kind, exponents=(p1, q1, p2, q2), target=target,
                           constant=float(max(ratios) if ratios else 0.0), ratios=ratios)
    logger.info(f"{kind} 采样: 目标指数 {target}, 经验常数 {report.constant:.6g}")
    return report


# ---------------------------------------------------------------------------
# χ̂*A 乘积估计
# ---------------------------------------------------------------------------

def half_norm(box: SpectralBox, u: np.ndarray) -> float:
    """‖u‖_{Ḣ^{1/2}}"""
    return float(np.sqrt(box.spectral_sum(box.kabs * box._keep, box.fft(u))))


def product_ratio(box: SpectralBox,
                  chi: np.ndarray,
                  chi1_l2: float,
                  chi2_weak: float,
                  u: np.ndarray,
                  A: np.ndarray) -> Optional[float]:
    """
    ‖(χ̂*A)u‖_{L²} / (‖A‖_{Ḣ¹}(‖χ₁/|k|‖‖u‖_{L²} + ‖χ₂/|k|‖_{3,∞}‖u‖_{Ḣ^{1/2}}))

    A = 0 时返回 None（不计入最大值）。
    """
    a_norm = box.hdot1_norm(A)
    if a_norm == 0.0:
        return None
    smeared = box.ifft(chi * box.fft(A)).real
    lhs = box.norm(smeared[:, None] * np.asarray(u)[None]) if np.ndim(u) == 4 else box.norm(smeared * u)
    denominator = a_norm * (chi1_l2 * box.norm(u) + chi2_weak * half_norm(box, u))
    if denominator <= 0:
        raise ValueError("DEGENERATE_INPUT: 乘积估计的分母为 0")
    return float(lhs / denominator)


@dataclass
class ConstantEstimate:
    """经验常数及其运行最大值"""
    constant: float
    ratios: List[float]
    running_max: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return {"constant": self.constant, "samples": len(self.ratios), "running_max": self.running_max}


def _running(ratios: Sequence[float]) -> ConstantEstimate:
    running = list(np.maximum.accumulate(ratios)) if ratios else []
    return ConstantEstimate(constant=float(running[-1]) if running else 0.0,
                            ratios=[float(r) for r in ratios],
                            running_max=[float(r) for r in running])


def _random_divfree(box: SpectralBox, rng: np.random.Generator) -> np.ndarray:
    values = smooth_random(box, rng, components=3, real=True, band=0.5)
    return box.ifft(box.leray_coeffs(box.fft(values))).real


def _concentrated_spinor(box: SpectralBox, rng: np.random.Generator) -> np.ndarray:
    width = rng.uniform(box.dx, box.L / 6.0)
    center = rng.uniform(-box.L / 8.0, box.L / 8.0, size=3)
    r2 = np.sum((box.x - center[:, None, None, None]) ** 2, axis=0)
    spin = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    u = spin[:, None, None, None] * np.exp(-r2 / (2.0 * width ** 2))[None]
    return u / box.norm(u)


def estimate_product_constant(cutoff,
                              n_samples: int = 100,
                              rng: Optional[np.random.Generator] = None) -> ConstantEstimate:
    """χ̂*A 乘积估计的经验常数，样本中一半为集中的 Gaussian 旋量"""
    box = cutoff.box
    rng = rng or np.random.default_rng(0)
    chi1_l2, chi2_weak, _ = chi_split_norms(cutoff)
    ratios = []
    for i in range(n_samples):
        if i % 2:
            u = _concentrated_spinor(box, rng)
        else:
            u = smooth_random(box, rng, components=2, real=False, band=0.5)
            u = u / box.norm(u)
        ratio = product_ratio(box, cutoff.symbol, chi1_l2, chi2_weak, u, _random_divfree(box, rng))
        if ratio is not None:
            ratios.append(ratio)
    estimate = _running(ratios)
    logger.info(f"乘积估计经验常数 C ≈ {estimate.constant:.6g}（{len(ratios)} 个样本）")
    return estimate


# ---------------------------------------------------------------------------
# Ḣ^{-1} 估计
# ---------------------------------------------------------------------------

def mixed_fourier_norm(box: SpectralBox, coeffs: np.ndarray) -> float:
    """max(‖ĉ‖_{L^∞}, ‖ĉ‖_{L^{6,2}})"""
    magnitude = np.abs(coeffs) * box._keep
    if not np.any(magnitude):
        return 0.0
    return float(max(np.max(magnitude), lorentz_norm(magnitude, box.w_k, 6.0, 2.0)))


def hminus1_smeared(box: SpectralBox, chi: np.ndarray, w: np.ndarray) -> float:
    """‖χ̂*w‖_{Ḣ^{-1}}"""
    coeffs = box.fft(w)
    scale = float(np.sqrt(np.sum(np.abs(coeffs) ** 2)))
    if abs(coeffs[0, 0, 0]) > 1e-12 * max(scale, 1e-300):
        raise ValueError("NONZERO_MEAN: Ḣ^{-1} 估计要求 w 的均值为 0")
    return float(np.sqrt(box.spectral_sum(box.inv_k2, chi * coeffs)))


def current_bound_ratios(box: SpectralBox,
                         chi: np.ndarray,
                         chi_norm: float,
                         w: np.ndarray,
                         u1: np.ndarray,
                         u2: np.ndarray,
                         uv_cutoff: float) -> Tuple[Optional[float], float]:
    """两个估计各自的左右比值；w = 0 时第一个比值为 None"""
    if box.norm(u1) == 0.0 or box.norm(u2) == 0.0:
        raise ValueError("DEGENERATE_INPUT: u₁, u₂ 不能为 0")
    w_norm = mixed_fourier_norm(box, box.fft(w))
    first = None
    if w_norm > 0:
        if chi_norm <= 0:
            raise ValueError("DEGENERATE_INPUT: ‖χ/|k|‖ 为 0")
        first = hminus1_smeared(box, chi, w) / (chi_norm * w_norm)
    product = box.fft(u1 * u2) * (box.kabs <= uv_cutoff)
    h1 = float(np.sqrt(box.norm(u2) ** 2 + box.w_x * np.sum(np.abs(box.grad(u2)) ** 2)))
    second = mixed_fourier_norm(box, product) / (box.norm(u1) * h1)
    return first, float(second)


@dataclass
class CurrentBoundConstants:
    smeared: ConstantEstimate
    product: ConstantEstimate

    def to_dict(self) -> Dict[str, Any]:
        return {"smeared": self.smeared.to_dict(), "product": self.product.to_dict()}


def _chi_norm(cutoff) -> float:
    chi1_l2, chi2_weak, _ = chi_split_norms(cutoff)
    return chi1_l2 + chi2_weak


def current_bound_ensemble(box: SpectralBox, n_samples: int, rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray, float]]:
    """(w, u₁, u₂, Λ) 的随机样本，w 取零均值"""
    ensemble = []
    for _ in range(n_samples):
        w = smooth_random(box, rng, components=0, real=True, band=0.5)
        w = w - np.mean(w)
        u1 = _concentrated_spinor(box, rng)[0]
        u2 = smooth_random(box, rng, components=0, real=False, band=0.5)
        ensemble.append((w, u1, u2, float(rng.uniform(1.0, box.band_radius))))
    return ensemble


def estimate_current_bound_constants(cutoff, ensemble) -> CurrentBoundConstants:
    box = cutoff.box
    chi_norm = _chi_norm(cutoff)
    firsts, seconds = [], []
    for w, u1, u2, lam in ensemble:
        first, second = current_bound_ratios(box, cutoff.symbol, chi_norm, w, u1, u2, lam)
        if first is not None:
            firsts.append(first)
        seconds.append(second)
    constants = CurrentBoundConstants(smeared=_running(firsts), product=_running(seconds))
    logger.info(
        f"Ḣ^{{-1}} 估计经验常数: {constants.smeared.constant:.6g}, "
        f"乘积 Fourier 估计经验常数: {constants.product.constant:.6g}"
    )
    return constants


def current_bound_slack(cutoff,
                        w: np.ndarray,
                        u1: np.ndarray,
                        u2: np.ndarray,
                        uv_cutoff: float,
                        constants: CurrentBoundConstants) -> Tuple[float, float]:
    """两个估计的松弛量 C·右侧 − 左侧"""
    box = cutoff.box
    chi_norm = _chi_norm(cutoff)
    lhs1 = hminus1_smeared(box, cutoff.symbol, w) if np.any(w) else 0.0
    rhs1 = constants.smeared.constant * chi_norm * mixed_fourier_norm(box, box.fft(w))
    product = box.fft(u1 * u2) * (box.kabs <= uv_cutoff)
    lhs2 = mixed_fourier_norm(box, product)
    h1 = float(np.sqrt(box.norm(u2) ** 2 + box.w_x * np.sum(np.abs(box.grad(u2)) ** 2)))
    rhs2 = constants.product.constant * box.norm(u1) * h1
    return float(rhs1 - lhs1), float(rhs2 - lhs2)


def hminus1_mode_decay(box: SpectralBox, modes: Sequence[int] = (2, 3, 4, 6, 8)) -> float:
    """单模 w = cos(k·x) 的 ‖w‖_{Ḣ^{-1}} 对 |k| 的对数斜率"""
    chi = np.ones(box.shape)
    ks, values = [], []
    for n in modes:
        if not 0 < n < box.N // 2:
            raise ValueError(f"DEGENERATE_INPUT: 模 {n} 不在网格频带内")
        k = 2.0 * np.pi * n / box.L
        w = np.cos(k * box.x[0])
        ks.append(k)
        values.append(hminus1_smeared(box, chi, w))
    return float(np.polyfit(np.log(ks), np.log(values), 1)[0])


# ---------------------------------------------------------------------------
# 强制性证书
# ---------------------------------------------------------------------------

@dataclass
class CoercivityCertificate:
    """
    启发式强制性证书：ℰ_V ≥ C₁‖(u,A)‖ − C₂（‖(u,A)‖ ≥ 16(2+a)²）

    C 为经验常数（最佳常数的下界），(a, b) 为采样候选值。
    """
    a: float
    b: float
    C: float
    g: float
    chi1_l2: float
    chi2_weak: float
    epsilon: float
    C1: float
    C2: float
    threshold: float
    heuristic: bool = True
    spot_checks: List[float] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.epsilon > 0

    @property
    def spot_passed(self) -> int:
        return sum(1 for s in self.spot_checks if s >= 0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "a": self.a, "b": self.b, "C": self.C, "g": self.g,
            "chi1_l2": self.chi1_l2, "chi2_weak": self.chi2_weak,
            "epsilon": self.epsilon, "C1": self.C1, "C2": self.C2,
            "threshold": self.threshold, "heuristic": self.heuristic,
            "spot_checks": len(self.spot_checks), "spot_passed": self.spot_passed,
        }


def coercivity_certificate(a: float, b: float, C: float, g: float, chi1_l2: float, chi2_weak: float) -> CoercivityCertificate:
    """由 (a, b, C, g) 和 χ 分裂范数计算 ε, C₁, C₂；ε ≤ 0 时拒绝"""
    epsilon = (1.0 / (32.0 * np.pi ** 3) - C ** 2 * a * g ** 2 * chi2_weak ** 2) / 2.0
    chi_norm = chi1_l2 + chi2_weak
    certificate = CoercivityCertificate(
        a=float(a), b=float(b), C=float(C), g=float(g),
        chi1_l2=float(chi1_l2), chi2_weak=float(chi2_weak),
        epsilon=float(epsilon),
        C1=float(epsilon / max(4.0, 32.0 * g ** 2 * C ** 2 * chi_norm ** 2)) if epsilon > 0 else 0.0,
        C2=float(b + a ** 2 * (1.0 + C ** 2 * g ** 2 * chi1_l2 ** 2 / epsilon)) if epsilon > 0 else float("inf"),
        threshold=16.0 * (2.0 + a) ** 2,
    )
    if epsilon <= 0:
        lhs = 32.0 * np.pi ** 3 * a * C ** 2 * g ** 2 * chi2_weak ** 2
        raise SmallnessViolation(
            f"SMALLNESS_VIOLATED: 32π³aC²g²‖χ₂/|k|‖² = {lhs:.6g} ≥ 1", certificate
        )
    return certificate


def state_norm(u, A, potential) -> float:
    """‖(u,A)‖² = ‖u‖²_{H¹} + ⟨u,V₊u⟩ + ‖A‖²_{Ḣ¹}"""
    box = u.box
    psi = u.values
    h1 = box.norm(psi) ** 2 + box.w_x * np.sum(np.abs(box.grad(psi)) ** 2)
    v_plus = box.w_x * np.sum(potential.positive_part * np.sum(np.abs(psi) ** 2, axis=0))
    return float(np.sqrt(h1 + v_plus + A.hdot1_norm() ** 2))


def spot_check(certificate: CoercivityCertificate,
               model,
               n_samples: int = 100,
               rng: Optional[np.random.Generator] = None) -> CoercivityCertificate:
    """在 ‖(u,A)‖ ≥ 阈值的随机容许对上检查 ℰ_V ≥ C₁‖·‖ − C₂"""
    from .model import SpinorField, VectorPotential
    from .energy import energy

    box = model.box
    rng = rng or np.random.default_rng(0)
    slacks = []
    for _ in range(n_samples):
        u = SpinorField(box, smooth_random(box, rng, components=2, real=False, band=0.5)).normalize()
        direction = VectorPotential.project(box, smooth_random(box, rng, components=3, real=True, band=0.5))
        scale = certificate.threshold * rng.uniform(1.0, 3.0) / direction.hdot1_norm()
        A = VectorPotential(box, direction.values * scale)
        norm = state_norm(u, A, model.potential)
        bound = certificate.C1 * norm - certificate.C2
        slacks.append(float(energy(u, A, model).total - bound))
    certificate.spot_checks = slacks
    passed = certificate.spot_passed
    if passed < n_samples:
        logger.warning(f"强制性证书抽查: {passed}/{n_samples} 通过")
    else:
        logger.info(f"强制性证书抽查: {passed}/{n_samples} 通过")
    return certificate
