"""
MSQED Lab - 谱方法核心
周期盒子上的离散函数空间：Fourier 变换、Fourier 乘子、Leray 投影、齐次 Sobolev 范数与求积
"""
from dataclasses import dataclass
from enum import Enum
from typing import Callable, ClassVar, Optional, Tuple

import numpy as np
from loguru import logger


AXES = (-3, -2, -1)


class SpectralBox:
    """
    周期计算盒子 [-L/2, L/2)^3 及其对偶波数网格

    网格按 FFT 顺序存储，原点位于下标 0；k 网格同理。
    """

    def __init__(self, L: float, N: int):
        if not np.isfinite(L) or L <= 0:
            raise ValueError(f"BOX_INVALID: L 必须为正数, 收到 {L}")
        if int(N) != N or N < 8 or int(N) % 2:
            raise ValueError(f"BOX_INVALID: N 必须为不小于 8 的偶数, 收到 {N}")

        self.L = float(L)
        self.N = int(N)
        self.dx = self.L / self.N
        self.w_x = self.dx ** 3
        self.w_k = (2.0 * np.pi / self.L) ** 3
        self.volume = self.L ** 3

        self.x_axis = np.fft.fftfreq(self.N, d=1.0 / self.L)
        self.k_axis = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dx)
        self.x = np.stack(np.meshgrid(self.x_axis, self.x_axis, self.x_axis, indexing="ij"))
        self.k = np.stack(np.meshgrid(self.k_axis, self.k_axis, self.k_axis, indexing="ij"))
        self.r2 = np.sum(self.x ** 2, axis=0)
        self.r = np.sqrt(self.r2)
        self.k2 = np.sum(self.k ** 2, axis=0)
        self.kabs = np.sqrt(self.k2)

        nyq = np.zeros(self.N, dtype=bool)
        nyq[self.N // 2] = True
        self.nyquist = nyq[:, None, None] | nyq[None, :, None] | nyq[None, None, :]
        self._keep = ~self.nyquist

        # 导数符号 ik（Nyquist 平面置零）
        self.ik = 1j * self.k * self._keep
        k2_safe = self.k2.copy()
        k2_safe[0, 0, 0] = 1.0
        self._k2_safe = k2_safe
        inv = self._keep / k2_safe
        inv[0, 0, 0] = 0.0
        self.inv_k2 = inv

        logger.debug(f"SpectralBox 已创建: L={self.L}, N={self.N}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpectralBox):
            return NotImplemented
        return self.L == other.L and self.N == other.N

    def __hash__(self) -> int:
        return hash((self.L, self.N))

    def __repr__(self) -> str:
        return f"SpectralBox(L={self.L}, N={self.N})"

    @property
    def band_radius(self) -> float:
        """网格内切球半径 πN/L"""
        return np.pi * self.N / self.L

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.N, self.N, self.N)

    @property
    def mode_index(self) -> np.ndarray:
        """每个 k 点对应的整数模指标 (3,N,N,N)"""
        return np.rint(self.k * self.L / (2.0 * np.pi)).astype(int)

    # ------------------------------------------------------------------
    # 原始数组层面的运算（最后三个轴为空间轴）
    # ------------------------------------------------------------------

    def fft(self, values: np.ndarray) -> np.ndarray:
        return self.w_x * np.fft.fftn(values, axes=AXES)

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(coeffs, axes=AXES) / self.w_x

    def reflect(self, values: np.ndarray) -> np.ndarray:
        """f(x) -> f(-x)，对 k 网格上的系数同样适用"""
        return np.roll(values[..., ::-1, ::-1, ::-1], 1, axis=AXES)

    def zero_nyquist(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs * self._keep

    def grad(self, values: np.ndarray) -> np.ndarray:
        """谱梯度：(...,N,N,N) -> (3,...,N,N,N)"""
        coeffs = self.fft(values)
        ik = self.ik.reshape((3,) + (1,) * (coeffs.ndim - 3) + self.shape)
        out = self.ifft(ik * coeffs[None])
        return out.real if np.isrealobj(values) else out

    def curl(self, values: np.ndarray) -> np.ndarray:
        """谱旋度：(3,N,N,N) -> (3,N,N,N)"""
        out = self.ifft(self.curl_coeffs(self.fft(values)))
        return out.real if np.isrealobj(values) else out

    def curl_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        ik = self.ik
        return np.stack([
            ik[1] * coeffs[2] - ik[2] * coeffs[1],
            ik[2] * coeffs[0] - ik[0] * coeffs[2],
            ik[0] * coeffs[1] - ik[1] * coeffs[0],
        ])

    def divergence_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        return np.sum(self.ik * coeffs, axis=0)

    def leray_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        """P̂ = F̂ − k(k·F̂)/|k|²，零模与 Nyquist 置零"""
        kdot = np.sum(self.k * coeffs, axis=0)
        out = (coeffs - self.k * kdot / self._k2_safe) * self._keep
        out[:, 0, 0, 0] = 0.0
        return out

    def integrate(self, values: np.ndarray) -> complex:
        return self.w_x * np.sum(values)

    def inner(self, a: np.ndarray, b: np.ndarray) -> complex:
        """L² 内积 ⟨a, b⟩ = w_x Σ conj(a) b（对所有分量求和）"""
        return complex(self.w_x * np.vdot(a, b))

    def norm(self, values: np.ndarray) -> float:
        return float(np.sqrt(self.w_x * np.sum(np.abs(values) ** 2)))

    def spectral_sum(self, weight: np.ndarray, coeffs: np.ndarray) -> float:
        """(2π)^{-3} w_k Σ weight·|ĉ|²（对前导分量求和）"""
        density = np.abs(coeffs) ** 2
        if density.ndim > 3:
            density = density.reshape((-1,) + self.shape).sum(axis=0)
        return float(self.w_k * np.sum(weight * density) / (2.0 * np.pi) ** 3)

    def hdot1_norm(self, values: np.ndarray) -> float:
        return float(np.sqrt(self.spectral_sum(self.k2 * self._keep, self.fft(values))))

    def band_mask(self, fraction: float) -> np.ndarray:
        """每个轴上 |n| < fraction·N/2 的模（不含 Nyquist）"""
        limit = fraction * self.N / 2.0
        n = np.abs(self.mode_index)
        return np.all(n < limit, axis=0) & self._keep


# ---------------------------------------------------------------------------
# 网格场
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridField:
    """网格上的不可变场，values 的最后三个轴为空间轴"""
    box: SpectralBox
    values: np.ndarray

    COMPONENTS: ClassVar[int] = 0
    REAL: ClassVar[bool] = False

    def __post_init__(self):
        raw = np.asarray(self.values)
        expected = self.box.shape if self.COMPONENTS == 0 else (self.COMPONENTS,) + self.box.shape
        if raw.shape != expected:
            raise ValueError(f"FIELD_SHAPE: {type(self).__name__} 需要形状 {expected}, 收到 {raw.shape}")
        if self.REAL:
            if np.iscomplexobj(raw):
                scale = float(np.max(np.abs(raw))) if raw.size else 0.0
                if float(np.max(np.abs(raw.imag))) > 1e-12 * max(scale, 1e-300):
                    raise ValueError(f"FIELD_NOT_REAL: {type(self).__name__} 的虚部不可忽略")
                raw = raw.real
            arr = np.array(raw, dtype=np.float64)
        else:
            arr = np.array(raw, dtype=np.complex128)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def _check_box(self, other: 'GridField') -> None:
        if not isinstance(other, GridField):
            raise TypeError(f"FIELD_TYPE: 不能与 {type(other).__name__} 运算")
        if other.box != self.box:
            raise ValueError(f"BOX_MISMATCH: {self.box} 与 {other.box} 不一致")
        if other.values.shape != self.values.shape:
            raise ValueError(f"FIELD_SHAPE: {type(self).__name__} 与 {type(other).__name__} 形状不一致")

    def _like(self, values: np.ndarray) -> 'GridField':
        return type(self)(self.box, values)

    def __add__(self, other: 'GridField') -> 'GridField':
        self._check_box(other)
        return self._like(self.values + other.values)

    def __sub__(self, other: 'GridField') -> 'GridField':
        self._check_box(other)
        return self._like(self.values - other.values)

    def __neg__(self) -> 'GridField':
        return self._like(-self.values)

    def __mul__(self, scalar) -> 'GridField':
        if isinstance(scalar, GridField):
            raise TypeError("FIELD_TYPE: 场与场的逐点乘积请使用 values")
        return self._like(self.values * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> 'GridField':
        return self._like(self.values / scalar)

    def inner(self, other: 'GridField') -> complex:
        self._check_box(other)
        return self.box.inner(self.values, other.values)

    def norm(self) -> float:
        return self.box.norm(self.values)

    def coefficients(self) -> np.ndarray:
        return self.box.fft(self.values)


class ScalarField(GridField):
    """实标量场 (N,N,N)"""
    REAL = True


class ComplexField(GridField):
    """复标量场 (N,N,N)，即旋量的一个分量"""
    REAL = False


class VectorField(GridField):
    """三分量实矢量场 (3,N,N,N)"""
    COMPONENTS = 3
    REAL = True


CSpinorComponent = ComplexField
RVectorField = VectorField


def smooth_random(box: SpectralBox,
                  rng: np.random.Generator,
                  components: int = 0,
                  real: bool = True,
                  band: float = 0.5,
                  width: Optional[float] = None) -> np.ndarray:
    """
    生成带限光滑随机数组

    Args:
        box: 计算盒子
        rng: 随机数生成器
        components: 分量数（0 表示标量）
        real: 是否为实值
        band: 每轴保留 |n| < band·N/2 的模；band=0.5 时两个场的乘积仍无混叠
        width: 可选的 Gaussian 平滑宽度（波数单位）

    Returns:
        values 数组
    """
    shape = box.shape if components == 0 else (components,) + box.shape
    noise = rng.standard_normal(shape)
    if not real:
        noise = noise + 1j * rng.standard_normal(shape)
    coeffs = box.fft(noise) * box.band_mask(band)
    if width is not None:
        coeffs = coeffs * np.exp(-box.k2 / (2.0 * width ** 2))
    values = box.ifft(coeffs)
    return values.real if real else values


# ---------------------------------------------------------------------------
# 变换与乘子
# ---------------------------------------------------------------------------

def forward_transform(f: GridField, box: Optional[SpectralBox] = None) -> np.ndarray:
    """f̂(k) = w_x Σ_x e^{-ik·x} f(x)"""
    if box is not None and box != f.box:
        raise ValueError(f"BOX_MISMATCH: 场属于 {f.box}, 变换盒子为 {box}")
    return f.box.fft(f.values)


def inverse_transform(box: SpectralBox, coeffs: np.ndarray, kind: type = ComplexField) -> GridField:
    """forward_transform 的逆；kind 为实场时要求系数满足共轭对称"""
    coeffs = np.asarray(coeffs)
    if coeffs.shape[-3:] != box.shape:
        raise ValueError(f"BOX_MISMATCH: 系数形状 {coeffs.shape} 与 {box} 不一致")
    return kind(box, box.ifft(coeffs))


class Parity(Enum):
    """乘子在 k -> -k 下的奇偶性"""
    EVEN = "even"
    ODD = "odd"


@dataclass(frozen=True, eq=False)
class FourierMultiplier:
    """k 网格上采样的 Fourier 乘子"""
    box: SpectralBox
    symbol: np.ndarray
    parity: Parity = Parity.EVEN
    name: str = "custom"

    def __post_init__(self):
        arr = np.array(self.symbol)
        if arr.shape != self.box.shape:
            raise ValueError(f"MULTIPLIER_SHAPE: 需要 {self.box.shape}, 收到 {arr.shape}")
        if np.any(np.isnan(arr)):
            raise ValueError(f"MULTIPLIER_NAN: 乘子 {self.name} 含 NaN")
        arr = arr * self.box._keep
        arr.setflags(write=False)
        object.__setattr__(self, "symbol", arr)

    @classmethod
    def identity(cls, box: SpectralBox) -> 'FourierMultiplier':
        return cls(box, np.ones(box.shape), Parity.EVEN, "identity")

    @classmethod
    def inverse_laplacian(cls, box: SpectralBox) -> 'FourierMultiplier':
        return cls(box, box.inv_k2, Parity.EVEN, "inverse_laplacian")

    @classmethod
    def power(cls, box: SpectralBox, s: float) -> 'FourierMultiplier':
        """|k|^s，零模取 0（s<0）或 1（s=0）"""
        symbol = np.zeros(box.shape)
        nonzero = box.kabs > 0
        symbol[nonzero] = box.kabs[nonzero] ** s
        if s == 0:
            symbol[0, 0, 0] = 1.0
        return cls(box, symbol, Parity.EVEN, f"power({s})")

    @classmethod
    def indicator(cls, box: SpectralBox, radius: float) -> 'FourierMultiplier':
        return cls(box, (box.kabs <= radius).astype(float), Parity.EVEN, f"indicator({radius})")

    @classmethod
    def radial(cls, box: SpectralBox, func: Callable[[np.ndarray], np.ndarray], name: str = "radial") -> 'FourierMultiplier':
        return cls(box, func(box.kabs), Parity.EVEN, name)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.symbol) or float(np.max(np.abs(self.symbol.imag))) == 0.0

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs * self.symbol

    def compose(self, other: 'FourierMultiplier') -> 'FourierMultiplier':
        if other.box != self.box:
            raise ValueError(f"BOX_MISMATCH: {self.box} 与 {other.box} 不一致")
        parity = Parity.EVEN if self.parity == other.parity else Parity.ODD
        return FourierMultiplier(self.box, self.symbol * other.symbol, parity, f"{self.name}*{other.name}")

    __matmul__ = compose

    def parity_residual(self) -> float:
        """max |m(-k) ∓ m(k)|"""
        sign = 1.0 if self.parity == Parity.EVEN else -1.0
        return float(np.max(np.abs(self.box.reflect(self.symbol) - sign * self.symbol)))


def apply_multiplier(m: FourierMultiplier, f: GridField) -> GridField:
    """ifft(m·f̂)，保持场的类型"""
    if m.box != f.box:
        raise ValueError(f"BOX_MISMATCH: 乘子属于 {m.box}, 场属于 {f.box}")
    return type(f)(f.box, f.box.ifft(m.apply(f.box.fft(f.values))))


def leray_project(F: VectorField) -> VectorField:
    """投影到离散无散、零均值的矢量场"""
    box = F.box
    return type(F)(box, box.ifft(box.leray_coeffs(box.fft(F.values))))


def sobolev_norm(f: GridField, s: float) -> float:
    """
    齐次 Sobolev 范数 ‖f‖_{Ḣ^s}² = (2π)^{-3} w_k Σ |k|^{2s} |f̂|²

    s < 0 时要求零模系数为 0。
    """
    box = f.box
    coeffs = box.fft(f.values)
    if s < 0:
        zero_mode = np.abs(coeffs[..., 0, 0, 0])
        total = float(np.sqrt(np.sum(np.abs(coeffs) ** 2)))
        if float(np.max(zero_mode)) > 1e-12 * max(total, 1e-300):
            raise ValueError(f"NONZERO_MEAN: s={s} 时场的均值必须为 0")
    weight = np.zeros(box.shape)
    nonzero = box.kabs > 0
    weight[nonzero] = box.kabs[nonzero] ** (2.0 * s)
    if s == 0:
        weight[0, 0, 0] = 1.0
    return float(np.sqrt(box.spectral_sum(weight, coeffs)))
