"""
MSQED Lab - 交替极小化求解器
最低本征对（LOBPCG）、Euler-Lagrange 矢势更新、交替极小化主循环与残差诊断
"""
import time
import warnings
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.sparse.linalg import LinearOperator, eigsh, lobpcg

from .spectral import SpectralBox
from .model import ModelConfig, SpinorField, VectorPotential, hypothesis_report, kramers_conjugate, spin_density
from .energy import EnergyBreakdown, PauliOperator, energy, smeared_potential, virial


class ConvergenceError(RuntimeError):
    """迭代未收敛，携带最佳迭代结果与诊断信息"""

    def __init__(self, message: str, best: Any = None, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


@dataclass
class SolverSettings:
    """求解器容差与迭代参数"""
    tol_eig: float = 1e-8
    tol_A: float = 1e-7
    tol_u: float = 1e-7
    tol_energy: float = 1e-10
    tol_virial: float = 1e-6
    max_outer: int = 500
    inner_steps: int = 50
    damping: float = 0.5
    max_eig_iter: int = 400
    min_damping: float = 1e-6
    hypothesis_a: float = 0.5
    smallness_C: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"SOLVER_PARAMS: damping 必须在 (0,1] 内, 收到 {self.damping}")
        if self.max_outer < 1 or self.inner_steps < 1:
            raise ValueError("SOLVER_PARAMS: max_outer 与 inner_steps 必须为正整数")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'SolverSettings':
        data = data or {}
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                logger.warning(f"忽略未知的求解器参数: {key}")
                continue
            kwargs[key] = int(value) if key in ("max_outer", "inner_steps", "max_eig_iter") else float(value)
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# 本征求解
# ---------------------------------------------------------------------------

def _kinetic_preconditioner(box: SpectralBox, components: int, dtype) -> LinearOperator:
    """(1 + |k|²)^{-1}，以 FFT 作用"""
    shape = ((components,) if components else ()) + box.shape
    size = int(np.prod(shape))
    symbol = 1.0 / (1.0 + box.k2)

    def apply(x):
        x = np.asarray(x)
        if x.ndim == 2:
            return np.column_stack([apply(col) for col in x.T])
        arr = x.reshape(shape)
        out = np.fft.ifftn(symbol * np.fft.fftn(arr, axes=(-3, -2, -1)), axes=(-3, -2, -1))
        if not np.iscomplexobj(x):
            out = out.real
        return out.ravel()

    return LinearOperator((size, size), matvec=apply, matmat=apply, dtype=dtype)


def _lobpcg_lowest(operator: LinearOperator,
                   apply: Any,
                   X0: np.ndarray,
                   preconditioner: LinearOperator,
                   tol: float,
                   maxiter: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """返回 (本征值, 本征向量列, 残差范数)，本征向量按欧氏范数归一"""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        values, vectors = lobpcg(operator, X0, M=preconditioner, tol=tol, maxiter=maxiter, largest=False)
    order = np.argsort(values)
    values = np.asarray(values)[order]
    vectors = np.asarray(vectors)[:, order]
    vectors = vectors / np.linalg.norm(vectors, axis=0)
    residuals = np.array([
        np.linalg.norm(apply(vectors[:, j]) - values[j] * vectors[:, j]) for j in range(vectors.shape[1])
    ])
    return values, vectors, residuals


def _eigsh_lowest(operator: LinearOperator, v0: np.ndarray, tol: float, maxiter: int) -> Tuple[np.ndarray, np.ndarray]:
    values, vectors = eigsh(operator, k=2, which="SA", v0=v0, tol=tol, maxiter=maxiter)
    order = np.argsort(values)
    return values[order], vectors[:, order]


@dataclass
class GroundStateReference:
    """无耦合 Schrödinger 算符 −Δ + V 的基态 (μ_V, u_V)"""
    box: SpectralBox
    mu: float
    u_v: np.ndarray
    residual: float

    def spinor(self, spin: Sequence[complex] = (1.0, 0.0)) -> SpinorField:
        return SpinorField.from_scalar(self.box, self.u_v, spin)

    def overlaps(self, u: SpinorField) -> np.ndarray:
        """c_a = ⟨u_V, u_a⟩"""
        return np.array([self.box.inner(self.u_v, u.values[a]) for a in range(2)])

    def project(self, u: SpinorField) -> SpinorField:
        """Π_V u = u_V ⊗ c"""
        return SpinorField.from_scalar(self.box, self.u_v, self.overlaps(u))


def ground_state_scalar(box: SpectralBox, V: np.ndarray, tol: float = 1e-9, maxiter: int = 500) -> GroundStateReference:
    """
    −Δ + V 的最低本征对

    u_V 为实函数，符号取为 ∫u_V > 0。
    """
    shape = box.shape
    size = int(np.prod(shape))
    symbol = box.k2 * box._keep

    def apply(x):
        arr = np.asarray(x).reshape(shape)
        lap = np.fft.ifftn(symbol * np.fft.fftn(arr)).real
        return (lap + V * arr).ravel()

    def matmat(X):
        X = np.asarray(X)
        if X.ndim == 1:
            return apply(X)
        return np.column_stack([apply(col) for col in X.T])

    operator = LinearOperator((size, size), matvec=matmat, matmat=matmat, dtype=np.float64)
    width = box.L / 8.0
    gauss = np.exp(-box.r2 / (2.0 * width ** 2))
    X0 = np.column_stack([gauss.ravel(), (box.x[0] * gauss).ravel()])
    values, vectors, residuals = _lobpcg_lowest(
        operator, apply, X0, _kinetic_preconditioner(box, 0, np.float64), tol, maxiter
    )
    if residuals[0] > tol:
        logger.debug(f"scalar LOBPCG 残差 {residuals[0]:.3e}，改用 eigsh")
        values, vectors = _eigsh_lowest(operator, vectors[:, 0], tol * 1e-2, maxiter * 20)
        vectors = vectors / np.linalg.norm(vectors, axis=0)
        residuals = np.array([np.linalg.norm(apply(vectors[:, 0]) - values[0] * vectors[:, 0])])
        if residuals[0] > tol:
            raise ConvergenceError(
                f"EIG_NOT_CONVERGED: 标量基态残差 {residuals[0]:.3e} > {tol:.1e}",
                best=(float(values[0]), vectors[:, 0]),
                diagnostics={"residual": float(residuals[0])},
            )

    u_v = vectors[:, 0].reshape(shape)
    if np.sum(u_v) < 0:
        u_v = -u_v
    u_v = u_v / box.norm(u_v)
    mu = float(box.inner(u_v, (apply(u_v.ravel())).reshape(shape)).real)
    residual = float(residuals[0])
    logger.debug(f"标量基态: μ_V={mu:.12g}, 残差={residual:.2e}")
    return GroundStateReference(box=box, mu=mu, u_v=u_v, residual=residual)


def fix_phase(u: SpinorField, reference: SpinorField) -> SpinorField:
    """旋转全局相位使 ⟨reference, u⟩ 为非负实数"""
    z = reference.inner(u)
    if abs(z) > 1e-14:
        return SpinorField(u.box, u.values * (np.conj(z) / abs(z)))
    flat = u.values.ravel()
    pivot = flat[np.argmax(np.abs(flat))]
    return SpinorField(u.box, u.values * (np.conj(pivot) / abs(pivot)))


def lowest_eigenpair(H: PauliOperator,
                     u0: SpinorField,
                     tol: float = 1e-8,
                     maxiter: int = 400,
                     reference: Optional[SpinorField] = None) -> Tuple[float, SpinorField]:
    """
    Pauli 算符的最低本征对

    块大小为 2（种子及其 Kramers 像），以便分辨简并的 Kramers 对；
    简并时返回本征空间中与 reference 重叠最大的向量。

    Raises:
        ConvergenceError: 残差超过 tol（EIG_NOT_CONVERGED），或本征值高于种子的 Rayleigh 商（EIG_NOT_MINIMAL）
    """
    box = H.box
    if u0.box != box:
        raise ValueError(f"BOX_MISMATCH: 种子属于 {u0.box}, 算符属于 {box}")
    if not u0.is_normalized():
        raise ValueError(f"U_NOT_NORMALIZED: ‖u₀‖ = {u0.norm():.15g}")
    reference = reference or u0

    shape = (2,) + box.shape

    def apply(x):
        return H.apply(np.asarray(x).reshape(shape)).ravel()

    operator = H.linear_operator()
    partner, _ = kramers_conjugate(u0)
    X0 = np.column_stack([u0.values.ravel(), partner.values.ravel()])
    seed_rq = H.expectation(u0.values)
    margin = 1e-12 * max(1.0, abs(seed_rq))

    values, vectors, residuals = _lobpcg_lowest(
        operator, apply, X0, _kinetic_preconditioner(box, 2, np.complex128), tol, maxiter
    )
    # 单位欧氏向量的残差即归一化场的 L² 残差
    above_seed = float(values[0]) > seed_rq + margin
    if residuals[0] > tol or above_seed:
        if above_seed:
            logger.debug(f"LOBPCG 本征值 {values[0]:.15g} 高于种子 Rayleigh 商 {seed_rq:.15g}，从种子重启 eigsh")
        else:
            logger.debug(f"LOBPCG 残差 {residuals[0]:.3e}，改用 eigsh")
        v0 = X0[:, 0] if above_seed else vectors[:, 0]
        try:
            values, vectors = _eigsh_lowest(operator, v0, tol * 1e-2, maxiter * 20)
            vectors = vectors / np.linalg.norm(vectors, axis=0)
            residuals = np.array([
                np.linalg.norm(apply(vectors[:, j]) - values[j] * vectors[:, j]) for j in range(2)
            ])
        except Exception as e:
            logger.debug(f"eigsh 失败: {e}")
        if residuals[0] > tol:
            best = SpinorField(box, vectors[:, 0].reshape(shape)).normalize()
            raise ConvergenceError(
                f"EIG_NOT_CONVERGED: 本征残差 {residuals[0]:.3e} > {tol:.1e}",
                best=(float(values[0]), best),
                diagnostics={"residual": float(residuals[0]), "eigenvalue": float(values[0])},
            )
        if float(values[0]) > seed_rq + margin:
            raise ConvergenceError(
                f"EIG_NOT_MINIMAL: 本征值 {values[0]:.15g} 高于种子 Rayleigh 商 {seed_rq:.15g}",
                best=(seed_rq, u0),
                diagnostics={"residual": float(residuals[0]), "eigenvalue": float(values[0]),
                             "seed_rayleigh": seed_rq},
            )

    lam = float(values[0])
    vec = vectors[:, 0]
    degenerate = vectors.shape[1] > 1 and abs(values[1] - values[0]) <= 1e-10 * max(1.0, abs(lam)) \
        and residuals[1] <= tol
    if degenerate:
        ref = reference.values.ravel()
        coeffs = vectors[:, :2].conj().T @ ref
        if np.linalg.norm(coeffs) > 1e-14:
            vec = vectors[:, :2] @ coeffs

    u = fix_phase(SpinorField(box, vec.reshape(shape)).normalize(), reference)
    return lam, u


# ---------------------------------------------------------------------------
# 矢势更新
# ---------------------------------------------------------------------------

def el_source(u: SpinorField, A: VectorPotential, model: ModelConfig) -> np.ndarray:
    """J + ½∇∧S，J = Re⟨u, −i∇u⟩_{C²} − gÃ|u|²"""
    box = model.box
    psi = u.values
    a_tilde = smeared_potential(model, A)
    grad = box.grad(psi)
    current = np.sum(np.conj(psi)[None] * (-1j * grad), axis=1).real
    current = current - model.g * a_tilde * np.sum(np.abs(psi) ** 2, axis=0)[None]
    return current + 0.5 * box.curl(spin_density(psi))


def el_rhs(u: SpinorField, A: VectorPotential, model: ModelConfig) -> Tuple[np.ndarray, float]:
    """
    32π³ g (−Δ)^{-1} χ P[J + ½∇∧S]

    Returns:
        (右侧实数组, Leray 投影的相对作用量)
    """
    box = model.box
    coeffs = box.fft(el_source(u, A, model))
    chi = model.cutoff.symbol
    factor = 32.0 * np.pi ** 3 * model.g * box.inv_k2
    raw = factor * chi * coeffs
    projected = factor * chi * box.leray_coeffs(coeffs)
    mask = model.uv_mask()
    if mask is not None:
        projected = projected * mask
        raw = raw * mask
    raw_norm = np.sqrt(box.spectral_sum(box.k2, raw))
    diff_norm = np.sqrt(box.spectral_sum(box.k2, raw - projected))
    effect = float(diff_norm / raw_norm) if raw_norm > 0 else 0.0
    return box.ifft(projected).real, effect


def update_A(u: SpinorField, A_prev: VectorPotential, model: ModelConfig, damping: float = 0.5) -> VectorPotential:
    """(1−α)A_prev + α·P·RHS(A_prev)"""
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"SOLVER_PARAMS: damping 必须在 (0,1] 内, 收到 {damping}")
    rhs, _ = el_rhs(u, A_prev, model)
    values = (1.0 - damping) * A_prev.values + damping * rhs
    return VectorPotential.project(model.box, values)


# ---------------------------------------------------------------------------
# 残差
# ---------------------------------------------------------------------------

@dataclass
class ELResiduals:
    """Euler-Lagrange 残差"""
    residual_A: float
    residual_u: float
    phi_norm: float
    projector_effect: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return {
            "residual_A": self.residual_A,
            "residual_u": self.residual_u,
            "phi_norm": self.phi_norm,
            "projector_effect": self.projector_effect,
        }


def el_residuals(u: SpinorField,
                 A: VectorPotential,
                 model: ModelConfig,
                 reference: Optional[GroundStateReference] = None) -> ELResiduals:
    """residual_A = ‖A − P·RHS(A)‖_{Ḣ¹}，residual_u = ‖Hu − ⟨u,Hu⟩u‖，phi_norm = ‖Π_V^⊥u‖_{H¹}"""
    box = model.box
    if not u.is_normalized():
        raise ValueError(f"U_NOT_NORMALIZED: ‖u‖ = {u.norm():.15g}")
    rhs, effect = el_rhs(u, A, model)
    residual_A = box.hdot1_norm(A.values - rhs)

    H = PauliOperator(model, A)
    hu = H.apply(u.values)
    rq = box.inner(u.values, hu).real
    residual_u = box.norm(hu - rq * u.values)

    if reference is None:
        reference = ground_state_scalar(box, model.potential.values)
    phi = u.values - reference.project(u).values
    phi_norm = float(np.sqrt(box.norm(phi) ** 2 + box.w_x * np.sum(np.abs(box.grad(phi)) ** 2)))
    return ELResiduals(residual_A=float(residual_A), residual_u=float(residual_u),
                       phi_norm=phi_norm, projector_effect=effect)


# ---------------------------------------------------------------------------
# 交替极小化
# ---------------------------------------------------------------------------

@dataclass
class MinimizerResult:
    """极小化结果"""
    u_gs: SpinorField
    A_gs: VectorPotential
    E_V: float
    breakdown: EnergyBreakdown
    iterations: int
    energy_history: List[float]
    residual_A: float
    residual_u: float
    phi_norm: float
    virial: np.ndarray
    wall_time: float
    converged: bool
    mu_V: float
    projector_effect: float = 0.0
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> Dict[str, Any]:
        """可序列化的摘要（不含场数组与耗时）"""
        return {
            "E_V": self.E_V,
            "mu_V": self.mu_V,
            "breakdown": self.breakdown.to_dict(),
            "iterations": self.iterations,
            "energy_history": list(self.energy_history),
            "residual_A": self.residual_A,
            "residual_u": self.residual_u,
            "phi_norm": self.phi_norm,
            "virial": [float(v) for v in self.virial],
            "converged": self.converged,
            "projector_effect": self.projector_effect,
            "A_hdot1": self.A_gs.hdot1_norm(),
            "diagnostics": dict(self.diagnostics),
        }


def _relax_field(u: SpinorField,
                 A: VectorPotential,
                 current: float,
                 model: ModelConfig,
                 settings: SolverSettings) -> Tuple[VectorPotential, float, Dict[str, Any]]:
    """带能量回溯的阻尼不动点迭代；ℰ 对 A 是凸二次的，RHS − A 为下降方向"""
    box = model.box
    alpha = settings.damping
    steps = 0
    for steps in range(1, settings.inner_steps + 1):
        rhs, _ = el_rhs(u, A, model)
        gap = box.hdot1_norm(A.values - rhs)
        if gap <= 0.1 * settings.tol_A:
            break
        while True:
            trial = VectorPotential.project(box, (1.0 - alpha) * A.values + alpha * rhs)
            trial_energy = energy(u, trial, model).total
            if trial_energy <= current + 1e-13 * max(1.0, abs(current)):
                break
            alpha *= 0.5
            if alpha < settings.min_damping:
                logger.debug(f"矢势回溯步长低于 {settings.min_damping}，停止内迭代")
                return A, current, {"inner_steps": steps, "stalled": True}
        A, current = trial, trial_energy
        alpha = settings.damping
        logger.debug(f"内迭代 {steps}: ℰ={current:.15g}, ‖A−RHS‖={gap:.3e}")
    return A, current, {"inner_steps": steps, "stalled": False}


def minimize(model: ModelConfig,
             settings: Optional[SolverSettings] = None,
             u_seed: Optional[SpinorField] = None,
             A_seed: Optional[VectorPotential] = None,
             reference: Optional[GroundStateReference] = None) -> MinimizerResult:
    """
    交替极小化 ℰ_V：u 步求最低本征对，A 步做阻尼 Euler-Lagrange 不动点迭代

    Args:
        model: 模型配置
        settings: 求解器参数
        u_seed: 旋量种子（默认 u_V ⊗ (1,0)）
        A_seed: 矢势种子（默认 0）
        reference: 预先计算好的无耦合基态

    Returns:
        MinimizerResult
    """
    settings = settings or SolverSettings()
    start = time.perf_counter()
    box = model.box

    report = hypothesis_report(model.potential, model.cutoff, model.coupling,
                               a=settings.hypothesis_a, C=settings.smallness_C)
    if not report.smallness_ok:
        logger.warning(f"小耦合条件不满足: 32π³aC²g²‖χ₂/|k|‖² = {report.smallness_lhs:.4g} ≥ 1")

    if reference is None:
        reference = ground_state_scalar(box, model.potential.values, tol=min(settings.tol_eig, 1e-9))
    anchor = reference.spinor()
    u = (u_seed or anchor)
    if not u.is_normalized():
        u = u.normalize()
    A = A_seed or VectorPotential.zeros(box)
    mu_v = energy(anchor, VectorPotential.zeros(box), model.with_coupling(0.0)).total

    current = energy(u, A, model).total
    history = [current]
    diagnostics: Dict[str, Any] = {"smallness_lhs": report.smallness_lhs, "inner_steps": []}

    if model.g == 0.0 and u_seed is None and A_seed is None:
        residuals = el_residuals(u, A, model, reference)
        breakdown = energy(u, A, model)
        logger.info(f"g=0: E_V = μ_V = {breakdown.total:.12g}")
        return MinimizerResult(
            u_gs=u, A_gs=A, E_V=breakdown.total, breakdown=breakdown, iterations=0,
            energy_history=history, residual_A=residuals.residual_A, residual_u=residuals.residual_u,
            phi_norm=residuals.phi_norm, virial=virial(u, A, model),
            wall_time=time.perf_counter() - start, converged=True, mu_V=mu_v,
            projector_effect=residuals.projector_effect, diagnostics=diagnostics,
        )

    converged = False
    residuals = None
    iteration = 0
    for iteration in range(1, settings.max_outer + 1):
        H = PauliOperator(model, A)
        try:
            _, candidate = lowest_eigenpair(H, u, tol=settings.tol_eig,
                                            maxiter=settings.max_eig_iter, reference=anchor)
        except ConvergenceError as e:
            e.diagnostics.update({"outer_iteration": iteration, "energy_history": history})
            raise
        candidate_energy = energy(candidate, A, model).total
        if candidate_energy <= current + 1e-13 * max(1.0, abs(current)):
            u, current = candidate, candidate_energy

        A, current, inner = _relax_field(u, A, current, model, settings)
        diagnostics["inner_steps"].append(inner["inner_steps"])
        history.append(current)

        residuals = el_residuals(u, A, model, reference)
        drop = history[-2] - history[-1]
        logger.info(
            f"外迭代 {iteration}: ℰ={current:.15g}, ΔE={drop:.3e}, "
            f"res_A={residuals.residual_A:.3e}, res_u={residuals.residual_u:.3e}"
        )
        if (residuals.residual_A <= settings.tol_A and residuals.residual_u <= settings.tol_u
                and drop <= settings.tol_energy * max(1.0, abs(current))):
            converged = True
            break

    breakdown = energy(u, A, model)
    vir = virial(u, A, model)
    result = MinimizerResult(
        u_gs=u, A_gs=A, E_V=breakdown.total, breakdown=breakdown, iterations=iteration,
        energy_history=history, residual_A=residuals.residual_A, residual_u=residuals.residual_u,
        phi_norm=residuals.phi_norm, virial=vir, wall_time=time.perf_counter() - start,
        converged=converged, mu_V=mu_v, projector_effect=residuals.projector_effect,
        diagnostics=diagnostics,
    )
    if not converged:
        raise ConvergenceError(
            f"DESCENT_STALL: {settings.max_outer} 次外迭代后 res_A={residuals.residual_A:.3e}, "
            f"res_u={residuals.residual_u:.3e}",
            best=result,
            diagnostics={"energy_history": history, **residuals.to_dict()},
        )
    vir_norm = float(np.linalg.norm(vir))
    if vir_norm > settings.tol_virial:
        result.converged = False
        raise ConvergenceError(
            f"VIRIAL_DEFECT: ‖virial‖ = {vir_norm:.3e} > {settings.tol_virial:.1e}",
            best=result,
            diagnostics={"virial": [float(v) for v in vir], **residuals.to_dict()},
        )
    logger.info(f"极小化完成: E_V={result.E_V:.15g}, 外迭代 {iteration} 次, 用时 {result.wall_time:.1f}s")
    return result
