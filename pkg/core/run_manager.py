"""
MSQED Lab - 运行管理器
协调模型构造、假设检查、实验执行与运行记录的写入
"""
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from utils.config import RunConfig, config
from utils.logger import log_manager
from .model import ModelConfig, build_model, hypothesis_report
from .solver import ConvergenceError, GroundStateReference, SolverSettings, ground_state_scalar, minimize
from .experiments import (
    SweepError,
    a1_comparison,
    binding_report,
    contraction_estimate,
    decay_fit,
    expansion_fit,
    gap_check,
    optimality_probe,
    random_potential,
    uniqueness_probe,
    uv_sweep,
)
from .quasiclassical import parameter_from_potential, product_state_energy
from .records import build_run_record, write_csv_atomic, write_fields, write_json_atomic
from .verify_suites import G_LADDER, UV_LADDER, fock_battery, lorentz_battery


EXPERIMENTS = ("minimize", "uv-sweep", "g-sweep", "gap", "uniqueness", "fock-check", "lorentz-report")

Table = Tuple[List[str], List[List[Any]]]


class RunState(Enum):
    """运行状态"""
    IDLE = "idle"
    PREPARING = "preparing"
    CHECKING = "checking"
    RUNNING = "running"
    WRITING = "writing"
    COMPLETED = "completed"
    FAILED = "failed"


class HypothesisGateError(RuntimeError):
    """假设检查未通过且未指定 --force"""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


@dataclass
class RunProgress:
    """运行进度"""
    state: RunState
    current_step: int = 0
    total_steps: int = 4
    message: str = ""
    error: Optional[str] = None


@dataclass
class RunOptions:
    """运行选项"""
    run_config: RunConfig
    experiment: Optional[str] = None
    out_dir: Optional[str] = None
    force: bool = False
    workers: int = 1


@dataclass
class Artifacts:
    """实验产物：run.json 的 payload 及附带的表格与场数组"""
    payload: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, Table] = field(default_factory=dict)
    plotdata: Dict[str, Table] = field(default_factory=dict)
    fields: Optional[tuple] = None


@dataclass
class RunOutcome:
    experiment: str
    out_dir: Path
    record: Dict[str, Any]
    timing: Dict[str, float]
    files: List[Path]


def _log_or_nan(values: Sequence[float]) -> List[float]:
    return [float(np.log(v)) if v is not None and v > 0 else float("nan") for v in values]


@dataclass
class _Context:
    model: ModelConfig
    settings: SolverSettings
    run_config: RunConfig
    workers: int
    rng: np.random.Generator
    reference: Optional[GroundStateReference] = None

    def ground_state(self) -> GroundStateReference:
        if self.reference is None:
            self.reference = ground_state_scalar(self.model.box, self.model.potential.values,
                                                 tol=min(self.settings.tol_eig, 1e-9))
        return self.reference

    def ladder(self, default: Sequence[float]) -> List[float]:
        ladder = self.run_config.experiment.get("ladder") or list(default)
        return [float(x) for x in ladder]


class RunManager:
    """
    运行管理器
    构造模型、做假设检查、执行实验并原子地写出 run.json / timing.json / 表格 / 场数组
    """

    def __init__(self):
        self.state = RunState.IDLE
        self._on_progress: Optional[Callable[[RunProgress], None]] = None
        self._handlers: Dict[str, Callable[[_Context], Artifacts]] = {
            "minimize": self._run_minimize,
            "uv-sweep": self._run_uv_sweep,
            "g-sweep": self._run_g_sweep,
            "gap": self._run_gap,
            "uniqueness": self._run_uniqueness,
            "fock-check": self._run_fock_check,
            "lorentz-report": self._run_lorentz_report,
        }

    def set_progress_callback(self, callback: Callable[[RunProgress], None]) -> None:
        """设置进度回调"""
        self._on_progress = callback

    def _emit_progress(self, progress: RunProgress) -> None:
        self.state = progress.state
        if self._on_progress:
            self._on_progress(progress)

    def resolve_out_dir(self, options: RunOptions) -> Path:
        """--out > 配置 output.dir > 应用设置 output_dir"""
        base = options.out_dir or options.run_config.output.get("dir") or config.get("output_dir", "runs")
        return Path(base)

    def execute(self, options: RunOptions) -> RunOutcome:
        """
        同步执行一次运行

        Raises:
            ValueError: 模型构造失败
            HypothesisGateError: 假设检查未通过且未 --force
            ConvergenceError / SweepError: 数值失败（失败记录仍会写入 run.json）
        """
        run_config = options.run_config
        experiment = options.experiment or run_config.experiment.get("kind", "minimize")
        if experiment not in self._handlers:
            raise ValueError(f"EXPERIMENT_UNKNOWN: 未知的实验 {experiment!r}，可选 {list(EXPERIMENTS)}")

        warnings: List[str] = []
        log_manager.set_record_callback(lambda level, message: warnings.append(f"{level}: {message}"))
        timing: Dict[str, float] = {}
        start = time.perf_counter()
        out_dir = self.resolve_out_dir(options)
        try:
            self._emit_progress(RunProgress(state=RunState.PREPARING, current_step=1, message="构造模型"))
            model = build_model(run_config)
            settings = SolverSettings.from_dict(run_config.solver)
            logger.info(f"实验 {experiment} | 盒子 {model.box} | g={model.g} | 输出目录 {out_dir}")

            self._emit_progress(RunProgress(state=RunState.CHECKING, current_step=2, message="假设检查"))
            report = hypothesis_report(model.potential, model.cutoff, model.coupling,
                                       a=settings.hypothesis_a, C=settings.smallness_C)
            if not report.passed:
                if not options.force:
                    raise HypothesisGateError(f"HYPOTHESIS_GATE: 假设检查未通过 {report.issues}", report)
                logger.warning(f"假设检查未通过，已按 --force 继续: {report.issues}")
            timing["prepare"] = time.perf_counter() - start

            self._emit_progress(RunProgress(state=RunState.RUNNING, current_step=3, message=f"运行 {experiment}"))
            context = _Context(model=model, settings=settings, run_config=run_config,
                               workers=options.workers, rng=np.random.default_rng(run_config.seed))
            stage = time.perf_counter()
            try:
                artifacts = self._handlers[experiment](context)
            except (ConvergenceError, SweepError) as e:
                failure = {"experiment": experiment, "status": "failed", "error": str(e),
                           "hypothesis": report.to_dict()}
                if isinstance(e, ConvergenceError):
                    failure["diagnostics"] = {k: v for k, v in e.diagnostics.items() if k != "energy_history"}
                write_json_atomic(out_dir / "run.json", build_run_record(run_config, failure, sorted(warnings)))
                raise
            timing["experiment"] = time.perf_counter() - stage

            self._emit_progress(RunProgress(state=RunState.WRITING, current_step=4, message="写入运行记录"))
            artifacts.payload.update({"experiment": experiment, "status": "ok", "hypothesis": report.to_dict()})
            files = self._write(out_dir, run_config, artifacts, warnings)
            timing["total"] = time.perf_counter() - start
            files.append(write_json_atomic(out_dir / "timing.json", timing))
            config.add_recent_run(str(out_dir.resolve()))

            self._emit_progress(RunProgress(state=RunState.COMPLETED, current_step=4, message="完成"))
            logger.info(f"运行完成: {len(files)} 个文件写入 {out_dir}")
            return RunOutcome(experiment=experiment, out_dir=out_dir,
                              record=build_run_record(run_config, artifacts.payload, sorted(warnings)),
                              timing=timing, files=files)
        except Exception as e:
            self._emit_progress(RunProgress(state=RunState.FAILED, error=str(e), message="运行失败"))
            raise
        finally:
            log_manager.remove_record_callback()

    def _write(self, out_dir: Path, run_config: RunConfig, artifacts: Artifacts, warnings: List[str]) -> List[Path]:
        # 多线程下警告顺序不固定，按字典序写入
        files = [write_json_atomic(out_dir / "run.json",
                                   build_run_record(run_config, artifacts.payload, sorted(warnings)))]
        for name, (header, rows) in artifacts.tables.items():
            files.append(write_csv_atomic(out_dir / "tables" / f"{name}.csv", header, rows))
        for name, (header, rows) in artifacts.plotdata.items():
            files.append(write_csv_atomic(out_dir / "plotdata" / f"{name}.csv", header, rows))
        if artifacts.fields is not None:
            files.append(write_fields(out_dir / "fields.npz", *artifacts.fields))
        return files

    # ------------------------------------------------------------------
    # 实验
    # ------------------------------------------------------------------

    def _run_minimize(self, ctx: _Context) -> Artifacts:
        model = ctx.model
        result = minimize(model, ctx.settings, reference=ctx.ground_state())
        payload: Dict[str, Any] = {"minimizer": result.to_record(), "binding": binding_report(model, result)}
        try:
            payload["decay"] = decay_fit(result.u_gs).to_dict()
        except ValueError as e:
            logger.warning(f"衰减拟合失败: {e}")
            payload["decay"] = None
        if model.g != 0.0:
            payload["first_order"] = a1_comparison(result.u_gs, result.A_gs, model, ctx.ground_state()).to_dict()
        payload["optimality_min_change"] = optimality_probe(result, model, ctx.rng)

        f = parameter_from_potential(result.A_gs)
        payload["product_state"] = product_state_energy(result.u_gs, f, model).to_dict()
        logger.info(f"E_V = {result.E_V:.15g}（μ_V = {result.mu_V:.15g}，{result.iterations} 次外迭代）")
        return Artifacts(
            payload=payload,
            plotdata={"energy_history": (["iteration", "energy"],
                                         [[i, e] for i, e in enumerate(result.energy_history)])},
            fields=(result.u_gs, result.A_gs, f),
        )

    def _run_uv_sweep(self, ctx: _Context) -> Artifacts:
        ladder = ctx.ladder(UV_LADDER)
        report = uv_sweep(ctx.model, ladder, ctx.settings, ctx.workers, ctx.ground_state())
        rows = [entry.to_row() for entry in report.entries]
        logger.info(f"UV 扫描: 单调={report.monotone}, Cauchy 尾收缩={report.cauchy_shrinking}")
        return Artifacts(
            payload={"uv_sweep": report.to_dict()},
            tables={"uv_sweep": (list(report.HEADER), rows)},
            plotdata={"energy_vs_lambda": (["Lambda", "E_V_Lambda"], [[r[0], r[1]] for r in rows])},
        )

    def _run_g_sweep(self, ctx: _Context) -> Artifacts:
        ladder = ctx.ladder(G_LADDER)
        report = expansion_fit(ctx.model, ladder, ctx.settings, ctx.workers, ctx.ground_state())
        header, rows = report.table()
        g = np.array(report.g_values)
        remainder = np.abs(np.array(report.energies) - report.mu_V - report.c2 * g ** 2)
        columns = [
            _log_or_nan(report.g_values),
            _log_or_nan(remainder),
            _log_or_nan(report.phi_norms),
            _log_or_nan(report.a_norms),
            _log_or_nan(report.a1_deviations),
            _log_or_nan(report.omega_deviation),
        ]
        scaling = [list(row) for row in zip(*columns)]
        logger.info(f"g 扫描: c₂={report.c2:.6g}，闭式比值 {report.ratio_predicted:.4f}")
        return Artifacts(
            payload={"expansion": report.to_dict()},
            tables={"g_sweep": (header, rows)},
            plotdata={"loglog_scaling": (["log_g", "log_remainder", "log_phi", "log_A",
                                          "log_A_minus_A1", "log_omega_deviation"], scaling)},
        )

    def _run_gap(self, ctx: _Context) -> Artifacts:
        report = gap_check(ctx.model, ctx.settings, ctx.workers)
        logger.info(f"能隙: {report.gap:.6g}，束缚条件 {report.binding}")
        return Artifacts(payload={"gap": report.to_dict()})

    def _run_uniqueness(self, ctx: _Context) -> Artifacts:
        model = ctx.model
        result = minimize(model, ctx.settings, reference=ctx.ground_state())
        experiment = ctx.run_config.experiment
        count = int(experiment.get("seeds", 2))
        scale = float(experiment.get("seed_scale", 1.0))
        seeds = [random_potential(model.box, ctx.rng, scale) for _ in range(count)]
        report = uniqueness_probe(result.u_gs, model, seeds, damping=1.0)
        lipschitz = contraction_estimate(result.u_gs, model, ctx.rng)
        if lipschitz >= 1.0:
            logger.warning(f"update_A 的经验 Lipschitz 常数 {lipschitz:.4g} ≥ 1，不是压缩映射")
        return Artifacts(payload={"uniqueness": report.to_dict(), "lipschitz": lipschitz, "E_V": result.E_V})

    def _run_fock_check(self, ctx: _Context) -> Artifacts:
        model = ctx.model if ctx.model.g != 0.0 else ctx.model.with_coupling(0.1)
        battery = fock_battery(model, ctx.rng)
        prefactor = battery["expectation"].prefactor
        logger.info(f"Fock 检验完成，Φ 前因子: {prefactor}")
        return Artifacts(payload={"fock": battery})

    def _run_lorentz_report(self, ctx: _Context) -> Artifacts:
        battery = lorentz_battery(ctx.model, ctx.settings, ctx.rng)
        rows = [
            ["weak_inv_sqrt_k", battery["weak_inv_sqrt_k"]],
            ["weak_inv_sqrt_k_exact", battery["weak_inv_sqrt_k_exact"]],
            ["holder_constant", battery["holder"].constant],
            ["young_constant", battery["young"].constant],
            ["product_constant", battery["product_constant"].constant],
            ["hminus1_smeared_constant", battery["hminus1_constants"].smeared.constant],
            ["hminus1_product_constant", battery["hminus1_constants"].product.constant],
            ["hminus1_mode_slope", battery["hminus1_mode_slope"]],
            ["coercivity_epsilon", battery["certificate"].epsilon],
        ]
        running = battery["product_constant"].running_max
        return Artifacts(
            payload={"lorentz": battery},
            tables={"lorentz_constants": (["quantity", "value"], rows)},
            plotdata={"product_constant_running_max": (["sample", "running_max"],
                                                       [[i + 1, v] for i, v in enumerate(running)])},
        )


# 全局运行管理器实例
run_manager = RunManager()
