"""
MSQED Lab v1.0
自旋 Maxwell-Schrödinger 能量泛函的谱方法数值实验工具

功能特性:
- 交替极小化求基态 (u_gs, A_gs)
- 紫外截断扫描与小耦合展开拟合
- 能隙检查与给定 u 时 A 的唯一性探针
- 截断 Fock 空间中的相干态检验
- Lorentz 空间估计的经验常数与强制性证书
- 验收套件 (verify)
"""
import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from loguru import logger

from utils.config import ConfigError, load_run_config, resolve_workers
from core.experiments import SweepError
from core.records import dumps, write_json_atomic
from core.run_manager import EXPERIMENTS, HypothesisGateError, RunOptions, run_manager
from core.solver import ConvergenceError
from core.verify_suites import run_suites, suite_names


EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_GATE = 3
EXIT_NUMERICAL = 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="运行配置 JSON 文件")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="覆盖配置项，例如 --set coupling.g=0.05（可重复）")
    common.add_argument("--seed", type=int, help="随机种子")
    common.add_argument("--workers", type=int, help="扫描成员的并行 worker 数")
    common.add_argument("--out", help="输出目录")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="控制台输出 DEBUG 日志")
    verbosity.add_argument("--quiet", action="store_true", help="控制台只输出 WARNING 及以上")

    parser = argparse.ArgumentParser(prog="msqed", description="MSQED Lab 命令行")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="运行一个实验")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--force", action="store_true", help="假设检查未通过时仍然运行")
    run.add_argument("--g", type=float, help="等价于 --set coupling.g=G")
    run.add_argument("--potential", help="等价于 --set potential.kind=KIND")
    run.add_argument("--ladder", help="逗号分隔的扫描序列，例如 2,4,8,16")

    verify = sub.add_parser("verify", parents=[common], help="运行验收套件")
    verify.add_argument("suite", choices=suite_names())
    return parser


def convenience_overrides(args: argparse.Namespace) -> List[str]:
    """把 --g / --potential / --ladder 改写为 --set 覆盖项（排在显式 --set 之后）"""
    overrides = list(args.overrides)
    if getattr(args, "g", None) is not None:
        overrides.append(f"coupling.g={json.dumps(args.g)}")
    if getattr(args, "potential", None):
        overrides.append(f"potential.kind={args.potential}")
    if getattr(args, "ladder", None):
        try:
            ladder = [float(x) for x in args.ladder.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"CONFIG_OVERRIDE: 无法解析 --ladder {args.ladder!r}")
        overrides.append(f"experiment.ladder={json.dumps(ladder)}")
    return overrides


def _cmd_run(args: argparse.Namespace, run_config, workers: int) -> int:
    options = RunOptions(
        run_config=run_config,
        experiment=args.experiment,
        out_dir=args.out,
        force=args.force,
        workers=workers,
    )
    try:
        outcome = run_manager.execute(options)
    except HypothesisGateError as e:
        logger.error(f"{e}（使用 --force 跳过）")
        return EXIT_GATE
    except (ConvergenceError, SweepError) as e:
        logger.error(f"数值求解失败: {e}")
        return EXIT_NUMERICAL
    except ValueError as e:
        logger.error(f"参数错误: {e}")
        return EXIT_USAGE
    logger.info(f"运行记录: {outcome.out_dir / 'run.json'}")
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace, run_config, workers: int) -> int:
    try:
        reports = run_suites(args.suite, run_config, workers)
    except ValueError as e:
        logger.error(f"参数错误: {e}")
        return EXIT_USAGE
    summary = {
        "suite": args.suite,
        "passed": all(r.passed for r in reports),
        "reports": [r.to_dict() for r in reports],
    }
    if args.out:
        path = write_json_atomic(Path(args.out) / f"verify_{args.suite}.json", summary)
        logger.info(f"验收报告: {path}")
    sys.stdout.write(dumps(summary) + "\n")
    failed = [c.name for r in reports for c in r.criteria if not c.passed]
    if failed:
        logger.warning(f"未通过的验收项: {failed}")
        return EXIT_FAILED
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """命令行入口"""
    parser = build_parser()
    args = parser.parse_args(argv)

    # 初始化日志
    from utils.logger import log_manager
    if args.verbose:
        log_manager.set_level("DEBUG")
    elif args.quiet:
        log_manager.set_level("WARNING")

    logger.debug(f"MSQED Lab 启动: {args.command}")
    try:
        run_config = load_run_config(args.config, convenience_overrides(args), args.seed)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_USAGE
    workers = resolve_workers(args.workers, run_config)

    if args.command == "run":
        return _cmd_run(args, run_config, workers)
    return _cmd_verify(args, run_config, workers)


if __name__ == "__main__":
    sys.exit(main())
