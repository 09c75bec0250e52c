"""
MSQED Lab - 配置管理
提供应用程序设置（单例）与运行配置（声明式 JSON）的加载、合并与校验
"""
import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

from loguru import logger


class ConfigError(ValueError):
    """运行配置错误（携带行列信息）"""

    def __init__(self, message: str, lineno: Optional[int] = None, colno: Optional[int] = None):
        super().__init__(message)
        self.lineno = lineno
        self.colno = colno


class Config:
    """应用配置管理器 - 单例模式"""

    _instance: Optional['Config'] = None

    # 应用程序基本信息
    APP_NAME = "MSQED Lab"
    APP_VERSION = "1.0.0"

    # 默认配置
    DEFAULT_CONFIG = {
        "log_level": "INFO",
        "default_workers": 1,
        "output_dir": "runs",
        "recent_runs": [],
    }

    def __new__(cls) -> 'Config':
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if self._initialized:
            return

        self._initialized = True
        self._config_dir = self._get_config_dir()
        self._config_file = self._config_dir / "config.json"
        self._config: dict = {}
        self._load_config()
        logger.debug(f"配置管理器初始化完成: {self._config_file}")

    def _get_config_dir(self) -> Path:
        """获取配置目录路径（MSQED_HOME 优先）"""
        override = os.environ.get("MSQED_HOME")
        if override:
            base_dir = Path(override)
        elif os.name == 'nt':  # Windows
            base_dir = Path(os.environ.get('APPDATA', Path.home())) / "MSQEDLab"
        else:  # Linux/macOS
            base_dir = Path.home() / '.config' / "MSQEDLab"

        base_dir.mkdir(parents=True, exist_ok=True)
        return base_dir

    def _load_config(self) -> None:
        """加载配置文件"""
        if self._config_file.exists():
            try:
                with open(self._config_file, 'r', encoding='utf-8') as f:
                    saved_config = json.load(f)
                # 合并默认配置和保存的配置
                self._config = {**copy.deepcopy(self.DEFAULT_CONFIG), **saved_config}
                logger.debug("已加载配置文件")
            except (json.JSONDecodeError, IOError) as e:
                logger.warning(f"配置文件加载失败，使用默认配置: {e}")
                self._config = copy.deepcopy(self.DEFAULT_CONFIG)
        else:
            self._config = copy.deepcopy(self.DEFAULT_CONFIG)
            self._save_config()
            logger.debug("创建默认配置文件")

    def _save_config(self) -> None:
        """保存配置到文件"""
        try:
            with open(self._config_file, 'w', encoding='utf-8') as f:
                json.dump(self._config, f, ensure_ascii=False, indent=2)
            logger.debug("配置已保存")
        except IOError as e:
            logger.error(f"配置保存失败: {e}")

    def get(self, key: str, default: Any = None) -> Any:
        """获取配置值"""
        return self._config.get(key, default)

    def set(self, key: str, value: Any, save: bool = True) -> None:
        """设置配置值"""
        self._config[key] = value
        if save:
            self._save_config()

    def update(self, updates: dict, save: bool = True) -> None:
        """批量更新配置"""
        self._config.update(updates)
        if save:
            self._save_config()

    def reset(self) -> None:
        """重置为默认配置"""
        self._config = copy.deepcopy(self.DEFAULT_CONFIG)
        self._save_config()
        logger.info("配置已重置为默认值")

    @property
    def config_dir(self) -> Path:
        """获取配置目录"""
        return self._config_dir

    @property
    def all_config(self) -> dict:
        """获取所有配置"""
        return copy.deepcopy(self._config)

    def add_recent_run(self, run_dir: str, max_items: int = 10) -> None:
        """添加最近的运行输出目录"""
        recent: list = self._config.get("recent_runs", [])
        if run_dir in recent:
            recent.remove(run_dir)
        recent.insert(0, run_dir)
        self._config["recent_runs"] = recent[:max_items]
        self._save_config()


# ---------------------------------------------------------------------------
# 运行配置
# ---------------------------------------------------------------------------

DEFAULT_RUN_CONFIG: Dict[str, Any] = {
    "box": {"L": 12.0, "N": 48},
    "potential": {
        "kind": "harmonic",
        "omega0": 1.0,
        "decomposition": {"kind": "cutoff", "radius": None, "lift": None},
    },
    "cutoff": {"kind": "sharp", "Lambda": 8.0},
    "coupling": {"g": 0.1, "Lambda": None},
    "solver": {
        "tol_eig": 1e-8,
        "tol_A": 1e-7,
        "tol_u": 1e-7,
        "tol_energy": 1e-10,
        "tol_virial": 1e-6,
        "max_outer": 500,
        "inner_steps": 50,
        "damping": 0.5,
        "max_eig_iter": 400,
        "hypothesis_a": 0.5,
        "smallness_C": 1.0,
    },
    "experiment": {
        "kind": "minimize",
        "ladder": [],
        "seeds": 2,
        "seed_scale": 1.0,
    },
    "output": {"dir": None},
    "seed": 0,
    "workers": None,
}


@dataclass(frozen=True)
class RunConfig:
    """一次运行的完整配置（合并默认值与覆盖项之后）"""
    box: Dict[str, Any]
    potential: Dict[str, Any]
    cutoff: Dict[str, Any]
    coupling: Dict[str, Any]
    solver: Dict[str, Any]
    experiment: Dict[str, Any]
    output: Dict[str, Any]
    seed: int = 0
    workers: Optional[int] = None
    source: Optional[str] = field(default=None, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        """导出为普通字典（不含来源路径）"""
        return {
            "box": copy.deepcopy(self.box),
            "potential": copy.deepcopy(self.potential),
            "cutoff": copy.deepcopy(self.cutoff),
            "coupling": copy.deepcopy(self.coupling),
            "solver": copy.deepcopy(self.solver),
            "experiment": copy.deepcopy(self.experiment),
            "output": copy.deepcopy(self.output),
            "seed": self.seed,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], source: Optional[str] = None) -> 'RunConfig':
        unknown = set(data) - set(DEFAULT_RUN_CONFIG)
        if unknown:
            raise ConfigError(f"CONFIG_UNKNOWN_KEY: 未知的配置项 {sorted(unknown)}")
        merged = _deep_merge(DEFAULT_RUN_CONFIG, data)
        try:
            seed = int(merged["seed"])
        except (TypeError, ValueError):
            raise ConfigError(f"CONFIG_INVALID: seed 必须为整数, 收到 {merged['seed']!r}")
        workers = merged.get("workers")
        if workers is not None:
            try:
                workers = int(workers)
            except (TypeError, ValueError):
                raise ConfigError(f"CONFIG_INVALID: workers 必须为整数, 收到 {workers!r}")
        for section in ("box", "potential", "cutoff", "coupling", "solver", "experiment", "output"):
            if not isinstance(merged[section], dict):
                raise ConfigError(f"CONFIG_INVALID: {section} 必须为对象")
        return cls(
            box=merged["box"],
            potential=merged["potential"],
            cutoff=merged["cutoff"],
            coupling=merged["coupling"],
            solver=merged["solver"],
            experiment=merged["experiment"],
            output=merged["output"],
            seed=seed,
            workers=workers,
            source=source,
        )


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    """递归合并字典，extra 优先"""
    result = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def parse_override(text: str) -> Tuple[List[str], Any]:
    """
    解析 --set 覆盖项

    Args:
        text: 形如 "coupling.g=0.05" 的字符串，值优先按 JSON 解析

    Returns:
        (键路径, 值)
    """
    if "=" not in text:
        raise ConfigError(f"CONFIG_OVERRIDE: 覆盖项缺少 '=': {text!r}")
    key, raw = text.split("=", 1)
    keys = [part for part in key.strip().split(".") if part]
    if not keys:
        raise ConfigError(f"CONFIG_OVERRIDE: 覆盖项键为空: {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return keys, value


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """把 --set 覆盖项写入嵌套字典"""
    result = copy.deepcopy(data)
    for text in overrides:
        keys, value = parse_override(text)
        node = result
        for part in keys[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[keys[-1]] = value
    return result


def load_run_config(path: Optional[str] = None,
                    overrides: Iterable[str] = (),
                    seed: Optional[int] = None) -> RunConfig:
    """
    加载运行配置

    Args:
        path: JSON 配置文件路径（None 表示只用默认值）
        overrides: --set 覆盖项
        seed: 命令行随机种子（覆盖文件中的 seed）

    Returns:
        RunConfig
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"CONFIG_READ: 无法读取配置文件 {path}: {e}")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"CONFIG_PARSE: {path} 第 {e.lineno} 行第 {e.colno} 列: {e.msg}",
                lineno=e.lineno,
                colno=e.colno,
            )
        if not isinstance(data, dict):
            raise ConfigError(f"CONFIG_PARSE: {path} 顶层必须是 JSON 对象", lineno=1, colno=1)

    data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = seed
    run_config = RunConfig.from_dict(data, source=path)
    logger.debug(f"运行配置已加载: source={path}, seed={run_config.seed}")
    return run_config


def resolve_workers(cli_workers: Optional[int], run_config: Optional[RunConfig] = None) -> int:
    """并行 worker 数：命令行 > 环境变量 MSQED_WORKERS > 运行配置 > 应用设置"""
    if cli_workers is not None:
        return max(1, int(cli_workers))
    env_value = os.environ.get("MSQED_WORKERS")
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            logger.warning(f"忽略无效的 MSQED_WORKERS: {env_value!r}")
    if run_config is not None and run_config.workers is not None:
        return max(1, run_config.workers)
    return max(1, int(config.get("default_workers", 1)))


# 全局配置实例
config = Config()
