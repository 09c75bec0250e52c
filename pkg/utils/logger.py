"""
MSQED Lab - 日志系统
提供统一的日志记录功能，支持控制台、文件输出以及运行记录的警告收集
"""
import sys
from loguru import logger
from typing import Callable, Optional

from .config import config


CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
    "<level>{message}</level>"
)


class LogManager:
    """日志管理器"""

    _instance: Optional['LogManager'] = None
    _initialized: bool = False

    def __new__(cls) -> 'LogManager':
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if self._initialized:
            return

        self._initialized = True
        self._console_handler_id: Optional[int] = None
        self._record_handler_id: Optional[int] = None
        self._record_callback: Optional[Callable[[str, str], None]] = None
        self._setup_logger()

    def _setup_logger(self) -> None:
        """配置日志系统"""
        # 移除默认处理器
        logger.remove()

        self._add_console(config.get("log_level", "INFO"))

        # 文件输出
        log_dir = config.config_dir / "logs"
        log_dir.mkdir(exist_ok=True)

        logger.add(
            log_dir / "msqed_{time:YYYY-MM-DD}.log",
            level="DEBUG",
            format="{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} | {message}",
            rotation="00:00",  # 每天轮换
            retention="7 days",  # 保留7天
            compression="zip",  # 压缩旧日志
            encoding="utf-8",
        )

        logger.debug("日志系统初始化完成")

    def _add_console(self, level: str) -> None:
        """控制台输出（带颜色）"""
        if self._console_handler_id is not None:
            logger.remove(self._console_handler_id)
        self._console_handler_id = logger.add(
            sys.stderr,
            level=level,
            format=CONSOLE_FORMAT,
            colorize=True,
        )

    def set_record_callback(self, callback: Callable[[str, str], None]) -> None:
        """
        设置运行记录回调，WARNING 及以上的日志会写入运行记录

        Args:
            callback: 回调函数，接收 (level, message) 参数
        """
        self.remove_record_callback()
        self._record_callback = callback

        def record_sink(message):
            record = message.record
            if self._record_callback:
                self._record_callback(record["level"].name, record["message"])

        self._record_handler_id = logger.add(
            record_sink,
            level="WARNING",
            format="{message}",
        )

    def remove_record_callback(self) -> None:
        """移除运行记录回调"""
        if self._record_handler_id is not None:
            logger.remove(self._record_handler_id)
            self._record_handler_id = None
        self._record_callback = None

    def set_level(self, level: str) -> None:
        """设置控制台日志级别（仅当前进程）"""
        config.set("log_level", level, save=False)
        self._add_console(level)
        logger.debug(f"日志级别已设置为: {level}")


# 全局日志管理器实例
log_manager = LogManager()

# 导出logger供其他模块使用
__all__ = ['logger', 'log_manager', 'LogManager']
