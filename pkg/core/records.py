"""
MSQED Lab - 运行记录
run.json / timing.json / CSV 表格 / 场数组 npz 的原子写入
"""
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from loguru import logger

from .model import SpinorField, VectorPotential


SCHEMA_VERSION = 1


def to_jsonable(obj: Any) -> Any:
    """numpy 标量/数组、复数、Enum、dataclass 转为 JSON 可表示的对象"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        # JSON 没有 NaN/Infinity
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return to_jsonable(obj.to_dict())
        return to_jsonable(dataclasses.asdict(obj))
    return obj


def dumps(obj: Any) -> str:
    """键排序、浮点数取最短往返表示"""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False)


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path, obj: Any) -> Path:
    path = Path(path)
    _atomic_write(path, (dumps(obj) + "\n").encode("utf-8"))
    logger.debug(f"已写入 {path}")
    return path


def _format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def write_csv_atomic(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """浮点数按 %.17g 输出"""
    path = Path(path)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(list(header))
    count = 0
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"CSV_SHAPE: 行长度 {len(row)} 与表头 {len(header)} 不一致")
        writer.writerow([_format_cell(v) for v in row])
        count += 1
    _atomic_write(path, buffer.getvalue().encode("utf-8"))
    logger.debug(f"已写入 {path}（{count} 行）")
    return path


def config_hash(run_config) -> str:
    """规范 JSON 的 sha256"""
    data = run_config.to_dict() if hasattr(run_config, "to_dict") else run_config
    data = {k: v for k, v in to_jsonable(data).items() if k != "source"}
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_fields(path, u: SpinorField, A: VectorPotential, f=None) -> Path:
    """
    压缩 npz：u (2,N,N,N) 复数、A (3,N,N,N) 实数，以及偏振标架中的光子参数 f1, f2 (N,N,N)

    另存 L、N 以便重建网格。
    """
    path = Path(path)
    arrays = {"u": u.values, "A": A.values, "L": np.array(u.box.L), "N": np.array(u.box.N)}
    if f is not None:
        f1, f2 = f.components()
        arrays["f1"] = f1
        arrays["f2"] = f2
    buffer = io.BytesIO()
    np.savez_compressed(buffer, **arrays)
    _atomic_write(path, buffer.getvalue())
    logger.debug(f"已写入场数组 {path}")
    return path


def build_run_record(run_config, payload: Dict[str, Any], warnings: Optional[List[str]] = None) -> Dict[str, Any]:
    """run.json 的内容；不含耗时，重复运行逐字节一致"""
    config_dict = run_config.to_dict() if hasattr(run_config, "to_dict") else dict(run_config)
    config_dict = {k: v for k, v in config_dict.items() if k != "source"}
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config_dict,
        "config_hash": config_hash(run_config),
        "seed": config_dict.get("seed"),
        "payload": payload,
        "warnings": list(warnings or []),
    }
