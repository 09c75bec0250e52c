import unittest
from unittest.mock import patch
import sys
import os
import json
import tempfile
from enum import Enum
from pathlib import Path

import numpy as np

# Add project root to path
sys.path.append(os.getcwd())

# 应用设置写到临时目录
os.environ.setdefault("MSQED_HOME", tempfile.mkdtemp(prefix="msqed_home_"))

from loguru import logger

from utils.config import (
    Config,
    ConfigError,
    RunConfig,
    apply_overrides,
    config,
    load_run_config,
    parse_override,
    resolve_workers,
)
from utils.logger import log_manager
from core.spectral import SpectralBox
from core.model import SpinorField, VectorPotential
from core.quasiclassical import PhotonParameter
from core.records import (
    SCHEMA_VERSION,
    build_run_record,
    config_hash,
    dumps,
    to_jsonable,
    write_csv_atomic,
    write_fields,
    write_json_atomic,
)


class Color(Enum):
    RED = "red"


class TestRecords(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_to_jsonable(self):
        data = {
            "c": 1.5 - 2.0j,
            "nan": float("nan"),
            "inf": np.float64(np.inf),
            "i": np.int64(7),
            "b": np.bool_(True),
            "arr": np.array([0.25, 0.5]),
            "enum": Color.RED,
            "path": Path("runs/a"),
        }
        out = to_jsonable(data)
        self.assertEqual(out["c"], {"re": 1.5, "im": -2.0})
        self.assertIsNone(out["nan"])
        self.assertIsNone(out["inf"])
        self.assertEqual(out["i"], 7)
        self.assertIs(out["b"], True)
        self.assertEqual(out["arr"], [0.25, 0.5])
        self.assertEqual(out["enum"], "red")
        self.assertEqual(out["path"], str(Path("runs/a")))
        # 结果可被标准 JSON 严格解析
        json.loads(json.dumps(out, allow_nan=False))
        print("✅ Test 1 Passed: JSON Conversion")

    def test_write_json_sorted(self):
        path = write_json_atomic(self.dir / "sub" / "run.json", {"b": 1, "a": {"d": 2, "c": 0.1}})
        text = path.read_text(encoding="utf-8")
        self.assertLess(text.index('"a"'), text.index('"b"'))
        self.assertLess(text.index('"c"'), text.index('"d"'))
        self.assertEqual(json.loads(text)["a"]["c"], 0.1)
        self.assertEqual(text, dumps({"a": {"c": 0.1, "d": 2}, "b": 1}) + "\n")
        # 不留下临时文件
        self.assertEqual(sorted(p.name for p in path.parent.iterdir()), ["run.json"])
        print("✅ Test 2 Passed: Atomic Sorted JSON")

    def test_write_csv(self):
        path = write_csv_atomic(self.dir / "t.csv", ["x", "ok", "note"],
                                [[0.1 + 0.2, True, None], [np.float64(1.0 / 3.0), False, "a"]])
        lines = path.read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], "x,ok,note")
        self.assertEqual(lines[1], "0.30000000000000004,true,")
        self.assertEqual(float(lines[2].split(",")[0]), 1.0 / 3.0)

        with self.assertRaises(ValueError) as ctx:
            write_csv_atomic(self.dir / "bad.csv", ["x", "y"], [[1.0]])
        self.assertIn("CSV_SHAPE", str(ctx.exception))
        self.assertFalse((self.dir / "bad.csv").exists())
        print("✅ Test 3 Passed: CSV Precision")

    def test_config_hash(self):
        a = RunConfig.from_dict({"coupling": {"g": 0.05}}, source="a.json")
        b = RunConfig.from_dict({"coupling": {"g": 0.05}}, source="b.json")
        c = RunConfig.from_dict({"coupling": {"g": 0.06}})
        self.assertEqual(config_hash(a), config_hash(b))
        self.assertNotEqual(config_hash(a), config_hash(c))
        self.assertEqual(len(config_hash(a)), 64)
        print("✅ Test 4 Passed: Config Hash")

    def test_run_record(self):
        run_config = RunConfig.from_dict({"seed": 5}, source="x.json")
        record = build_run_record(run_config, {"value": 1.0}, ["WARNING: b", "WARNING: a"])
        self.assertEqual(record["schema_version"], SCHEMA_VERSION)
        self.assertEqual(record["seed"], 5)
        self.assertEqual(record["config_hash"], config_hash(run_config))
        self.assertNotIn("source", record["config"])
        self.assertNotIn("timing", record)
        self.assertEqual(dumps(record), dumps(build_run_record(run_config, {"value": 1.0},
                                                               ["WARNING: b", "WARNING: a"])))
        print("✅ Test 5 Passed: Run Record")

    def test_write_fields(self):
        box = SpectralBox(10.0, 8)
        u = SpinorField.from_scalar(box, np.exp(-box.r2)).normalize()
        A = VectorPotential.zeros(box)
        path = write_fields(self.dir / "fields.npz", u, A, PhotonParameter.zeros(box))
        with np.load(path) as data:
            self.assertEqual(set(data.files), {"u", "A", "L", "N", "f1", "f2"})
            self.assertEqual(data["u"].shape, (2, 8, 8, 8))
            self.assertEqual(data["A"].shape, (3, 8, 8, 8))
            self.assertEqual(float(data["L"]), 10.0)
            self.assertEqual(int(data["N"]), 8)
        print("✅ Test 6 Passed: Field Arrays")


class TestRunConfig(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_defaults(self):
        run_config = load_run_config()
        self.assertEqual(run_config.box, {"L": 12.0, "N": 48})
        self.assertEqual(run_config.seed, 0)
        self.assertIsNone(run_config.source)
        print("✅ Test 7 Passed: Default Run Config")

    def test_malformed_json(self):
        path = self.dir / "bad.json"
        path.write_text('{\n  "seed": 1,\n  "box": {"L": }\n}\n', encoding="utf-8")
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(str(path))
        self.assertIn("CONFIG_PARSE", str(ctx.exception))
        self.assertEqual(ctx.exception.lineno, 3)
        self.assertIsNotNone(ctx.exception.colno)

        with self.assertRaises(ConfigError) as ctx:
            load_run_config(str(self.dir / "missing.json"))
        self.assertIn("CONFIG_READ", str(ctx.exception))
        print("✅ Test 8 Passed: Malformed Config")

    def test_unknown_key(self):
        path = self.dir / "extra.json"
        path.write_text(json.dumps({"boxx": {"L": 1}}), encoding="utf-8")
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(str(path))
        self.assertIn("CONFIG_UNKNOWN_KEY", str(ctx.exception))
        with self.assertRaises(ConfigError) as ctx:
            RunConfig.from_dict({"seed": "abc"})
        self.assertIn("CONFIG_INVALID", str(ctx.exception))
        print("✅ Test 9 Passed: Unknown Keys Rejected")

    def test_overrides_and_seed(self):
        path = self.dir / "run.json"
        path.write_text(json.dumps({"coupling": {"g": 0.2}, "seed": 3}), encoding="utf-8")
        run_config = load_run_config(str(path), ["coupling.g=0.05", "potential.kind=gaussian-well",
                                                 "experiment.ladder=[2, 4]"], seed=9)
        self.assertEqual(run_config.coupling["g"], 0.05)
        self.assertIsNone(run_config.coupling["Lambda"])
        self.assertEqual(run_config.potential["kind"], "gaussian-well")
        self.assertEqual(run_config.potential["omega0"], 1.0)
        self.assertEqual(run_config.experiment["ladder"], [2, 4])
        self.assertEqual(run_config.seed, 9)
        self.assertEqual(run_config.source, str(path))
        print("✅ Test 10 Passed: Overrides And Seed")

    def test_parse_override(self):
        self.assertEqual(parse_override("coupling.g=0.05"), (["coupling", "g"], 0.05))
        self.assertEqual(parse_override("potential.kind=harmonic"), (["potential", "kind"], "harmonic"))
        self.assertEqual(parse_override("a.b=x=y"), (["a", "b"], "x=y"))
        for bad in ("coupling.g", "=1"):
            with self.assertRaises(ConfigError) as ctx:
                parse_override(bad)
            self.assertIn("CONFIG_OVERRIDE", str(ctx.exception))

        data = apply_overrides({"box": 1}, ["box.N=16"])
        self.assertEqual(data, {"box": {"N": 16}})
        print("✅ Test 11 Passed: Override Parsing")

    def test_resolve_workers(self):
        run_config = RunConfig.from_dict({"workers": 2})
        with patch.dict(os.environ, {"MSQED_WORKERS": "3"}):
            self.assertEqual(resolve_workers(5, run_config), 5)
            self.assertEqual(resolve_workers(None, run_config), 3)
        with patch.dict(os.environ, {"MSQED_WORKERS": "many"}):
            self.assertEqual(resolve_workers(None, run_config), 2)
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(resolve_workers(None, run_config), 2)
            self.assertEqual(resolve_workers(None, RunConfig.from_dict({})), max(1, config.get("default_workers", 1)))
            self.assertEqual(resolve_workers(0), 1)
        print("✅ Test 12 Passed: Worker Precedence")


class TestAppSettings(unittest.TestCase):
    def test_singleton(self):
        self.assertIs(Config(), config)
        self.assertEqual(config.get("output_dir"), "runs")
        print("✅ Test 13 Passed: Config Singleton")

    def test_recent_runs(self):
        with patch.object(config, "_save_config") as mock_save:
            before = list(config.get("recent_runs", []))
            config.add_recent_run("/tmp/a")
            config.add_recent_run("/tmp/b")
            config.add_recent_run("/tmp/a")
            recent = config.get("recent_runs")
            self.assertEqual(recent[:2], ["/tmp/a", "/tmp/b"])
            self.assertEqual(recent.count("/tmp/a"), 1)
            self.assertEqual(mock_save.call_count, 3)
            config.set("recent_runs", before, save=False)
        print("✅ Test 14 Passed: Recent Runs")

    def test_record_callback(self):
        captured = []
        log_manager.set_record_callback(lambda level, message: captured.append((level, message)))
        try:
            logger.info("不会被收集")
            logger.warning("收集这条警告")
        finally:
            log_manager.remove_record_callback()
        logger.warning("回调移除之后")
        self.assertEqual(captured, [("WARNING", "收集这条警告")])
        print("✅ Test 15 Passed: Log Record Callback")


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
