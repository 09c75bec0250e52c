import unittest
from unittest.mock import MagicMock, patch
import sys
import os
import io
import json
import tempfile
from contextlib import redirect_stdout
from pathlib import Path

# Add project root to path
sys.path.append(os.getcwd())

# 应用设置写到临时目录
os.environ.setdefault("MSQED_HOME", tempfile.mkdtemp(prefix="msqed_home_"))

from loguru import logger

from utils.config import ConfigError, RunConfig
from core.spectral import SpectralBox
from core.solver import ConvergenceError
from core.experiments import SweepError
from core.run_manager import Artifacts, HypothesisGateError, RunManager, RunOptions, RunState
from core.verify_suites import SuiteReport, hermite_oracle, run_suites
import main


SMALL_BOX = {"box": {"L": 10.0, "N": 16}}


def gate_report(passed):
    report = MagicMock()
    report.passed = passed
    report.issues = [] if passed else ["V_NOT_EVEN"]
    report.to_dict.return_value = {"passed": passed}
    return report


class TestRunManager(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name) / "run"
        self.manager = RunManager()
        self.states = []
        self.manager.set_progress_callback(lambda p: self.states.append(p.state))
        self.run_config = RunConfig.from_dict(SMALL_BOX)
        recent = patch('core.run_manager.config.add_recent_run')
        self.mock_recent = recent.start()
        self.addCleanup(recent.stop)

    def tearDown(self):
        self.tmp.cleanup()

    def options(self, force=False, experiment="minimize"):
        return RunOptions(run_config=self.run_config, experiment=experiment, out_dir=str(self.out), force=force)

    def test_unknown_experiment(self):
        with self.assertRaises(ValueError) as ctx:
            self.manager.execute(self.options(experiment="anneal"))
        self.assertIn("EXPERIMENT_UNKNOWN", str(ctx.exception))
        print("✅ Test 1 Passed: Unknown Experiment")

    @patch('core.run_manager.hypothesis_report')
    def test_hypothesis_gate(self, mock_report):
        mock_report.return_value = gate_report(False)
        handler = MagicMock()
        self.manager._handlers["minimize"] = handler
        with self.assertRaises(HypothesisGateError) as ctx:
            self.manager.execute(self.options())
        self.assertIn("HYPOTHESIS_GATE", str(ctx.exception))
        self.assertIs(ctx.exception.report, mock_report.return_value)
        handler.assert_not_called()
        self.assertFalse((self.out / "run.json").exists())
        self.assertEqual(self.states[-1], RunState.FAILED)
        print("✅ Test 2 Passed: Hypothesis Gate")

    @patch('core.run_manager.hypothesis_report')
    def test_forced_run_writes_records(self, mock_report):
        mock_report.return_value = gate_report(False)

        def handler(ctx):
            logger.warning("测试警告")
            return Artifacts(payload={"value": 1.5},
                             tables={"demo": (["a", "b"], [[1, 0.5]])},
                             plotdata={"curve": (["x", "y"], [[0.0, 1.0], [1.0, 2.0]])})

        self.manager._handlers["minimize"] = handler
        messages = []
        sink = logger.add(lambda m: messages.append(m.record["message"]), level="INFO")
        try:
            outcome = self.manager.execute(self.options(force=True))
        finally:
            logger.remove(sink)
        # 运行日志只走 loguru
        self.assertTrue(any(m.startswith("运行完成") for m in messages))
        self.assertFalse(hasattr(self.manager, "set_log_callback"))

        record = json.loads((self.out / "run.json").read_text(encoding="utf-8"))
        self.assertEqual(record["payload"]["value"], 1.5)
        self.assertEqual(record["payload"]["status"], "ok")
        self.assertEqual(record["payload"]["hypothesis"], {"passed": False})
        self.assertNotIn("timing", record)
        self.assertTrue(any("测试警告" in w for w in record["warnings"]))
        self.assertTrue(any("--force" in w for w in record["warnings"]))
        self.assertEqual(record["warnings"], sorted(record["warnings"]))

        timing = json.loads((self.out / "timing.json").read_text(encoding="utf-8"))
        self.assertIn("total", timing)
        self.assertTrue((self.out / "tables" / "demo.csv").exists())
        self.assertTrue((self.out / "plotdata" / "curve.csv").exists())
        self.assertEqual(outcome.record["payload"]["value"], 1.5)
        self.mock_recent.assert_called_once()
        self.assertEqual(self.states, [RunState.PREPARING, RunState.CHECKING, RunState.RUNNING,
                                       RunState.WRITING, RunState.COMPLETED])
        print("✅ Test 3 Passed: Forced Run Records")

    @patch('core.run_manager.hypothesis_report')
    def test_numerical_failure_record(self, mock_report):
        mock_report.return_value = gate_report(True)
        error = ConvergenceError("DESCENT_STALL: 能量上升", diagnostics={"residual_A": 1.0, "energy_history": [1, 2]})
        self.manager._handlers["minimize"] = MagicMock(side_effect=error)
        with self.assertRaises(ConvergenceError):
            self.manager.execute(self.options())
        record = json.loads((self.out / "run.json").read_text(encoding="utf-8"))
        self.assertEqual(record["payload"]["status"], "failed")
        self.assertIn("DESCENT_STALL", record["payload"]["error"])
        self.assertEqual(record["payload"]["diagnostics"], {"residual_A": 1.0})
        self.assertFalse((self.out / "timing.json").exists())
        self.mock_recent.assert_not_called()
        print("✅ Test 4 Passed: Numerical Failure Record")

    @patch('core.run_manager.hypothesis_report')
    def test_sweep_failure_record(self, mock_report):
        mock_report.return_value = gate_report(True)
        self.manager._handlers["uv-sweep"] = MagicMock(side_effect=SweepError("SWEEP_MEMBER_FAILED: Λ=4"))
        with self.assertRaises(SweepError):
            self.manager.execute(self.options(experiment="uv-sweep"))
        record = json.loads((self.out / "run.json").read_text(encoding="utf-8"))
        self.assertEqual(record["payload"]["experiment"], "uv-sweep")
        self.assertNotIn("diagnostics", record["payload"])
        print("✅ Test 5 Passed: Sweep Failure Record")


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_parser(self):
        parser = main.build_parser()
        with redirect_stdout(io.StringIO()), patch('sys.stderr', new_callable=io.StringIO):
            with self.assertRaises(SystemExit) as ctx:
                parser.parse_args(["verify", "nonsense"])
        self.assertEqual(ctx.exception.code, 2)
        args = parser.parse_args(["run", "gap", "--set", "seed=3", "--g", "0.05", "--ladder", "2,4"])
        self.assertEqual(main.convenience_overrides(args),
                         ["seed=3", "coupling.g=0.05", "experiment.ladder=[2.0, 4.0]"])

        bad = parser.parse_args(["run", "uv-sweep", "--ladder", "2,x"])
        with self.assertRaises(ConfigError):
            main.convenience_overrides(bad)
        print("✅ Test 6 Passed: Argument Parsing")

    def test_config_errors_exit_2(self):
        path = self.dir / "bad.json"
        path.write_text("{ nope", encoding="utf-8")
        self.assertEqual(main.main(["run", "minimize", "--config", str(path)]), main.EXIT_USAGE)
        self.assertEqual(main.main(["run", "uv-sweep", "--ladder", "2,x"]), main.EXIT_USAGE)
        print("✅ Test 7 Passed: Config Errors Exit 2")

    @patch('main.run_manager')
    def test_run_exit_codes(self, mock_manager):
        cases = [
            (HypothesisGateError("HYPOTHESIS_GATE: x"), main.EXIT_GATE),
            (ConvergenceError("DESCENT_STALL: x"), main.EXIT_NUMERICAL),
            (SweepError("SWEEP_MEMBER_FAILED: x"), main.EXIT_NUMERICAL),
            (ValueError("BOX_INVALID: x"), main.EXIT_USAGE),
        ]
        for error, code in cases:
            mock_manager.execute.side_effect = error
            self.assertEqual(main.main(["run", "minimize", "--out", str(self.dir)]), code)

        mock_manager.execute.side_effect = None
        mock_manager.execute.return_value = MagicMock(out_dir=self.dir)
        self.assertEqual(main.main(["run", "minimize", "--out", str(self.dir), "--g", "0.02", "--workers", "2"]),
                         main.EXIT_OK)
        options = mock_manager.execute.call_args[0][0]
        self.assertEqual(options.run_config.coupling["g"], 0.02)
        self.assertEqual(options.workers, 2)
        self.assertEqual(options.out_dir, str(self.dir))
        print("✅ Test 8 Passed: Run Exit Codes")

    @patch('main.run_suites')
    def test_verify_writes_report(self, mock_suites):
        passing = SuiteReport("fock")
        passing.check("ccr_residual", 1e-15, 1e-12, True)
        mock_suites.return_value = [passing]
        with redirect_stdout(io.StringIO()) as stdout:
            code = main.main(["verify", "fock", "--out", str(self.dir)])
        self.assertEqual(code, main.EXIT_OK)
        summary = json.loads((self.dir / "verify_fock.json").read_text(encoding="utf-8"))
        self.assertTrue(summary["passed"])
        self.assertEqual(json.loads(stdout.getvalue()), summary)

        failing = SuiteReport("fock")
        failing.check("ccr_residual", 1e-3, 1e-12, False)
        mock_suites.return_value = [failing]
        with redirect_stdout(io.StringIO()):
            self.assertEqual(main.main(["verify", "fock"]), main.EXIT_FAILED)
        print("✅ Test 9 Passed: Verify Report")


class TestVerifySuites(unittest.TestCase):
    def test_suite_report(self):
        report = SuiteReport("demo")
        self.assertFalse(report.passed)
        self.assertTrue(report.check("a", 0.5, 1.0, True))
        self.assertFalse(report.check("b", None, 1.0, True))
        self.assertFalse(report.passed)
        self.assertEqual([c["name"] for c in report.to_dict()["criteria"]], ["a", "b"])
        print("✅ Test 10 Passed: Suite Report")

    def test_hermite_oracle(self):
        self.assertAlmostEqual(hermite_oracle(SpectralBox(12.0, 32)), 3.0, delta=1e-6)
        self.assertAlmostEqual(hermite_oracle(SpectralBox(12.0, 32), omega0=2.0), 6.0, delta=1e-5)
        print("✅ Test 11 Passed: Harmonic Oracle")

    def test_unknown_suite(self):
        with self.assertRaises(ValueError) as ctx:
            run_suites("everything", RunConfig.from_dict(SMALL_BOX))
        self.assertIn("SUITE_UNKNOWN", str(ctx.exception))
        print("✅ Test 12 Passed: Unknown Suite")


class TestEndToEnd(unittest.TestCase):
    def test_minimize_run_is_reproducible(self):
        with tempfile.TemporaryDirectory() as tmp, patch('core.run_manager.config.add_recent_run'):
            texts = []
            for name in ("first", "second"):
                out = Path(tmp) / name
                argv = ["run", "minimize", "--g", "0", "--set", "box.N=16", "--set", "box.L=10",
                        "--seed", "4", "--out", str(out), "--quiet"]
                self.assertEqual(main.main(argv), main.EXIT_OK)
                texts.append((out / "run.json").read_bytes())
                self.assertTrue((out / "timing.json").exists())
                self.assertTrue((out / "fields.npz").exists())
                self.assertTrue((out / "plotdata" / "energy_history.csv").exists())
            self.assertEqual(texts[0], texts[1])
            record = json.loads(texts[0])
            self.assertEqual(record["seed"], 4)
            self.assertEqual(record["payload"]["minimizer"]["iterations"], 0)
            self.assertAlmostEqual(record["payload"]["minimizer"]["E_V"],
                                   hermite_oracle(SpectralBox(10.0, 16)), delta=1e-5)
        print("✅ Test 13 Passed: Reproducible Minimize Run")


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
