import os
import pytest
from unittest import TestCase

import numpy as np
import pandas as pd

from turba.cli import main
from turba.runner import Runner, RunConfig
from turba.parameters import default_parameter_definition
from turba.utils import dump_yaml, load_json, load_yaml

from .conftest import OUTPUT_FOLDER


SMALL_RUN = {
    "network": {"n": 40, "k": 4},
    "calibration": {"method": "rejection", "n_draws": 12, "quantile": 0.5},
    "predictive": {"n_samples": 6},
}


def write_observed_inputs(folder):
    """Daily cases, search interest, R_t and survey rounds of a 30-day window."""
    os.makedirs(folder, exist_ok=True)
    dates = pd.date_range("2020-02-25", periods=40, freq="D")
    t = np.arange(40)
    cases = np.round(50 * np.exp(-(((t - 15) / 6) ** 2)))
    search = 20 + 60 * np.exp(-(((t - 18) / 8) ** 2))
    rt = 2.5 - 2.0 * t / 40
    days = dates.strftime("%Y-%m-%d")
    pd.DataFrame({"date": days, "cases": cases}).to_csv(
        os.path.join(folder, "cases.csv"), index=False
    )
    # one missing day, filled with the previous value
    pd.DataFrame({"date": days, "search": search}).drop(index=20).to_csv(
        os.path.join(folder, "search.csv"), index=False
    )
    pd.DataFrame({"date": days, "rt": rt}).to_csv(os.path.join(folder, "rt.csv"), index=False)
    pd.DataFrame(
        {"date": ["2020-03-05", "2020-03-15", "2020-03-25"], "pct": [30.0, 70.0, 50.0]}
    ).to_csv(os.path.join(folder, "survey.csv"), index=False)
    config = {
        "seed": 11,
        "threads": 1,
        "window": {"start": "2020-03-01", "end": "2020-03-30"},
        "data": {
            "cases": {"path": "cases.csv", "value_column": "cases"},
            "search": {"path": "search.csv", "value_column": "search"},
            "rt": {"path": "rt.csv"},
            "survey": {"path": "survey.csv"},
        },
        **SMALL_RUN,
    }
    path = os.path.join(folder, "observed.yaml")
    dump_yaml(config, path)
    return path


@pytest.mark.usefixtures("rm_output")
class TestRunner(TestCase):
    """Test of the Runner class."""

    @classmethod
    def setUp(cls):
        """Initialise the synthetic Runner."""
        cls.outputfolder = os.path.join(OUTPUT_FOLDER, "synthetic")
        cls.runner = Runner.from_config(
            "synthetic_recovery.yaml", outputfolder=cls.outputfolder, **SMALL_RUN
        )

    def test_config(self):
        """Test of the merged run configuration."""
        config = self.runner.config
        self.assertEqual(config.network["n"], 40)
        self.assertEqual(config.network["kind"], "watts_strogatz")
        self.assertEqual(config.calibration["method"], "rejection")
        self.assertEqual(config.window["start"], "2020-01-31")
        self.assertEqual(config.truth.alpha_p, 0.2)
        self.assertEqual(config.seeds(), RunConfig.from_config("synthetic_recovery.yaml").seeds())
        # threads and the output folder do not enter the hash
        other = Runner.from_config(
            "synthetic_recovery.yaml", outputfolder="elsewhere", threads=4, **SMALL_RUN
        )
        self.assertEqual(other.config.config_hash, config.config_hash)
        # the configuration round-trips through yaml
        path = os.path.join(OUTPUT_FOLDER, "round_trip.yaml")
        os.makedirs(OUTPUT_FOLDER, exist_ok=True)
        dump_yaml(config.to_dict(), path)
        self.assertEqual(
            RunConfig(**load_yaml(path), config_dir=config.config_dir).to_dict(), config.to_dict()
        )
        seeded = Runner.from_config("synthetic_recovery.yaml", seed=8, **SMALL_RUN)
        self.assertNotEqual(seeded.config.config_hash, config.config_hash)

    def test_inputs(self):
        """The signal is the normalized case series of the window."""
        inputs = self.runner.inputs
        self.assertEqual(len(inputs["signal"]), 150)
        self.assertEqual(inputs["signal"].values.max(), 1.0)
        self.assertEqual(len(inputs["obs"]), 150)
        self.assertIsNone(inputs["rt"])
        self.assertEqual(self.runner.network.n, 40)

    def test_simulate(self):
        """Equal configurations write byte-identical simulations."""
        folders = [os.path.join(OUTPUT_FOLDER, f"simulate_{i}") for i in range(2)]
        for folder in folders:
            runner = Runner.from_config(
                "synthetic_recovery.yaml", outputfolder=folder, **SMALL_RUN
            )
            written = runner.run("simulate", params_file="example_params.yaml")
            self.assertEqual(len(written), 6)
        channels = ("behaviour.csv", "emotion.csv", "perception.csv")
        for name in ("trajectory.csv", "signal.csv") + channels:
            with open(os.path.join(folders[0], name), "rb") as a:
                with open(os.path.join(folders[1], name), "rb") as b:
                    self.assertEqual(a.read(), b.read())
        signal = pd.read_csv(os.path.join(folders[0], "signal.csv"))
        self.assertEqual(len(signal), 150)
        self.assertEqual(signal["value"].max(), 1.0)
        metadata = load_json(os.path.join(folders[0], "metadata_simulate.json"))
        self.assertEqual(metadata["command"], "simulate")
        self.assertEqual(metadata["params"]["init_p"], 0.01)
        self.assertIn("sha256", metadata["inputs"]["cases"])
        self.assertIn("numpy", metadata["versions"])

    def test_calibrate_validate_report(self):
        """Calibrate, validate and report on synthetic observations."""
        written = self.runner.run("calibrate")
        names = {os.path.basename(path) for path in written}
        for name in (
            "posterior.csv",
            "bands_behaviour.csv",
            "bands_emotion.csv",
            "bands_perception.csv",
            "bands_raw_behaviour.csv",
            "observed_search.csv",
            "recovery.json",
            "signal.csv",
            "metadata_calibrate.json",
        ):
            self.assertIn(name, names)
        posterior = pd.read_csv(os.path.join(self.outputfolder, "posterior.csv"))
        self.assertEqual(len(posterior), 6)
        recovery = load_json(os.path.join(self.outputfolder, "recovery.json"))
        self.assertEqual(set(recovery["parameters"]), set(self.runner.config.prior.sampled))
        self.assertTrue(0 <= recovery["coverage"] <= 1)

        written = self.runner.run("validate")
        self.assertEqual(os.path.basename(written[-1]), "metadata_validate.json")
        validation = load_json(os.path.join(self.outputfolder, "validation.json"))
        self.assertEqual(validation["config_hash"], self.runner.config.config_hash)
        self.assertTrue(0 <= validation["coverage"] <= 1)
        self.assertIsNone(validation["pearson_r"])

        self.runner.run("report")
        report = load_json(os.path.join(self.outputfolder, "report.json"))
        self.assertIn("coverage", report["checks"])
        # every command keeps its own metadata in a shared folder
        for command in ("calibrate", "validate", "report"):
            metadata = load_json(os.path.join(self.outputfolder, f"metadata_{command}.json"))
            self.assertEqual(metadata["command"], command)
            self.assertEqual(metadata["config_hash"], self.runner.config.config_hash)
            self.assertIn("sha256", metadata["inputs"]["cases"])
            self.assertEqual(metadata["seeds"], self.runner.config.seeds())

        # validate and report into a fresh folder
        fresh = Runner.from_config(
            "synthetic_recovery.yaml",
            outputfolder=os.path.join(OUTPUT_FOLDER, "fresh"),
            **SMALL_RUN,
        )
        fresh.validate(bands_dir=self.outputfolder)
        fresh.report()
        for command in ("validate", "report"):
            metadata = load_json(os.path.join(fresh.outputfolder, f"metadata_{command}.json"))
            self.assertEqual(metadata["command"], command)
        metadata = load_json(os.path.join(fresh.outputfolder, "metadata_validate.json"))
        self.assertEqual(metadata["bands_dir"], os.path.abspath(self.outputfolder))
        self.assertFalse(
            os.path.exists(os.path.join(fresh.outputfolder, "metadata_calibrate.json"))
        )

        shorter = Runner.from_config(
            "synthetic_recovery.yaml",
            outputfolder=os.path.join(OUTPUT_FOLDER, "shorter"),
            window={"end": "2020-05-31"},
            **SMALL_RUN,
        )
        with self.assertRaises(ValueError):
            shorter.validate(bands_dir=self.outputfolder)

    def test_quantile_one(self):
        """The quantile 1 keeps every draw."""
        runner = Runner.from_config(
            "synthetic_recovery.yaml",
            outputfolder=os.path.join(OUTPUT_FOLDER, "quantile_one"),
            **{**SMALL_RUN, "calibration": {"method": "rejection", "n_draws": 5, "quantile": 1.0}},
        )
        runner.run("calibrate")
        posterior = pd.read_csv(os.path.join(runner.outputfolder, "posterior.csv"))
        self.assertEqual(len(posterior), 5)

    def test_threads(self):
        """The number of threads does not change the posterior."""
        folders = []
        for threads in (1, 4, 8):
            folder = os.path.join(OUTPUT_FOLDER, f"threads_{threads}")
            runner = Runner.from_config(
                "synthetic_recovery.yaml", outputfolder=folder, threads=threads, **SMALL_RUN
            )
            runner.run("calibrate")
            folders.append(folder)
        for name in ("posterior.csv", "bands_behaviour.csv", "bands_raw_perception.csv"):
            with open(os.path.join(folders[0], name), "rb") as a:
                first = a.read()
            for folder in folders[1:]:
                with open(os.path.join(folder, name), "rb") as b:
                    self.assertEqual(b.read(), first)

    def test_recovery_coverage(self):
        """The packaged synthetic configuration covers its own observations."""
        runner = Runner.from_config(
            "synthetic_recovery.yaml",
            outputfolder=os.path.join(OUTPUT_FOLDER, "recovery"),
            threads=4,
        )
        runner.run("calibrate")
        recovery = load_json(os.path.join(runner.outputfolder, "recovery.json"))
        self.assertGreaterEqual(recovery["coverage"], 0.9)
        self.assertEqual(recovery["coverage_target"], 0.9)

    def test_observed_inputs(self):
        """A full run on observed series, with R_t and survey rounds."""
        folder = os.path.join(OUTPUT_FOLDER, "observed")
        config_path = write_observed_inputs(folder)
        runner = Runner.from_config(config_path, outputfolder=folder)
        inputs = runner.inputs
        self.assertEqual(len(inputs["signal"]), 30)
        self.assertEqual(inputs["signal"].start_date, pd.Timestamp("2020-03-01"))
        self.assertEqual(len(inputs["survey"]), 3)
        written = runner.run("calibrate")
        self.assertIn(os.path.join(runner.outputfolder, "survey_transformed.csv"), written)
        survey = pd.read_csv(os.path.join(folder, "survey_transformed.csv"))
        self.assertEqual(list(survey.columns), ["date", "pct", "transformed"])
        self.assertEqual(len(survey), 3)
        # the input survey is left as it was
        original = pd.read_csv(os.path.join(folder, "survey.csv"))
        self.assertEqual(list(original.columns), ["date", "pct"])
        runner.run("validate")
        validation = load_json(os.path.join(folder, "validation.json"))
        self.assertEqual(validation["survey_n"], 3)
        self.assertTrue(-1 <= validation["pearson_r"] <= 1)
        self.assertEqual(validation["pearson_channel"], "raw_behaviour")
        runner.run("report")
        self.assertTrue(os.path.exists(os.path.join(folder, "report.json")))

    def test_errors(self):
        """Invalid configurations fail before any simulation."""
        definition = default_parameter_definition()
        definition["alpha_p"] = {"fit_limits": [0.5, 0.1]}
        with self.assertRaises(ValueError):
            RunConfig.from_config("synthetic_recovery.yaml", parameter_definition=definition)
        with self.assertRaises(ValueError):
            RunConfig.from_config("synthetic_recovery.yaml", seed=None)
        with self.assertRaises(ValueError):
            RunConfig.from_config("synthetic_recovery.yaml", threads=0)
        with self.assertRaises(ValueError):
            RunConfig.from_config("synthetic_recovery.yaml", calibration={"method": "mcmc"})
        with self.assertRaises(FileNotFoundError):
            RunConfig.from_config(
                "synthetic_recovery.yaml", data={"cases": {"path": "no_such_file.csv"}}
            )
        runner = Runner.from_config(
            "synthetic_recovery.yaml", outputfolder=os.path.join(OUTPUT_FOLDER, "empty")
        )
        with self.assertRaises(FileNotFoundError):
            runner.validate()
        with self.assertRaises(FileNotFoundError):
            runner.report()


@pytest.mark.usefixtures("rm_output")
class TestCli(TestCase):
    """Test of the command line interface."""

    def test_simulate(self):
        """Test of the simulate command."""
        out = os.path.join(OUTPUT_FOLDER, "cli")
        code = main(
            [
                "simulate",
                "--config",
                "synthetic_recovery.yaml",
                "--params",
                "example_params.yaml",
                "--out",
                out,
                "--seed",
                "3",
                "--threads",
                "2",
            ]
        )
        self.assertEqual(code, 0)
        self.assertEqual(load_json(os.path.join(out, "metadata_simulate.json"))["seed"], 3)

    def test_identity_params(self):
        """Identity dynamics write constant channels."""
        out = os.path.join(OUTPUT_FOLDER, "cli_identity")
        os.makedirs(out, exist_ok=True)
        params = os.path.join(out, "identity.yaml")
        dump_yaml({name: 0.0 for name in default_parameter_definition()}, params)
        code = main(
            ["simulate", "--config", "synthetic_recovery.yaml", "--params", params, "--out", out]
        )
        self.assertEqual(code, 0)
        behaviour = pd.read_csv(os.path.join(out, "behaviour.csv"))
        self.assertTrue(np.all(behaviour["value"] == 0))
        trajectory = pd.read_csv(os.path.join(out, "trajectory.csv"))
        self.assertTrue(np.all(trajectory["mean_b"] == 0))

    def test_failures(self):
        """Failures exit with code 1."""
        out = os.path.join(OUTPUT_FOLDER, "cli_failures")
        self.assertEqual(main(["simulate", "--config", "no_such_config.yaml"]), 1)
        self.assertEqual(main(["simulate", "--config", "synthetic_recovery.yaml", "--out", out]), 1)
        self.assertEqual(
            main(["validate", "--config", "synthetic_recovery.yaml", "--out", out]), 1
        )
        self.assertEqual(
            main(["simulate", "--config", "synthetic_recovery.yaml", "--seed", "-1"]), 1
        )
        with self.assertRaises(SystemExit):
            main(["fit", "--config", "synthetic_recovery.yaml"])
