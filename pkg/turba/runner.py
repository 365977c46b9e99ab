import os
import time
import logging
import datetime
from copy import deepcopy
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from mergedeep import merge, Strategy

from turba.calibration import (
    PosteriorEnsemble,
    abc_rejection,
    abc_smc,
    distance,
    posterior_predictive,
    recovery_summary,
)
from turba.data import (
    DEFAULT_WINDOW,
    ExternalSignal,
    align,
    load_daily_csv,
    load_rt_csv,
    load_survey_csv,
    min_max_normalize,
    smooth_centered,
    transform_survey,
    write_daily_csv,
    write_survey_csv,
)
from turba.metrics import RT_SPLIT_DATE, coverage_fraction, directional_checks, validation_report
from turba.model import CollectiveBehaviourModel
from turba.network import SocialNetwork, network_from_config
from turba.parameters import Parameters, default_parameter_definition
from turba.simulators import (
    CHANNELS,
    QUANTILE_METHOD,
    SummaryBands,
    observable_transform,
    run_ensemble,
    run_simulation,
    store_trajectories,
)
from turba.utils import (
    check_seed,
    derive_seed,
    deterministic_hash,
    dump_json,
    file_hash,
    get_file_path,
    load_json,
    load_yaml,
    package_versions,
)


DATA_SERIES = ("cases", "search", "rt", "survey")
DEFAULT_DATA = {
    "cases": {"date_column": "date", "value_column": "cases", "fill": "zero"},
    "search": {"date_column": "date", "value_column": "search", "fill": "previous"},
    "rt": {"date_column": "date", "value_column": "rt", "fill": None},
    "survey": {"date_column": "date", "value_column": "pct"},
}
DEFAULT_NETWORK = {"kind": "watts_strogatz", "n": 2000, "k": 10, "beta": 0.1}
DEFAULT_CALIBRATION = {
    "method": "smc",
    "pop_size": 500,
    "n_stages": 4,
    "quantile": 0.3,
    "epsilons": None,
    "n_draws": 1000,
    "epsilon": None,
    "max_simulations": None,
}
DEFAULT_PREDICTIVE = {"n_samples": None, "uncertainty": "both", "store_trajectories": False}
DEFAULT_VALIDATION = {"rt_split_date": RT_SPLIT_DATE, "n_permutations": 0}

# keys of the seeds derived from the top-level seed
SEED_KEYS = {"network": 1, "calibration": 2, "predictive": 3, "synthetic": 4, "simulate": 5}


def _normalize(obj):
    """Turn dates parsed by yaml into ISO strings and tuples into lists."""
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, (datetime.date, datetime.datetime)):
        return obj.strftime("%Y-%m-%d")
    return obj


class RunConfig:
    """Configuration of a run, read from a YAML file.

    Attributes:
        seed (int): the top-level seed, every random stream derives from it.
        threads (int): number of worker threads, never changes results.
        outputfolder (str): where outputs are written.
        window (dict): start and end of the study window.
        data (dict): per input series: path, date_column, value_column, fill, smooth.
        network (dict): arguments of generate_network, or an edge_list.
        parameter_definition (dict): priors, see Parameters.from_config.
        calibration (dict): method (smc or rejection) and its settings.
        predictive (dict): n_samples, uncertainty and store_trajectories.
        validation (dict): rt_split_date and n_permutations.
        synthetic (dict): params generating a synthetic search series, optional.
        config_dir (str): relative paths are searched here first.

    Raises:
        ValueError: if the seed is missing, the window is empty or a section is invalid.
        FileNotFoundError: if a referenced input file does not exist.

    """

    def __init__(
        self,
        seed: Optional[int] = None,
        threads: int = 1,
        outputfolder: str = "output",
        window: Optional[dict] = None,
        data: Optional[dict] = None,
        network: Optional[dict] = None,
        parameter_definition: Optional[dict] = None,
        calibration: Optional[dict] = None,
        predictive: Optional[dict] = None,
        validation: Optional[dict] = None,
        synthetic: Optional[dict] = None,
        config_dir: str = ".",
        loglevel: str = "INFO",
    ):
        self.seed = check_seed(seed)
        if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
            raise ValueError(f"threads should be a positive integer, not {threads!r}.")
        self.threads = threads
        self.outputfolder = outputfolder
        self.config_dir = config_dir
        self.loglevel = loglevel

        window = _normalize(window or {})
        self.window = {
            "start": window.get("start", DEFAULT_WINDOW[0]),
            "end": window.get("end", DEFAULT_WINDOW[1]),
        }
        if pd.Timestamp(self.window["start"]) > pd.Timestamp(self.window["end"]):
            raise ValueError(f"The window {self.window} is empty.")

        data = _normalize(data or {})
        unknown = set(data) - set(DATA_SERIES)
        if unknown:
            raise ValueError(f"Unknown data series {sorted(unknown)}, choose from {DATA_SERIES}.")
        self.data = {name: {**DEFAULT_DATA[name], **spec} for name, spec in data.items()}
        for name, spec in self.data.items():
            if "path" not in spec:
                raise ValueError(f"Data series {name} needs a path.")
            # fails early on missing files
            self.input_path(name)
        if "cases" not in self.data:
            raise ValueError("The cases series is required, it drives the model.")

        self.network = {**DEFAULT_NETWORK, **_normalize(network or {})}
        if "edge_list" in self.network:
            self.network = {k: v for k, v in self.network.items() if k in ("edge_list", "n")}
        self.parameter_definition = _normalize(
            parameter_definition or default_parameter_definition()
        )
        # validates the priors before any simulation
        self.prior = Parameters.from_config(self.parameter_definition)

        self.calibration = {**DEFAULT_CALIBRATION, **_normalize(calibration or {})}
        if self.calibration["method"] not in ("smc", "rejection"):
            raise ValueError(
                f"Unknown calibration method {self.calibration['method']}, "
                "choose from smc or rejection."
            )
        self.predictive = {**DEFAULT_PREDICTIVE, **_normalize(predictive or {})}
        self.validation = {**DEFAULT_VALIDATION, **_normalize(validation or {})}

        self.synthetic = _normalize(synthetic) if synthetic else None
        if self.synthetic is not None:
            if "params" not in self.synthetic:
                raise ValueError("The synthetic section needs params.")
            self.truth = self.prior(**self.synthetic["params"])
        elif "search" not in self.data:
            raise ValueError("The search series is required unless synthetic params are given.")

    @classmethod
    def from_config(
        cls,
        config_file_path: str,
        fill: Optional[str] = None,
        smooth_search: bool = False,
        **kwargs,
    ) -> "RunConfig":
        """Read a YAML config, kwargs are deep-merged over it and win.

        Args:
            config_file_path (str): path to the yaml config file.
            fill (str, optional (default=None)): fill policy of the cases and search series
                present in the config, overriding theirs.
            smooth_search (bool, optional (default=False)): switch on search smoothing.

        Returns:
            RunConfig: the configuration.

        """
        path = get_file_path(config_file_path)
        config = _normalize(load_yaml(path) or {})
        config = merge({}, config, _normalize(kwargs), strategy=Strategy.REPLACE)
        data = config.setdefault("data", {})
        for name in ("cases", "search"):
            if fill is not None and name in data:
                data[name]["fill"] = fill
        if smooth_search and "search" in data:
            data["search"]["smooth"] = True
        config.setdefault("config_dir", os.path.dirname(os.path.abspath(path)))
        return cls(**config)

    def to_dict(self) -> Dict[str, Any]:
        """The configuration, without the location of the config file."""
        config = {
            "seed": self.seed,
            "threads": self.threads,
            "outputfolder": self.outputfolder,
            "window": deepcopy(self.window),
            "data": deepcopy(self.data),
            "network": deepcopy(self.network),
            "parameter_definition": deepcopy(self.parameter_definition),
            "calibration": deepcopy(self.calibration),
            "predictive": deepcopy(self.predictive),
            "validation": deepcopy(self.validation),
        }
        if self.synthetic is not None:
            config["synthetic"] = deepcopy(self.synthetic)
        return config

    @property
    def config_hash(self) -> str:
        # threads and outputfolder do not change results
        config = self.to_dict()
        config.pop("threads")
        config.pop("outputfolder")
        return deterministic_hash(config)

    def input_path(self, name: str) -> str:
        return get_file_path(self.data[name]["path"], [self.config_dir])

    def seeds(self) -> Dict[str, int]:
        return {key: derive_seed(self.seed, k) for key, k in SEED_KEYS.items()}


class Runner:
    """Runner executes the commands of a run configuration.

        - load, align and normalize the inputs
        - build the social network
        - simulate, calibrate, validate and report
        - write every output with a metadata file

    Attributes:
        config (RunConfig): the configuration.
        outputfolder (str): absolute path of the output folder.

    Args:
        config (RunConfig): the configuration.
        outputfolder (str, optional (default=None)): overrides config.outputfolder.

    """

    logging = logging.getLogger("turba.runner")

    def __init__(self, config: RunConfig, outputfolder: Optional[str] = None):
        """Initialize the runner."""
        self.config = config
        self.logging.setLevel(getattr(logging, config.loglevel.upper()))
        self.outputfolder = os.path.abspath(outputfolder or config.outputfolder)
        self._inputs: Optional[Dict[str, Any]] = None
        self._network: Optional[SocialNetwork] = None

    @classmethod
    def from_config(cls, config_file_path: str, outputfolder: Optional[str] = None, **kwargs):
        return cls(RunConfig.from_config(config_file_path, **kwargs), outputfolder)

    def _output(self, file_name: str) -> str:
        os.makedirs(self.outputfolder, exist_ok=True)
        return os.path.join(self.outputfolder, file_name)

    @property
    def network(self) -> SocialNetwork:
        if self._network is None:
            self._network = network_from_config(
                self.config.network, self.config.seeds()["network"], [self.config.config_dir]
            )
            self.logging.info(f"Built network {self._network}")
        return self._network

    def _load(self, name: str):
        spec = self.config.data[name]
        path = self.config.input_path(name)
        window = (self.config.window["start"], self.config.window["end"])
        if name == "survey":
            survey = load_survey_csv(path, spec["date_column"], spec["value_column"])
            # the transform is recomputed over the rounds inside the window
            points = [
                (d, p)
                for d, p in zip(survey.dates, survey.pct)
                if pd.Timestamp(window[0]) <= d <= pd.Timestamp(window[1])
            ]
            return transform_survey(points)
        if name == "rt":
            return load_rt_csv(
                path, spec["date_column"], spec["value_column"], window, spec["fill"]
            )
        return load_daily_csv(
            path, spec["date_column"], spec["value_column"], window, spec["fill"], label=name
        )

    @property
    def inputs(self) -> Dict[str, Any]:
        """Normalized signal, observed search series, R_t and survey."""
        if self._inputs is None:
            inputs: Dict[str, Any] = {}
            cases = self._load("cases")
            search = self._load("search") if "search" in self.config.data else None
            if search is not None:
                cases, search = align(cases, search)
                if self.config.data["search"].get("smooth", False):
                    search = smooth_centered(search)
            inputs["signal"] = min_max_normalize(cases)
            if self.config.synthetic is not None:
                inputs["obs"] = self.synthetic_observations(inputs["signal"])
            else:
                inputs["obs"] = min_max_normalize(search)
            inputs["rt"] = self._load("rt") if "rt" in self.config.data else None
            inputs["survey"] = self._load("survey") if "survey" in self.config.data else None
            self._inputs = inputs
        return self._inputs

    def synthetic_observations(self, signal: ExternalSignal) -> ExternalSignal:
        """Behaviour observable of one run at the synthetic parameters."""
        trajectory = CollectiveBehaviourModel(
            self.config.prior, self.network, signal
        ).generate_data(self.config.seeds()["synthetic"], **self.config.synthetic["params"])
        obs = observable_transform(trajectory, "behaviour")
        return ExternalSignal(obs.start_date, obs.values, "synthetic_search")

    def metadata(self, command: str, **extra) -> Dict[str, Any]:
        """Everything needed to re-run a command bit-identically, without timestamps."""
        inputs = {
            name: {"path": spec["path"], "sha256": file_hash(self.config.input_path(name))}
            for name, spec in self.config.data.items()
        }
        metadata = {
            "command": command,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash,
            "seed": self.config.seed,
            "seeds": self.config.seeds(),
            "inputs": inputs,
            "versions": package_versions(),
            "normalization": "min-max over the study window",
            "observables": {
                "behaviour": "min-max",
                "emotion": "sqrt of min-max",
                "perception": "min-max",
            },
            "smoothing": "centered 7-day mean"
            if self.config.data.get("search", {}).get("smooth", False)
            else "none",
            "fill": {name: spec.get("fill") for name, spec in self.config.data.items()},
        }
        metadata.update(extra)
        return metadata

    def write_metadata(self, command: str, **extra) -> str:
        """Write metadata_<command>.json to the output folder."""
        path = self._output(f"metadata_{command}.json")
        print(f"Saving {path}")
        dump_json(self.metadata(command, **extra), path)
        return path

    def write_inputs(self) -> List[str]:
        """Write the normalized signal and, if configured, the transformed survey."""
        path = self._output("signal.csv")
        write_daily_csv(self.inputs["signal"], path)
        written = [path]
        if self.inputs["survey"] is not None:
            path = self._output("survey_transformed.csv")
            write_survey_csv(self.inputs["survey"], path)
            written.append(path)
        return written

    def simulate(self, params_file: str) -> List[str]:
        """Simulate once at the parameters of params_file.

        Writes trajectory.csv with the population means, one observable CSV per channel, the
        normalized signal in signal.csv and metadata_simulate.json.

        Args:
            params_file (str): YAML mapping of parameter values, pinned ones may be omitted.

        Returns:
            list: paths of the written files.

        """
        values = load_yaml(get_file_path(params_file, [self.config.config_dir]))
        if not isinstance(values, dict):
            raise ValueError(f"{params_file} should hold a mapping of parameter values.")
        params = self.config.prior(**_normalize(values))
        signal = self.inputs["signal"]
        seed = self.config.seeds()["simulate"]
        # explicit values may lie outside the prior ranges
        trajectory = run_simulation(params, self.network, signal, seed)

        written = []
        path = self._output("trajectory.csv")
        print(f"Saving {path}")
        pd.DataFrame(
            {
                "date": trajectory.dates.strftime("%Y-%m-%d"),
                "mean_p": trajectory.mean_p,
                "mean_e": trajectory.mean_e,
                "mean_b": trajectory.mean_b,
            }
        ).to_csv(path, index=False, float_format="%.17g")
        written.append(path)
        for channel in CHANNELS:
            path = self._output(f"{channel}.csv")
            write_daily_csv(observable_transform(trajectory, channel), path)
            written.append(path)
        written += self.write_inputs()
        written.append(
            self.write_metadata(
                "simulate",
                params=params.to_dict(),
                simulation_seed=seed,
                network=self.network.summary(),
            )
        )
        return written

    def _posterior(self) -> PosteriorEnsemble:
        settings = self.config.calibration
        signal, obs = self.inputs["signal"], self.inputs["obs"]
        base_seed = self.config.seeds()["calibration"]
        if settings["method"] == "rejection":
            quantile = settings.get("quantile") if settings.get("epsilon") is None else None
            return abc_rejection(
                self.config.prior,
                obs,
                self.network,
                signal,
                settings["n_draws"],
                epsilon=settings.get("epsilon"),
                quantile=quantile,
                base_seed=base_seed,
                threads=self.config.threads,
                loglevel=self.config.loglevel,
            )
        return abc_smc(
            self.config.prior,
            obs,
            self.network,
            signal,
            settings["pop_size"],
            base_seed=base_seed,
            epsilons=settings.get("epsilons"),
            quantile=settings["quantile"],
            n_stages=settings["n_stages"],
            threads=self.config.threads,
            max_simulations=settings.get("max_simulations"),
            loglevel=self.config.loglevel,
        )

    def calibrate(self) -> List[str]:
        """Fit the priors to the observed search series and emit predictive bands.

        Writes posterior.csv, bands_<channel>.csv for every channel and for the untransformed
        mean behaviour, observed_search.csv, signal.csv, survey_transformed.csv when a survey is
        configured, metadata_calibrate.json and, for synthetic configurations, recovery.json.

        """
        post = self._posterior()
        signal, obs = self.inputs["signal"], self.inputs["obs"]
        predictive = self.config.predictive
        seed = self.config.seeds()["predictive"]
        result = posterior_predictive(
            post,
            self.network,
            signal,
            seed,
            n_samples=predictive.get("n_samples"),
            uncertainty=predictive["uncertainty"],
            threads=self.config.threads,
            raw=True,
        )

        written = []
        path = self._output("posterior.csv")
        post.write_csv(path)
        written.append(path)
        for channel, bands in result.items():
            path = self._output(f"bands_{channel}.csv")
            bands.write_csv(path)
            written.append(path)
        path = self._output("observed_search.csv")
        write_daily_csv(obs, path)
        written.append(path)
        written += self.write_inputs()

        if predictive.get("store_trajectories", False):
            path = self._output("trajectories.h5")
            draws = [post.draws[int(i)] for i in np.argsort(post.distances, kind="stable")]
            _, trajectories = run_ensemble(
                draws if len(draws) > 1 else draws * 2,
                self.network,
                signal,
                seed,
                threads=self.config.threads,
                return_trajectories=True,
            )
            store_trajectories(path, trajectories, {"config_hash": self.config.config_hash})
            written.append(path)

        coverage = coverage_fraction(obs, result["behaviour"])
        self.logging.info(f"Coverage of the fitted series by the 95% band: {coverage:.3f}")
        if self.config.synthetic is not None:
            truth = self.config.truth
            model = CollectiveBehaviourModel(self.config.prior, self.network, signal)
            replay = model.observable(self.config.seeds()["synthetic"], **truth.to_dict())
            recovery = {
                "parameters": recovery_summary(post, truth, self.config.prior),
                "coverage": coverage,
                "coverage_target": 0.9,
                "truth_distance": distance(replay, obs),
                "final_epsilon": post.final_epsilon,
            }
            path = self._output("recovery.json")
            print(f"Saving {path}")
            dump_json(recovery, path)
            written.append(path)

        written.append(
            self.write_metadata(
                "calibrate",
                posterior=post.metadata(),
                distance="rmse",
                fitted_channel="behaviour",
                quantile_method=QUANTILE_METHOD,
                uncertainty=predictive["uncertainty"],
                network=self.network.summary(),
            )
        )
        return written

    def validate(self, bands_dir: Optional[str] = None) -> List[str]:
        """Validation report of bands previously written by calibrate.

        Args:
            bands_dir (str, optional (default=None)): folder of the bands, the output folder
                by default.

        Raises:
            FileNotFoundError: if a band file is missing.

        """
        bands_dir = bands_dir or self.outputfolder
        bands: Dict[str, SummaryBands] = {}
        for channel in ("behaviour", "perception", "raw_behaviour"):
            path = os.path.join(bands_dir, f"bands_{channel}.csv")
            if os.path.exists(path):
                bands[channel] = SummaryBands.from_csv(path, channel)
            elif channel != "raw_behaviour":
                raise FileNotFoundError(f"Bands file {path} does not exist, run calibrate first.")

        report = validation_report(
            self.inputs["obs"],
            bands,
            survey=self.inputs["survey"],
            rt=self.inputs["rt"],
            split_date=self.config.validation["rt_split_date"],
            config_hash=self.config.config_hash,
            n_permutations=self.config.validation["n_permutations"],
            seed=self.config.seed,
        )
        path = self._output("validation.json")
        print(f"Saving {path}")
        dump_json(report, path)
        metadata = self.write_metadata(
            "validate",
            bands_dir=os.path.abspath(bands_dir),
            bands=sorted(bands),
        )
        return [path, metadata]

    def report(self, validation_file: Optional[str] = None) -> List[str]:
        """Print the validation statistics next to the published values, write report.json."""
        validation_file = validation_file or self._output("validation.json")
        if not os.path.exists(validation_file):
            raise FileNotFoundError(
                f"Validation report {validation_file} does not exist, run validate first."
            )
        validation = load_json(validation_file)
        checks = directional_checks(validation)
        table = pd.DataFrame(checks).T[["value", "published", "threshold", "passed"]]
        print(table.to_string())
        path = self._output("report.json")
        print(f"Saving {path}")
        dump_json({"validation": validation, "checks": checks}, path)
        metadata = self.write_metadata("report", validation_file=os.path.abspath(validation_file))
        return [path, metadata]

    def run(self, command: str, **kwargs) -> List[str]:
        """Run one of simulate, calibrate, validate or report, and print the time used."""
        if command not in ("simulate", "calibrate", "validate", "report"):
            raise ValueError(f"Unknown command {command}.")
        global_start = time.time()
        cpu_global_start = time.process_time()
        written = getattr(self, command)(**kwargs)
        print(
            "Used real time {0:.02f}s, CPU time {1:.02f}s".format(
                time.time() - global_start, time.process_time() - cpu_global_start
            )
        )
        return written

