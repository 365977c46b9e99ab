from typing import Dict, Optional, Sequence, Union

import numpy as np

from turba.data import DailySeries, ExternalSignal
from turba.network import SocialNetwork
from turba.parameters import ModelParams, Parameters
from turba.simulators import (
    CHANNELS,
    Trajectory,
    observable_transform,
    run_ensemble,
    run_simulation,
)


class CollectiveBehaviourModel:
    """Network agent model of collective behaviour driven by an external signal.

    The model binds a prior specification to a fixed network and signal, so that the
    calibration only has to pass parameter values and seeds.

    - Methods:
        - generate_data: one simulated Trajectory
        - observable: one transformed channel of a simulation
        - observable_from_array: same, from values of the sampled parameters
        - ensemble: bands over several parameter sets

    Attributes:
        parameters (Parameters): parameters of the model, pinned ones are held constant.
        network (SocialNetwork): the social network.
        signal (DailySeries): the normalized external signal.
        channel (str): the channel compared to observations.

    Args:
        parameter_definition (dict or Parameters, optional (default=None)):
            definition of the parameters, the default priors if None.
        network (SocialNetwork): the social network.
        signal (DailySeries): the normalized external signal, values in [0, 1].
        channel (str, optional (default="behaviour")): the fitted channel.

    Keyword Args:
        nominal_values (dict): overwrite the nominal values of parameter_definition.

    """

    def __init__(
        self,
        parameter_definition: Optional[Union[dict, Parameters]] = None,
        network: Optional[SocialNetwork] = None,
        signal: Optional[DailySeries] = None,
        channel: str = "behaviour",
        **kwargs,
    ):
        """Initialize the model."""
        if network is None or signal is None:
            raise ValueError("The model needs a network and an external signal.")
        if channel not in CHANNELS:
            raise ValueError(f"Unknown channel {channel}, choose from {CHANNELS}.")
        self._define_parameters(parameter_definition, kwargs.get("nominal_values", None))
        self.network = network
        self.signal = ExternalSignal(signal.start_date, signal.values, signal.label)
        self.channel = channel

    def _define_parameters(self, parameter_definition, nominal_values=None):
        """Initialize the parameters of the model."""
        if parameter_definition is None:
            self.parameters = Parameters.default()
        elif isinstance(parameter_definition, Parameters):
            self.parameters = parameter_definition
        elif isinstance(parameter_definition, dict):
            parameter_definition = {k: dict(v) for k, v in parameter_definition.items()}
            # if nominal_values are given, overwrite the ones in parameter_definition
            if nominal_values is not None:
                for name, definition in parameter_definition.items():
                    if name in nominal_values:
                        definition["nominal_value"] = nominal_values[name]
            self.parameters = Parameters.from_config(parameter_definition)
        else:
            raise RuntimeError("parameter_definition must be dict or Parameters")

    def get_parameter_list(self):
        """Names of the parameters drawn by a calibration."""
        return self.parameters.sampled

    def generate_data(self, seed: int, first_agent: int = 0, **kwargs) -> Trajectory:
        """Simulate the population for the given parameters.

        Parameters not given take their pinned value.

        Raises:
            ValueError: If the parameters are not within the fit limits

        """
        if not self.parameters.values_in_fit_limits(**kwargs):
            raise ValueError("Values are not within fit limits")
        params = self.parameters(**kwargs)
        return run_simulation(params, self.network, self.signal, seed, first_agent=first_agent)

    def observable(self, seed: int, channel: Optional[str] = None, **kwargs) -> ExternalSignal:
        """Transformed channel of one simulation, the fitted channel by default."""
        trajectory = self.generate_data(seed, **kwargs)
        return observable_transform(trajectory, channel or self.channel)

    def observable_from_array(self, values: np.ndarray, seed: int) -> ExternalSignal:
        """Fitted channel for values of the sampled parameters, in parameters.sampled order."""
        params = self.parameters.from_array(values)
        trajectory = run_simulation(params, self.network, self.signal, seed)
        return observable_transform(trajectory, self.channel)

    def ensemble(
        self,
        param_draws: Sequence[ModelParams],
        base_seed: int,
        seeds: Optional[Sequence[int]] = None,
        threads: int = 1,
        raw: bool = False,
        return_trajectories: bool = False,
    ):
        """Bands of every channel over the parameter draws, see run_ensemble."""
        return run_ensemble(
            param_draws,
            self.network,
            self.signal,
            base_seed,
            threads=threads,
            raw=raw,
            seeds=seeds,
            return_trajectories=return_trajectories,
        )

    def nominal_params(self) -> Dict[str, float]:
        return dict(self.parameters.nominal_values)
