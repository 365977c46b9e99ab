from dataclasses import dataclass, asdict, fields, replace
from typing import Any, Dict, Iterator, List, Optional, Tuple, cast

import numpy as np
import pandas as pd

from turba.utils import within_limits, clip_limits


# domain of every ModelParams field, None means unbounded
PARAMETER_DOMAINS: Dict[str, Tuple[float, Optional[float]]] = {
    "alpha_p": (0.0, None),
    "alpha_e": (0.0, None),
    "alpha_b": (0.0, None),
    "beta_p": (0.0, None),
    "beta_e": (0.0, None),
    "delta_b": (0.0, None),
    "kappa_e": (0.0, 1.0),
    "kappa_b": (0.0, 1.0),
    "sigma": (0.0, None),
    "init_p": (0.0, 1.0),
    "init_e": (0.0, 1.0),
    "init_b": (0.0, 1.0),
}


@dataclass(frozen=True)
class ModelParams:
    """Free parameters of the collective behaviour dynamics.

    Attributes:
        alpha_p (float): gain of the external signal on perceived risk.
        alpha_e (float): gain of perceived risk on emotional intensity.
        alpha_b (float): gain of emotional intensity on behaviour.
        beta_p (float): weakening of perceived risk by behaviour.
        beta_e (float): weakening of emotion by behaviour.
        delta_b (float): relaxation rate of behaviour.
        kappa_e (float): emotion contagion coupling, in [0, 1].
        kappa_b (float): behaviour mirroring coupling, in [0, 1].
        sigma (float): scale of the daily Gaussian noise on emotion.
        init_p (float): initial perceived risk of every agent.
        init_e (float): initial emotional intensity of every agent.
        init_b (float): initial behaviour level of every agent.

    Raises:
        ValueError: if a value is not finite or outside its domain.

    """

    alpha_p: float = 0.0
    alpha_e: float = 0.0
    alpha_b: float = 0.0
    beta_p: float = 0.0
    beta_e: float = 0.0
    delta_b: float = 0.0
    kappa_e: float = 0.0
    kappa_b: float = 0.0
    sigma: float = 0.0
    init_p: float = 0.0
    init_e: float = 0.0
    init_b: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float, np.number)):
                raise ValueError(f"{f.name} should be a real number, not {value!r}.")
            value = float(value)
            if not np.isfinite(value):
                raise ValueError(f"{f.name} should be finite, not {value}.")
            if not within_limits(value, PARAMETER_DOMAINS[f.name]):
                raise ValueError(
                    f"{f.name}={value} is outside its domain {PARAMETER_DOMAINS[f.name]}."
                )
            object.__setattr__(self, f.name, value)

    @classmethod
    def names(cls) -> List[str]:
        """Field names in declaration order."""
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, values: Dict[str, float]) -> "ModelParams":
        """Build from a mapping, refusing unknown names."""
        unknown = set(values) - set(cls.names())
        if unknown:
            raise ValueError(f"Unknown model parameters {sorted(unknown)}.")
        return cls(**values)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def as_array(self, names: Optional[List[str]] = None) -> np.ndarray:
        names = self.names() if names is None else names
        return np.array([getattr(self, n) for n in names], dtype=float)


class Parameter:
    """Represents a single model parameter and its uniform prior.

    Attributes:
        name (str): The name of the parameter, one of the ModelParams fields.
        nominal_value (float, optional (default=None)): The nominal value of the parameter,
            used when the parameter is pinned.
        fittable (bool, optional (default=True)):
            Indicates if the parameter is calibrated or always fixed.
        fit_limits (Tuple[float, float], optional (default=None)):
            The uniform prior range of the parameter.
        description (str, optional (default=None)): A description of the parameter.

    """

    def __init__(
        self,
        name: str,
        nominal_value: Optional[float] = None,
        fittable: bool = True,
        fit_limits: Optional[Tuple[float, float]] = None,
        description: Optional[str] = None,
    ):
        """Initialise a parameter."""
        self.name = name
        self.nominal_value = nominal_value
        self.fittable = fittable
        self.fit_limits = tuple(fit_limits) if fit_limits is not None else None
        self.description = description

        self._check_parameter_consistency()

    def __repr__(self) -> str:
        parameter_str = ", ".join([f"{k}={v}" for k, v in self.__dict__.items() if v is not None])
        _repr = f"{self.__class__.__module__}.{self.__class__.__qualname__}"
        _repr += f"({parameter_str})"
        return _repr

    def __eq__(self, other: object) -> bool:
        """Return True if all attributes are equal."""
        if isinstance(other, Parameter):
            return all(getattr(self, k) == getattr(other, k) for k in self.__dict__)
        else:
            return False

    @property
    def pinned(self) -> bool:
        """True if the parameter is not sampled: not fittable, or a zero-width prior."""
        if not self.fittable:
            return True
        low, high = self.fit_limits
        return low == high

    @property
    def pinned_value(self) -> float:
        """The constant value of a pinned parameter."""
        if not self.pinned:
            raise ValueError(f"Parameter {self.name} is sampled, it has no pinned value.")
        if self.fittable:
            return self.fit_limits[0]
        return self.nominal_value

    def value_in_fit_limits(self, value: float) -> bool:
        """Returns True if value is within fit_limits."""
        return within_limits(value, self.fit_limits)

    def to_config(self) -> Dict[str, Any]:
        """The configuration dictionary this parameter was built from."""
        config = {"fittable": self.fittable}
        if self.nominal_value is not None:
            config["nominal_value"] = self.nominal_value
        if self.fit_limits is not None:
            config["fit_limits"] = list(self.fit_limits)
        if self.description is not None:
            config["description"] = self.description
        return config

    def _check_parameter_consistency(self):
        """Check if parameter is consistent."""
        if self.name not in PARAMETER_DOMAINS:
            raise ValueError(
                f"Parameter {self.name} is not a model parameter, "
                f"choose from {list(PARAMETER_DOMAINS)}."
            )
        domain = clip_limits(PARAMETER_DOMAINS[self.name])
        if self.fittable:
            if self.fit_limits is None or len(self.fit_limits) != 2:
                raise ValueError(f"Fittable parameter {self.name} needs fit_limits [lo, hi].")
            low, high = self.fit_limits
            if not (np.isfinite(low) and np.isfinite(high)):
                raise ValueError(
                    f"fit_limits of {self.name} should be finite, not {self.fit_limits}."
                )
            if low > high:
                raise ValueError(f"fit_limits of {self.name} have lo > hi: {self.fit_limits}.")
            if not (within_limits(low, domain) and within_limits(high, domain)):
                raise ValueError(
                    f"fit_limits {self.fit_limits} of {self.name} "
                    f"not within its domain {PARAMETER_DOMAINS[self.name]}."
                )
            if low == high and self.nominal_value is not None and self.nominal_value != low:
                raise ValueError(
                    f"{self.name} has the zero-width prior {self.fit_limits} but "
                    f"nominal_value {self.nominal_value}."
                )
        else:
            if self.nominal_value is None:
                raise ValueError(f"Fixed parameter {self.name} needs a nominal_value.")
        if self.nominal_value is not None and not within_limits(self.nominal_value, domain):
            raise ValueError(
                f"nominal_value {self.nominal_value} of {self.name} "
                f"not within its domain {PARAMETER_DOMAINS[self.name]}."
            )


class Parameters:
    """Represents a collection of parameters, the prior specification of a calibration.

    Every ModelParams field must be declared. Sampled parameters get independent uniform
    priors over their fit_limits, pinned ones keep their nominal value.

    Attributes:
        names (List[str]): A list of parameter names.
        fit_limits (Dict[str, Tuple[float, float]]): A dictionary of prior ranges.
        fittable (List[str]): A list of parameter names which are fittable.
        sampled (List[str]): fittable parameters with a non-degenerate prior range.
        pinned (Dict[str, float]): values of the parameters which are never sampled.
        nominal_values (Dict[str, float]): A dictionary of parameter nominal values.
        parameters (Dict[str, Parameter]): A dictionary to store the parameters,
            with parameter name as key.

    """

    def __init__(self):
        """Initialise a collection of parameters."""
        self.parameters = cast(Dict[str, Parameter], {})

    def __iter__(self) -> Iterator[Parameter]:
        """Return an iterator over the parameters."""
        return iter(self.parameters.values())

    @classmethod
    def from_config(cls, config: Dict[str, dict]):
        """Creates a Parameters object from a configuration dictionary.

        Args:
            config (dict): A dictionary of parameter configurations.

        Returns:
            Parameters: The created Parameters object.

        Raises:
            ValueError: if a ModelParams field is not declared.

        """
        parameters = cls()
        # keep the canonical field order, whatever the order in the config
        for name in ModelParams.names():
            if name in config:
                parameters.add_parameter(Parameter(name=name, **config[name]))
        unknown = set(config) - set(ModelParams.names())
        if unknown:
            raise ValueError(f"Unknown parameters {sorted(unknown)} in parameter_definition.")
        missing = set(ModelParams.names()) - set(parameters.names)
        if missing:
            raise ValueError(f"Parameters {sorted(missing)} are not defined.")
        return parameters

    @classmethod
    def default(cls):
        """The default priors: uniform(0, 0.5) on rates and couplings, uniform(0, 0.05) on sigma,
        initial values pinned at 0.01."""
        return cls.from_config(default_parameter_definition())

    def to_config(self) -> Dict[str, dict]:
        return {p.name: p.to_config() for p in self}

    def __repr__(self) -> str:
        parameter_str = ", ".join(self.names)
        _repr = f"{self.__class__.__module__}.{self.__class__.__qualname__}"
        _repr += f"({parameter_str})"
        return _repr

    def __str__(self) -> str:
        """Return an overview table of all parameters."""
        df = pd.DataFrame([p.__dict__ for p in self])
        df.set_index("name", inplace=True)
        df.index.name = None
        return df.to_string()

    def __eq__(self, other: object) -> bool:
        """Return True if all parameters are equal."""
        if isinstance(other, Parameters):
            return self.parameters == other.parameters
        else:
            return False

    def __getitem__(self, name: str) -> Parameter:
        if name in self.parameters:
            return self.parameters[name]
        else:
            raise KeyError(f"Key '{name}' not found.")

    def add_parameter(self, parameter: Parameter) -> None:
        """Adds a Parameter object to the Parameters collection.

        Raises:
            ValueError: If the parameter name already exists.

        """
        if parameter.name in self.names:
            raise ValueError(f"Parameter {parameter.name} already exists.")
        self.parameters[parameter.name] = parameter

    @property
    def names(self) -> List[str]:
        """A list of parameter names."""
        return list(self.parameters.keys())

    @property
    def fit_limits(self) -> Dict[str, Tuple[float, float]]:
        """A dictionary of prior ranges."""
        return {
            name: param.fit_limits
            for name, param in self.parameters.items()
            if param.fit_limits is not None
        }

    @property
    def fittable(self) -> List[str]:
        """A list of parameter names which are fittable."""
        return [name for name, param in self.parameters.items() if param.fittable]

    @property
    def sampled(self) -> List[str]:
        """Names of the parameters drawn from their prior."""
        return [name for name, param in self.parameters.items() if not param.pinned]

    @property
    def pinned(self) -> Dict[str, float]:
        """Values of the parameters which are held constant."""
        return {name: p.pinned_value for name, p in self.parameters.items() if p.pinned}

    @property
    def nominal_values(self) -> dict:
        """A dict of nominal values for all parameters with a nominal value."""
        return {
            k: i.nominal_value for k, i in self.parameters.items() if i.nominal_value is not None
        }

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper prior bounds of the sampled parameters, in `sampled` order."""
        limits = np.array([self.parameters[n].fit_limits for n in self.sampled], dtype=float)
        limits = limits.reshape(-1, 2)
        return limits[:, 0], limits[:, 1]

    def __call__(self, **kwargs) -> ModelParams:
        """Return ModelParams from pinned values and the given values of sampled parameters.

        Keyword Args:
            kwargs (dict): values of the sampled parameters, may also override pinned ones.

        Raises:
            ValueError: If a parameter name is not found, or a sampled parameter is missing.

        """
        for name in kwargs:
            if name not in self.parameters:
                raise ValueError(f"Parameter '{name}' not found.")
        values = {**self.pinned, **kwargs}
        missing = [n for n in self.names if n not in values]
        if missing:
            raise ValueError(
                "All parameters must be set explicitly, or be pinned, "
                "not satisfied for: " + ", ".join(missing)
            )
        return ModelParams(**values)

    def from_array(self, values: np.ndarray) -> ModelParams:
        """ModelParams from values of the sampled parameters, in `sampled` order."""
        return self(**dict(zip(self.sampled, np.asarray(values, dtype=float).tolist())))

    def sample(self, rng: np.random.Generator) -> ModelParams:
        """Draw one parameter set from the prior."""
        low, high = self.bounds
        return self.from_array(rng.uniform(low, high))

    def in_support(self, values: np.ndarray) -> bool:
        """True if the sampled-parameter vector lies inside the prior support."""
        low, high = self.bounds
        values = np.asarray(values, dtype=float)
        return bool(np.all(values >= low) and np.all(values <= high))

    def log_density(self, values: np.ndarray) -> float:
        """Log prior density of a sampled-parameter vector, -inf outside the support."""
        if not self.in_support(values):
            return -np.inf
        low, high = self.bounds
        return float(-np.sum(np.log(high - low)))

    def values_in_fit_limits(self, **kwargs) -> bool:
        """Return True if all values are within the fit limits."""
        return all(
            self.parameters[name].value_in_fit_limits(value) for name, value in kwargs.items()
        )


def default_parameter_definition() -> Dict[str, dict]:
    """Parameter definition of the default priors."""
    definition = {}
    for name in ModelParams.names():
        if name.startswith("init_"):
            definition[name] = {"fittable": False, "nominal_value": 0.01}
        elif name == "sigma":
            definition[name] = {"fit_limits": [0.0, 0.05]}
        else:
            definition[name] = {"fit_limits": [0.0, 0.5]}
    return definition
