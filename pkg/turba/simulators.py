import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import h5py
import numpy as np
import pandas as pd
from scipy.special import ndtri
from tqdm import tqdm

from turba.data import DailySeries, ExternalSignal, min_max_normalize
from turba.dynamics import Population, step_population
from turba.network import SocialNetwork
from turba.parameters import ModelParams
from turba.utils import check_seed, to_builtin

logging.basicConfig(level=logging.INFO)


CHANNELS = ("behaviour", "emotion", "perception")
RAW_CHANNELS = tuple(f"raw_{c}" for c in CHANNELS)
QUANTILES = (0.025, 0.5, 0.975)
QUANTILE_METHOD = "linear"
BAND_COLUMNS = ("lo2.5", "median", "hi97.5")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Population means recorded after every simulated day.

    Attributes:
        start_date (pd.Timestamp): date of the first simulated day.
        mean_p (np.ndarray): mean perceived risk per day.
        mean_e (np.ndarray): mean emotional intensity per day.
        mean_b (np.ndarray): mean behaviour per day.
        states (np.ndarray, optional): per-agent states of shape (days, 3, n),
            fields in the order perception, emotion, behaviour.

    """

    start_date: pd.Timestamp
    mean_p: np.ndarray
    mean_e: np.ndarray
    mean_b: np.ndarray
    states: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.mean_b)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return False
        return (
            self.start_date == other.start_date
            and np.array_equal(self.mean_p, other.mean_p)
            and np.array_equal(self.mean_e, other.mean_e)
            and np.array_equal(self.mean_b, other.mean_b)
        )

    @property
    def dates(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start_date, periods=len(self), freq="D")

    def means(self, channel: str) -> np.ndarray:
        """Untransformed population mean of a channel."""
        channel = channel[len("raw_") :] if channel.startswith("raw_") else channel
        if channel == "behaviour":
            return self.mean_b
        elif channel == "emotion":
            return self.mean_e
        elif channel == "perception":
            return self.mean_p
        raise ValueError(f"Unknown channel {channel}, choose from {CHANNELS}.")


def agent_noise(
    seed: int, n_agents: int, n_days: int, sigma: float, first_agent: int = 0
) -> np.ndarray:
    """Gaussian emotion noise of scale sigma, one row of n_days values per agent.

    Agent i reads the PCG64 stream of seed from uniform draw i * n_days on, so any block of
    agents can be reproduced on its own by passing first_agent.

    """
    bit_generator = np.random.PCG64(seed)
    bit_generator.advance(first_agent * n_days)
    uniforms = np.random.Generator(bit_generator).random((n_agents, n_days))
    return sigma * ndtri(uniforms)


def run_simulation(
    params: ModelParams,
    net: SocialNetwork,
    signal: DailySeries,
    seed: int,
    first_agent: int = 0,
    record_states: bool = False,
) -> Trajectory:
    """Simulate the population over every day of the signal.

    Args:
        params (ModelParams): model parameters, agents start at their init values.
        net (SocialNetwork): social network, one node per agent.
        signal (DailySeries): normalized external signal, values in [0, 1].
        seed (int): seed of the emotion noise.
        first_agent (int, optional (default=0)): index of the first agent in the noise
            stream, to simulate a block of a larger population.
        record_states (bool, optional (default=False)): keep the per-agent states.

    Returns:
        Trajectory: population means after every day.

    """
    seed = check_seed(seed)
    s = np.asarray(signal.values, dtype=float)
    if len(s) == 0:
        raise ValueError("The external signal is empty.")
    if not np.all(np.isfinite(s)) or np.any(s < 0) or np.any(s > 1):
        raise ValueError("External signal should be finite and within [0, 1].")

    n, n_days = net.n, len(s)
    pop = Population.initial(n, params)
    noise = agent_noise(seed, n, n_days, params.sigma, first_agent) if params.sigma > 0 else None

    means = np.empty((3, n_days))
    states = np.empty((n_days, 3, n)) if record_states else None
    for t in range(n_days):
        pop = step_population(
            pop, net, float(s[t]), params, noise=None if noise is None else noise[:, t]
        )
        means[:, t] = pop.means()
        if states is not None:
            states[t] = pop.perception, pop.emotion, pop.behaviour
    return Trajectory(signal.start_date, means[0], means[1], means[2], states)


def observable_transform(traj: Trajectory, channel: str) -> ExternalSignal:
    """Observable of a channel: min-max normalized mean, square-rooted for emotion."""
    if channel not in CHANNELS:
        raise ValueError(f"Unknown channel {channel}, choose from {CHANNELS}.")
    normalized = min_max_normalize(DailySeries(traj.start_date, traj.means(channel), channel))
    if channel == "emotion":
        return ExternalSignal(normalized.start_date, np.sqrt(normalized.values), channel)
    return normalized


def channel_series(traj: Trajectory, channel: str) -> DailySeries:
    """Observable of a channel, or the untransformed mean for raw_ channels."""
    if channel in RAW_CHANNELS:
        return DailySeries(traj.start_date, traj.means(channel), channel)
    return observable_transform(traj, channel)


@dataclass(frozen=True, eq=False)
class SummaryBands:
    """Pointwise median and 95% credible band of an ensemble channel.

    Attributes:
        start_date (pd.Timestamp): first day.
        channel (str): name of the channel.
        lo (np.ndarray): 2.5% quantile per day.
        median (np.ndarray): median per day.
        hi (np.ndarray): 97.5% quantile per day.
        n_members (int): ensemble size.

    """

    start_date: pd.Timestamp
    channel: str
    lo: np.ndarray
    median: np.ndarray
    hi: np.ndarray
    n_members: int = 0

    def __post_init__(self):
        object.__setattr__(self, "start_date", pd.Timestamp(self.start_date).normalize())
        if not (len(self.lo) == len(self.median) == len(self.hi)):
            raise ValueError("Band arrays should have equal lengths.")
        if np.any(self.lo > self.median) or np.any(self.median > self.hi):
            raise ValueError(f"Bands of {self.channel} are not ordered lo <= median <= hi.")

    def __len__(self) -> int:
        return len(self.median)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SummaryBands):
            return False
        return (
            self.start_date == other.start_date
            and self.channel == other.channel
            and all(
                np.array_equal(getattr(self, a), getattr(other, a))
                for a in ("lo", "median", "hi")
            )
        )

    @property
    def dates(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start_date, periods=len(self), freq="D")

    @property
    def end_date(self) -> pd.Timestamp:
        return self.start_date + pd.Timedelta(days=len(self) - 1)

    def median_series(self) -> DailySeries:
        return DailySeries(self.start_date, self.median, self.channel)

    def window(self, start, end) -> "SummaryBands":
        mask = (self.dates >= pd.Timestamp(start)) & (self.dates <= pd.Timestamp(end))
        if not mask.any():
            raise ValueError(f"Bands of {self.channel} have no days within {start} ... {end}.")
        return SummaryBands(
            self.dates[mask][0],
            self.channel,
            self.lo[mask],
            self.median[mask],
            self.hi[mask],
            self.n_members,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "date": self.dates.strftime("%Y-%m-%d"),
                BAND_COLUMNS[0]: self.lo,
                BAND_COLUMNS[1]: self.median,
                BAND_COLUMNS[2]: self.hi,
            }
        )

    def write_csv(self, path: str) -> None:
        print(f"Saving {path}")
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: str, channel: str) -> "SummaryBands":
        """Read bands written by write_csv."""
        df = pd.read_csv(path)
        missing = [c for c in ("date",) + BAND_COLUMNS if c not in df.columns]
        if missing:
            raise ValueError(f"{path} is missing columns {missing}.")
        dates = pd.to_datetime(df["date"], format="%Y-%m-%d")
        if len(dates) == 0:
            raise ValueError(f"{path} holds no bands.")
        if len(dates) > 1 and not (dates.diff().iloc[1:] == pd.Timedelta(days=1)).all():
            raise ValueError(f"{path} should hold consecutive days.")
        return cls(
            dates.iloc[0],
            channel,
            df[BAND_COLUMNS[0]].to_numpy(dtype=float),
            df[BAND_COLUMNS[1]].to_numpy(dtype=float),
            df[BAND_COLUMNS[2]].to_numpy(dtype=float),
        )


def compute_bands(samples: np.ndarray, start_date, channel: str) -> SummaryBands:
    """Pointwise 2.5%, 50% and 97.5% quantiles over ensemble members.

    Args:
        samples (np.ndarray): shape (members, days).
        start_date: date of the first day.
        channel (str): name of the channel.

    Returns:
        SummaryBands: quantiles by linear interpolation between order statistics.

    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError("samples should have shape (members, days).")
    lo, median, hi = np.quantile(samples, QUANTILES, axis=0, method=QUANTILE_METHOD)
    return SummaryBands(start_date, channel, lo, median, hi, samples.shape[0])


def run_ensemble(
    param_draws: Sequence[ModelParams],
    net: SocialNetwork,
    signal: DailySeries,
    base_seed: int,
    threads: int = 1,
    raw: bool = False,
    seeds: Optional[Sequence[int]] = None,
    return_trajectories: bool = False,
    progress: bool = False,
) -> Union[Dict[str, SummaryBands], Tuple[Dict[str, SummaryBands], List[Trajectory]]]:
    """Simulate every parameter draw and reduce the channels to bands.

    Args:
        param_draws (list): at least two ModelParams.
        net (SocialNetwork): social network.
        signal (DailySeries): external signal.
        base_seed (int): draw i is simulated with seed base_seed + i, so reordering noisy
            draws reassigns their seeds.
        threads (int, optional (default=1)): number of worker threads, never changes results.
        raw (bool, optional (default=False)): also reduce the untransformed means.
        seeds (list, optional (default=None)): explicit seed per draw, overrides base_seed.
        return_trajectories (bool, optional (default=False)): also return the members.
        progress (bool, optional (default=False)): show a progress bar.

    Returns:
        dict: SummaryBands per channel, and the list of Trajectory if requested.

    """
    base_seed = check_seed(base_seed)
    if len(param_draws) < 2:
        raise ValueError(f"An ensemble needs at least 2 draws, got {len(param_draws)}.")
    if seeds is None:
        seeds = [base_seed + i for i in range(len(param_draws))]
    elif len(seeds) != len(param_draws):
        raise ValueError("seeds and param_draws should have equal lengths.")
    if threads < 1:
        raise ValueError(f"threads should be positive, not {threads}.")

    def member(i: int) -> Trajectory:
        return run_simulation(param_draws[i], net, signal, seeds[i])

    indices = range(len(param_draws))
    if threads == 1:
        iterator = map(member, indices)
        trajectories = list(tqdm(iterator, total=len(indices), disable=not progress))
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            iterator = executor.map(member, indices)
            trajectories = list(tqdm(iterator, total=len(indices), disable=not progress))

    channels = CHANNELS + (RAW_CHANNELS if raw else ())
    bands = {
        channel: compute_bands(
            np.stack([channel_series(t, channel).values for t in trajectories]),
            signal.start_date,
            channel,
        )
        for channel in channels
    }
    if len(param_draws) < 40:
        warnings.warn(
            f"Only {len(param_draws)} ensemble members, the 95% band rests on "
            "interpolated extreme order statistics."
        )
    if return_trajectories:
        return bands, trajectories
    return bands


def store_trajectories(
    path: str, trajectories: Sequence[Trajectory], metadata: Optional[dict] = None
) -> None:
    """Write ensemble members to HDF5, one dataset per mean channel of shape (members, days)."""
    print(f"Saving {path}")
    with h5py.File(path, "w") as f:
        f.attrs["start_date"] = str(trajectories[0].start_date.date())
        f.attrs["metadata"] = json.dumps(to_builtin(metadata or {}), sort_keys=True)
        for name in ("mean_p", "mean_e", "mean_b"):
            f.create_dataset(name, data=np.stack([getattr(t, name) for t in trajectories]))


def load_trajectories(path: str) -> Tuple[List[Trajectory], dict]:
    """Read members written by store_trajectories, with their metadata."""
    with h5py.File(path, "r") as f:
        start_date = pd.Timestamp(f.attrs["start_date"])
        metadata = json.loads(f.attrs["metadata"])
        arrays = [f[name][()] for name in ("mean_p", "mean_e", "mean_b")]
    trajectories = [Trajectory(start_date, *(a[i] for a in arrays)) for i in range(len(arrays[0]))]
    return trajectories, metadata
