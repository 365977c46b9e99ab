import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp
from scipy.stats import norm
from tqdm import tqdm

from turba.data import DailySeries, check_aligned
from turba.model import CollectiveBehaviourModel
from turba.network import SocialNetwork
from turba.parameters import ModelParams, Parameters
from turba.simulators import SummaryBands, run_ensemble
from turba.utils import check_seed, derive_seed

logger = logging.getLogger("turba.calibration")

UNCERTAINTY_MODES = ("both", "parameters", "noise")


class NoAcceptancesError(RuntimeError):
    """No draw came within epsilon of the observations."""

    def __init__(self, min_distance: float, epsilon: float, n_draws: int):
        self.min_distance = min_distance
        self.epsilon = epsilon
        self.n_draws = n_draws
        super().__init__(
            f"No acceptances among {n_draws} draws at epsilon={epsilon}, "
            f"the smallest distance was {min_distance:.6g}."
        )


class PopulationExtinctionError(RuntimeError):
    """A sequential stage could not fill its population within the simulation budget."""

    def __init__(self, stage: int, acceptance_rate: float, n_simulated: int, epsilon: float):
        self.stage = stage
        self.acceptance_rate = acceptance_rate
        self.n_simulated = n_simulated
        self.epsilon = epsilon
        super().__init__(
            f"Population went extinct at stage {stage} (epsilon={epsilon:.6g}): "
            f"acceptance rate {acceptance_rate:.3g} after {n_simulated} simulations."
        )


def distance(sim: DailySeries, obs: DailySeries) -> float:
    """Root-mean-square difference of two aligned series.

    Raises:
        ValueError: if the series do not cover the same days.

    """
    check_aligned(sim, obs)
    return float(np.sqrt(np.mean((sim.values - obs.values) ** 2)))


@dataclass
class PosteriorEnsemble:
    """Accepted parameter draws of a calibration.

    Attributes:
        draws (List[ModelParams]): accepted parameter sets.
        distances (np.ndarray): distance of every draw to the observations.
        weights (np.ndarray): normalized importance weights.
        sampled (List[str]): names of the parameters that were drawn.
        epsilons (List[float]): acceptance threshold of every stage.
        n_accepted (List[int]): accepted draws per stage.
        n_simulated (List[int]): simulations per stage.
        method (str): rejection or smc.

    """

    draws: List[ModelParams]
    distances: np.ndarray
    weights: np.ndarray
    sampled: List[str] = field(default_factory=list)
    epsilons: List[float] = field(default_factory=list)
    n_accepted: List[int] = field(default_factory=list)
    n_simulated: List[int] = field(default_factory=list)
    method: str = "rejection"

    def __post_init__(self):
        if len(self.draws) == 0:
            raise ValueError("A posterior ensemble needs at least one draw.")
        self.distances = np.asarray(self.distances, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if len(self.distances) != len(self.draws) or len(weights) != len(self.draws):
            raise ValueError("draws, distances and weights should have equal lengths.")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("Weights should be non-negative with a positive sum.")
        self.weights = weights / weights.sum()
        if self.epsilons and np.any(self.distances > self.final_epsilon):
            raise ValueError("Accepted distances exceed the final epsilon.")

    def __len__(self) -> int:
        return len(self.draws)

    @property
    def final_epsilon(self) -> float:
        return float(self.epsilons[-1]) if self.epsilons else float(np.max(self.distances))

    @property
    def acceptance_rates(self) -> List[float]:
        return [a / s if s else 0.0 for a, s in zip(self.n_accepted, self.n_simulated)]

    @property
    def effective_sample_size(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def samples(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        """Array of shape (draws, parameters)."""
        names = self.sampled if names is None else names
        return np.array([d.as_array(list(names)) for d in self.draws]).reshape(len(self), -1)

    def best(self) -> ModelParams:
        return self.draws[int(np.argmin(self.distances))]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame([d.to_dict() for d in self.draws])
        df["distance"] = self.distances
        df["weight"] = self.weights
        return df

    def write_csv(self, path: str) -> None:
        print(f"Saving {path}")
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: str, **kwargs) -> "PosteriorEnsemble":
        """Read draws written by write_csv, stage metadata can be passed as kwargs."""
        df = pd.read_csv(path)
        missing = [n for n in ModelParams.names() + ["distance", "weight"] if n not in df]
        if missing:
            raise ValueError(f"{path} is missing columns {missing}.")
        draws = [ModelParams.from_dict(row) for row in df[ModelParams.names()].to_dict("records")]
        return cls(draws, df["distance"].to_numpy(), df["weight"].to_numpy(), **kwargs)

    def metadata(self) -> Dict:
        return {
            "method": self.method,
            "sampled": list(self.sampled),
            "epsilons": [float(e) for e in self.epsilons],
            "n_accepted": list(self.n_accepted),
            "n_simulated": list(self.n_simulated),
            "acceptance_rates": self.acceptance_rates,
            "effective_sample_size": self.effective_sample_size,
            "size": len(self),
        }


def _set_loglevel(loglevel: str) -> None:
    logger.setLevel(getattr(logging, loglevel.upper()))


def _simulate_distances(
    model: CollectiveBehaviourModel,
    thetas: np.ndarray,
    seeds: Sequence[int],
    obs: DailySeries,
    threads: int,
) -> np.ndarray:
    """Distance of the fitted channel to obs for every row of thetas."""

    def one(i: int) -> float:
        return distance(model.observable_from_array(thetas[i], seeds[i]), obs)

    if threads == 1:
        return np.array([one(i) for i in range(len(thetas))], dtype=float)
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return np.array(list(executor.map(one, range(len(thetas)))), dtype=float)


def _check_inputs(prior: Parameters, obs: DailySeries, signal: DailySeries) -> None:
    if not isinstance(prior, Parameters):
        raise ValueError("prior should be a Parameters instance.")
    check_aligned(signal, obs)


def abc_rejection(
    prior: Parameters,
    obs: DailySeries,
    net: SocialNetwork,
    signal: DailySeries,
    n_draws: int,
    epsilon: Optional[float] = None,
    quantile: Optional[float] = None,
    base_seed: int = 0,
    threads: int = 1,
    channel: str = "behaviour",
    loglevel: str = "INFO",
) -> PosteriorEnsemble:
    """Rejection ABC on the fitted channel.

    Draws are sampled from the prior with a stream seeded by base_seed, draw i is simulated
    with a seed derived from (base_seed, 0, i).

    Args:
        prior (Parameters): uniform priors, pinned parameters stay at their value.
        obs (DailySeries): observations, aligned with signal.
        net (SocialNetwork): social network.
        signal (DailySeries): normalized external signal.
        n_draws (int): number of prior draws.
        epsilon (float, optional (default=None)): accept draws with distance <= epsilon.
        quantile (float, optional (default=None)): keep the best ceil(quantile * n_draws)
            draws, ties broken by draw index.
        base_seed (int, optional (default=0)): seed of the whole run.
        threads (int, optional (default=1)): worker threads, never changes results.
        channel (str, optional (default="behaviour")): fitted channel.
        loglevel (str, optional (default="INFO")): log level.

    Returns:
        PosteriorEnsemble: accepted draws in draw order, equal weights.

    Raises:
        NoAcceptancesError: if no draw is within epsilon.

    """
    _set_loglevel(loglevel)
    base_seed = check_seed(base_seed)
    _check_inputs(prior, obs, signal)
    if n_draws < 1:
        raise ValueError(f"n_draws should be at least 1, not {n_draws}.")
    if (epsilon is None) == (quantile is None):
        raise ValueError("Give exactly one of epsilon and quantile.")
    if epsilon is not None and not epsilon > 0:
        raise ValueError(f"epsilon should be positive, not {epsilon}.")
    if quantile is not None and not 0 < quantile <= 1:
        raise ValueError(f"quantile should be within (0, 1], not {quantile}.")

    model = CollectiveBehaviourModel(prior, net, signal, channel=channel)
    rng = np.random.default_rng(base_seed)
    low, high = prior.bounds
    thetas = rng.uniform(low, high, size=(n_draws, len(low)))
    seeds = [derive_seed(base_seed, 0, i) for i in range(n_draws)]
    distances = _simulate_distances(model, thetas, seeds, obs, threads)

    if epsilon is not None:
        accepted = np.flatnonzero(distances <= epsilon)
        if len(accepted) == 0:
            raise NoAcceptancesError(float(distances.min()), epsilon, n_draws)
        final_epsilon = float(epsilon)
    else:
        n_keep = int(np.ceil(round(quantile * n_draws, 9)))
        accepted = np.sort(np.argsort(distances, kind="stable")[:n_keep])
        final_epsilon = float(distances[accepted].max())

    logger.info(
        f"Rejection ABC accepted {len(accepted)}/{n_draws} draws at epsilon={final_epsilon:.6g}"
    )
    return PosteriorEnsemble(
        draws=[prior.from_array(thetas[i]) for i in accepted],
        distances=distances[accepted],
        weights=np.ones(len(accepted)),
        sampled=prior.sampled,
        epsilons=[final_epsilon],
        n_accepted=[len(accepted)],
        n_simulated=[n_draws],
        method="rejection",
    )


def _kernel_scale(thetas: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-parameter standard deviation of the Gaussian kernel, twice the weighted variance."""
    mean = np.average(thetas, axis=0, weights=weights)
    variance = np.average((thetas - mean) ** 2, axis=0, weights=weights)
    return np.sqrt(2.0 * variance)


def _smc_weights(
    new: np.ndarray, prev: np.ndarray, prev_weights: np.ndarray, scale: np.ndarray
) -> np.ndarray:
    """Importance weights prior / sum_j W_j K(new | prev_j) under a uniform prior."""
    # parameters without spread are identical across particles and do not enter the kernel
    free = scale > 0
    if not free.any():
        return np.full(len(new), 1.0 / len(new))
    log_kernel = norm.logpdf(
        new[:, None, free], loc=prev[None, :, free], scale=scale[free]
    ).sum(axis=2)
    log_denominator = logsumexp(log_kernel, axis=1, b=prev_weights[None, :])
    log_w = -log_denominator
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def abc_smc(
    prior: Parameters,
    obs: DailySeries,
    net: SocialNetwork,
    signal: DailySeries,
    pop_size: int,
    base_seed: int = 0,
    epsilons: Optional[Sequence[float]] = None,
    quantile: float = 0.3,
    n_stages: int = 4,
    threads: int = 1,
    max_simulations: Optional[int] = None,
    channel: str = "behaviour",
    loglevel: str = "INFO",
) -> PosteriorEnsemble:
    """Sequential Monte Carlo ABC with a Gaussian perturbation kernel.

    Stage t perturbs weighted draws of stage t - 1 with a Gaussian kernel of variance twice
    the empirical per-parameter variance. Proposals outside the prior support are rejected
    before simulation. Candidates are proposed in batches of pop_size from the master stream,
    simulated in parallel and accepted in candidate order. The candidate i of stage t is
    simulated with a seed derived from (base_seed, t, i).

    Without an explicit schedule the epsilons adapt: the first stage accepts every prior draw,
    every later stage uses the quantile of the previous stage's distances, never increasing.

    Args:
        prior (Parameters): uniform priors, pinned parameters stay at their value.
        obs (DailySeries): observations, aligned with signal.
        net (SocialNetwork): social network.
        signal (DailySeries): normalized external signal.
        pop_size (int): accepted draws per stage, at least 2.
        base_seed (int, optional (default=0)): seed of the whole run.
        epsilons (list, optional (default=None)): strictly decreasing schedule.
        quantile (float, optional (default=0.3)): quantile of the adaptive schedule.
        n_stages (int, optional (default=4)): stages of the adaptive schedule.
        threads (int, optional (default=1)): worker threads, never changes results.
        max_simulations (int, optional (default=None)): simulation budget per stage,
            100 * pop_size by default.
        channel (str, optional (default="behaviour")): fitted channel.
        loglevel (str, optional (default="INFO")): log level.

    Returns:
        PosteriorEnsemble: the final population with normalized weights.

    Raises:
        PopulationExtinctionError: if a stage exhausts max_simulations, or proposes ten times
            as many candidates, before filling up.

    """
    _set_loglevel(loglevel)
    base_seed = check_seed(base_seed)
    _check_inputs(prior, obs, signal)
    if pop_size < 2:
        raise ValueError(f"pop_size should be at least 2, not {pop_size}.")
    if epsilons is not None:
        epsilons = [float(e) for e in epsilons]
        if len(epsilons) == 0:
            raise ValueError("The epsilon schedule is empty.")
        if any(not e > 0 for e in epsilons):
            raise ValueError(f"Epsilons should be positive, got {epsilons}.")
        if any(b >= a for a, b in zip(epsilons[:-1], epsilons[1:])):
            raise ValueError(f"The epsilon schedule should be strictly decreasing: {epsilons}.")
        n_stages = len(epsilons)
    else:
        if not 0 < quantile < 1:
            raise ValueError(f"quantile should be within (0, 1), not {quantile}.")
        if n_stages < 1:
            raise ValueError(f"n_stages should be at least 1, not {n_stages}.")
    if max_simulations is None:
        max_simulations = 100 * pop_size

    model = CollectiveBehaviourModel(prior, net, signal, channel=channel)
    rng = np.random.default_rng(base_seed)
    low, high = prior.bounds
    n_dim = len(low)

    schedule: List[float] = []
    n_accepted: List[int] = []
    n_simulated: List[int] = []
    prev = prev_weights = prev_distances = None
    scale = None
    for stage in range(n_stages):
        if epsilons is not None:
            epsilon = epsilons[stage]
        elif stage == 0:
            epsilon = np.inf
        else:
            epsilon = min(schedule[-1], float(np.quantile(prev_distances, quantile)))
        if stage > 0:
            scale = _kernel_scale(prev, prev_weights)

        thetas: List[np.ndarray] = []
        distances: List[float] = []
        simulated = 0
        i_candidate = 0
        # proposals rejected by the prior support count toward a looser cap
        max_proposals = 10 * max_simulations
        show = logger.isEnabledFor(logging.INFO)
        with tqdm(total=pop_size, desc=f"stage {stage}", disable=not show) as bar:
            while len(thetas) < pop_size:
                if simulated >= max_simulations or i_candidate >= max_proposals:
                    raise PopulationExtinctionError(
                        stage, len(thetas) / max(simulated, 1), simulated, epsilon
                    )
                if stage == 0:
                    candidates = rng.uniform(low, high, size=(pop_size, n_dim))
                else:
                    parents = rng.choice(len(prev), size=pop_size, p=prev_weights)
                    noise = rng.normal(0.0, 1.0, size=(pop_size, n_dim))
                    candidates = prev[parents] + noise * scale
                seeds = [derive_seed(base_seed, stage, i_candidate + i) for i in range(pop_size)]
                i_candidate += pop_size
                inside = np.array([prior.in_support(c) for c in candidates], dtype=bool)
                candidates = candidates[inside]
                seeds = [s for s, keep in zip(seeds, inside) if keep]
                if len(candidates) == 0:
                    continue
                batch = _simulate_distances(model, candidates, seeds, obs, threads)
                simulated += len(candidates)
                for theta, d in zip(candidates, batch):
                    if d <= epsilon and len(thetas) < pop_size:
                        thetas.append(theta)
                        distances.append(float(d))
                        bar.update(1)

        thetas_array = np.array(thetas).reshape(pop_size, n_dim)
        if stage == 0:
            weights = np.full(pop_size, 1.0 / pop_size)
        else:
            weights = _smc_weights(thetas_array, prev, prev_weights, scale)
        if epsilon == np.inf:
            epsilon = float(max(distances))
        schedule.append(float(epsilon))
        n_accepted.append(pop_size)
        n_simulated.append(simulated)
        logger.info(
            f"Stage {stage}: epsilon={epsilon:.6g}, accepted {pop_size}/{simulated}, "
            f"mean distance {np.mean(distances):.6g}"
        )
        prev, prev_weights, prev_distances = thetas_array, weights, np.array(distances)

    return PosteriorEnsemble(
        draws=[prior.from_array(t) for t in prev],
        distances=prev_distances,
        weights=prev_weights,
        sampled=prior.sampled,
        epsilons=schedule,
        n_accepted=n_accepted,
        n_simulated=n_simulated,
        method="smc",
    )


def posterior_predictive(
    post: PosteriorEnsemble,
    net: SocialNetwork,
    signal: DailySeries,
    base_seed: int,
    n_samples: Optional[int] = None,
    uncertainty: str = "both",
    threads: int = 1,
    raw: bool = False,
) -> Dict[str, SummaryBands]:
    """Bands of every channel over draws resampled from the posterior.

    Args:
        post (PosteriorEnsemble): the posterior.
        net (SocialNetwork): social network.
        signal (DailySeries): normalized external signal.
        base_seed (int): seed of the resampling and of the ensemble members.
        n_samples (int, optional (default=None)): ensemble size, the posterior size
            (at least 2) by default.
        uncertainty (str, optional (default="both")): "both" resamples draws by weight and
            gives every member its own seed, "parameters" resamples draws but shares one seed,
            "noise" repeats the best draw with a seed per member.
        threads (int, optional (default=1)): worker threads, never changes results.
        raw (bool, optional (default=False)): also reduce the untransformed means.

    """
    base_seed = check_seed(base_seed)
    if uncertainty not in UNCERTAINTY_MODES:
        raise ValueError(f"Unknown uncertainty {uncertainty}, choose from {UNCERTAINTY_MODES}.")
    if n_samples is None:
        n_samples = max(len(post), 2)
    rng = np.random.default_rng(base_seed)
    if uncertainty == "noise":
        draws = [post.best()] * n_samples
    else:
        indices = rng.choice(len(post), size=n_samples, p=post.weights)
        draws = [post.draws[i] for i in indices]
    seeds = None
    if uncertainty == "parameters":
        seeds = [base_seed] * n_samples
    return run_ensemble(draws, net, signal, base_seed, threads=threads, raw=raw, seeds=seeds)


def _weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    """Inverted-cdf quantile of weighted values."""
    order = np.argsort(values, kind="stable")
    cumulative = np.cumsum(weights[order])
    cumulative /= cumulative[-1]
    return float(values[order][min(np.searchsorted(cumulative, q), len(values) - 1)])


def recovery_summary(
    post: PosteriorEnsemble, truth: ModelParams, prior: Parameters
) -> Dict[str, Dict[str, float]]:
    """Synthetic-recovery report of every sampled parameter.

    Returns, per parameter, the true value, the weighted posterior median and 95% interval,
    the error of the median relative to the prior width, and whether the interval holds the
    truth.

    """
    summary = {}
    samples = post.samples(prior.sampled)
    for k, name in enumerate(prior.sampled):
        values = samples[:, k]
        lo_prior, hi_prior = prior[name].fit_limits
        median = _weighted_quantile(values, post.weights, 0.5)
        lo = _weighted_quantile(values, post.weights, 0.025)
        hi = _weighted_quantile(values, post.weights, 0.975)
        true_value = getattr(truth, name)
        summary[name] = {
            "truth": true_value,
            "median": median,
            "lo2.5": lo,
            "hi97.5": hi,
            "prior_relative_error": abs(median - true_value) / (hi_prior - lo_prior),
            "covered": bool(lo <= true_value <= hi),
        }
    return summary
