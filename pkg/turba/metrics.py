from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from turba.data import DailySeries, SurveySeries, align, check_aligned
from turba.simulators import SummaryBands


RT_SPLIT_DATE = "2020-04-23"

# published values, reported next to ours and never asserted
PUBLISHED_VALUES = {
    "coverage": 0.79,
    "pearson_r": -0.40,
    "pearson_p": 0.0001,
    "survey_k": 8,
    "survey_n": 10,
}
DIRECTIONAL_THRESHOLDS = {
    "coverage_min": 0.60,
    "pearson_p_max": 0.05,
    "survey_fraction_min": 0.6,
}


def _check_bands_aligned(obs: DailySeries, bands: SummaryBands) -> None:
    if obs.start_date != bands.start_date or len(obs) != len(bands):
        raise ValueError(
            f"Observations cover {obs.start_date.date()} ... {obs.end_date.date()} but the "
            f"bands of {bands.channel} cover {bands.start_date.date()} ... "
            f"{bands.end_date.date()}."
        )


def coverage_fraction(obs: DailySeries, bands: SummaryBands) -> float:
    """Fraction of days with lo2.5 <= obs <= hi97.5, endpoints included."""
    _check_bands_aligned(obs, bands)
    inside = (bands.lo <= obs.values) & (obs.values <= bands.hi)
    return float(np.mean(inside))


def survey_capture(survey: SurveySeries, bands: SummaryBands) -> Tuple[int, int]:
    """Number of survey rounds inside the perception band on their date, and the total.

    Raises:
        ValueError: if a survey date lies outside the dates of the bands.

    """
    k = 0
    for date, value in zip(survey.dates, survey.transformed):
        if date < bands.start_date or date > bands.end_date:
            raise ValueError(
                f"Survey date {date.date()} is outside the simulated window "
                f"{bands.start_date.date()} ... {bands.end_date.date()}."
            )
        day = (date - bands.start_date).days
        if bands.lo[day] <= value <= bands.hi[day]:
            k += 1
    return k, len(survey)


def pearson(
    x: DailySeries, y: DailySeries, n_permutations: int = 0, seed: Optional[int] = None
) -> Tuple[float, float]:
    """Sample Pearson correlation of two aligned series and its two-sided p-value.

    Args:
        x (DailySeries): first series.
        y (DailySeries): second series, same days as x.
        n_permutations (int, optional (default=0)): if positive, the p-value comes from
            that many random pairings instead of the t-distribution with n - 2 degrees of freedom.
        seed (int, optional (default=None)): seed of the permutations, required with them.

    Returns:
        tuple: r in [-1, 1] and the p-value.

    Raises:
        ValueError: if the series are misaligned, shorter than 3 days or constant.

    """
    check_aligned(x, y)
    if len(x) < 3:
        raise ValueError(f"Pearson correlation needs at least 3 days, got {len(x)}.")
    for s in (x, y):
        if np.ptp(s.values) == 0:
            raise ValueError(f"{s.label or 'series'} is constant, its correlation is undefined.")
    r, p = stats.pearsonr(x.values, y.values)
    if n_permutations > 0:
        if seed is None:
            raise ValueError("A seed is required for the permutation p-value.")
        result = stats.permutation_test(
            (x.values,),
            lambda a: stats.pearsonr(a, y.values)[0],
            permutation_type="pairings",
            n_resamples=n_permutations,
            alternative="two-sided",
            random_state=seed,
        )
        p = result.pvalue
    return float(np.clip(r, -1.0, 1.0)), float(np.clip(p, 0.0, 1.0))


def pearson_summary(x: DailySeries, y: DailySeries, alpha: float = 0.05, **kwargs) -> Dict:
    """Pearson r with its p-value and a Fisher-z confidence interval, on the shared days."""
    x, y = align(x, y)
    r, p = pearson(x, y, **kwargs)
    n = len(x)
    summary = {"r": r, "p": p, "n": n, "start": str(x.start_date.date())}
    summary["end"] = str(x.end_date.date())
    if n > 3 and abs(r) < 1:
        z_crit = stats.norm.ppf(1 - alpha / 2)
        z, se = np.arctanh(r), 1.0 / np.sqrt(n - 3)
        summary["ci_lo"] = float(np.tanh(z - z_crit * se))
        summary["ci_hi"] = float(np.tanh(z + z_crit * se))
    return summary


def pearson_windows(
    rt: DailySeries, behaviour: DailySeries, split_date: str = RT_SPLIT_DATE, **kwargs
) -> Dict[str, Dict]:
    """Correlation of R_t and mean behaviour over the full overlap and from split_date on."""
    windows = {"full": pearson_summary(rt, behaviour, **kwargs)}
    split = pd.Timestamp(split_date)
    start = max(split, rt.start_date, behaviour.start_date)
    # fewer than 3 shared days leave r undefined
    if start + pd.Timedelta(days=2) <= min(rt.end_date, behaviour.end_date):
        late = [s.window(start, s.end_date) for s in (rt, behaviour)]
        windows[f"from_{split.date()}"] = pearson_summary(*late, **kwargs)
    return windows


def validation_report(
    obs: DailySeries,
    bands: Mapping[str, SummaryBands],
    survey: Optional[SurveySeries] = None,
    rt: Optional[DailySeries] = None,
    split_date: str = RT_SPLIT_DATE,
    config_hash: Optional[str] = None,
    n_permutations: int = 0,
    seed: Optional[int] = None,
) -> Dict[str, Any]:
    """Coverage of the observed behaviour, survey capture and the R_t correlation.

    The R_t correlation uses the median of the untransformed mean behaviour when the bands hold
    it (raw_behaviour), the behaviour observable otherwise.

    """
    report: Dict[str, Any] = {
        "config_hash": config_hash,
        "window": [str(obs.start_date.date()), str(obs.end_date.date())],
        "coverage": coverage_fraction(obs, bands["behaviour"]),
        "band_membership": "inclusive",
    }
    if survey is not None:
        report["survey_k"], report["survey_n"] = survey_capture(survey, bands["perception"])
    else:
        report["survey_k"] = report["survey_n"] = None
    if rt is not None:
        channel = "raw_behaviour" if "raw_behaviour" in bands else "behaviour"
        windows = pearson_windows(
            rt,
            bands[channel].median_series(),
            split_date,
            n_permutations=n_permutations,
            seed=seed,
        )
        report["pearson_r"] = windows["full"]["r"]
        report["pearson_p"] = windows["full"]["p"]
        report["pearson_channel"] = channel
        report["pearson_p_method"] = "permutation" if n_permutations > 0 else "t-distribution"
        report["pearson_windows"] = windows
    else:
        report["pearson_r"] = report["pearson_p"] = None
    return report


def directional_checks(report: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    """Compare a validation report to the published values and the directional thresholds."""
    checks: Dict[str, Dict[str, Any]] = {
        "coverage": {
            "value": report.get("coverage"),
            "published": PUBLISHED_VALUES["coverage"],
            "threshold": f">= {DIRECTIONAL_THRESHOLDS['coverage_min']}",
            "passed": report.get("coverage") is not None
            and report["coverage"] >= DIRECTIONAL_THRESHOLDS["coverage_min"],
        }
    }
    if report.get("pearson_r") is not None:
        checks["pearson"] = {
            "value": [report["pearson_r"], report["pearson_p"]],
            "published": [PUBLISHED_VALUES["pearson_r"], PUBLISHED_VALUES["pearson_p"]],
            "threshold": f"r < 0 and p < {DIRECTIONAL_THRESHOLDS['pearson_p_max']}",
            "passed": report["pearson_r"] < 0
            and report["pearson_p"] < DIRECTIONAL_THRESHOLDS["pearson_p_max"],
        }
    if report.get("survey_n"):
        fraction = report["survey_k"] / report["survey_n"]
        checks["survey"] = {
            "value": [report["survey_k"], report["survey_n"]],
            "published": [PUBLISHED_VALUES["survey_k"], PUBLISHED_VALUES["survey_n"]],
            "threshold": f"k/n >= {DIRECTIONAL_THRESHOLDS['survey_fraction_min']}",
            "passed": fraction >= DIRECTIONAL_THRESHOLDS["survey_fraction_min"],
        }
    return checks
