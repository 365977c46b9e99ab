import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd


DEFAULT_WINDOW = ("2020-01-31", "2020-06-28")
FILL_POLICIES = (None, "zero", "previous")

DateLike = Union[str, pd.Timestamp, np.datetime64]


def _to_day(date: DateLike) -> pd.Timestamp:
    return pd.Timestamp(date).normalize()


@dataclass(frozen=True, eq=False)
class DailySeries:
    """Dated scalar series without gaps, values[k] belongs to start_date + k days.

    Attributes:
        start_date (pd.Timestamp): date of the first value.
        values (np.ndarray): one finite value per consecutive day.
        label (str): free text, e.g. the source column.

    """

    start_date: pd.Timestamp
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or len(values) == 0:
            raise ValueError(f"{self.label or 'series'} should be a non-empty 1D series.")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.label or 'series'} holds non-finite values.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "start_date", _to_day(self.start_date))
        self._check_values()

    def _check_values(self):
        pass

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DailySeries):
            return False
        return (
            self.start_date == other.start_date
            and self.label == other.label
            and np.array_equal(self.values, other.values)
        )

    @property
    def dates(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start_date, periods=len(self), freq="D")

    @property
    def end_date(self) -> pd.Timestamp:
        return self.start_date + pd.Timedelta(days=len(self) - 1)

    def to_series(self) -> pd.Series:
        return pd.Series(self.values, index=self.dates, name=self.label)

    @classmethod
    def from_series(cls, series: pd.Series, label: Optional[str] = None):
        """Build from a pandas series indexed by consecutive days."""
        index = pd.DatetimeIndex(series.index).normalize()
        if len(index) > 1 and not (np.diff(index.asi8) == pd.Timedelta(days=1).value).all():
            raise ValueError("Series index should be consecutive days.")
        label = series.name if label is None else label
        return cls(index[0], series.to_numpy(dtype=float), "" if label is None else str(label))

    def window(self, start: DateLike, end: DateLike):
        """Restrict to the days within [start, end]."""
        start, end = _to_day(start), _to_day(end)
        mask = (self.dates >= start) & (self.dates <= end)
        if not mask.any():
            raise ValueError(
                f"{self.label or 'series'} has no days within {start.date()} ... {end.date()}."
            )
        first = int(np.argmax(mask))
        return type(self)(self.dates[first], self.values[mask], self.label)

    def with_values(self, values: np.ndarray, label: Optional[str] = None):
        """Same dates, new values."""
        return DailySeries(self.start_date, values, self.label if label is None else label)


class ExternalSignal(DailySeries):
    """A DailySeries with values in [0, 1], the normalized hazard input."""

    def _check_values(self):
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError(f"{self.label or 'signal'} should be within [0, 1].")


class RtSeries(DailySeries):
    """A DailySeries of positive real-time reproduction numbers."""

    def _check_values(self):
        if np.any(self.values <= 0):
            first = int(np.argmax(self.values <= 0))
            raise ValueError(
                f"R_t should be positive, got {self.values[first]} "
                f"on {(self.start_date + pd.Timedelta(days=first)).date()}."
            )


@dataclass(frozen=True, eq=False)
class SurveySeries:
    """Sparse survey rounds of the share of people worried about infection.

    Attributes:
        dates (pd.DatetimeIndex): strictly increasing survey dates.
        pct (np.ndarray): percentage worried at every round, in (0, 100].
        transformed (np.ndarray): min-max normalized log-percentage.

    """

    dates: pd.DatetimeIndex
    pct: np.ndarray
    transformed: np.ndarray

    def __len__(self) -> int:
        return len(self.pct)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SurveySeries):
            return False
        return (
            self.dates.equals(other.dates)
            and np.array_equal(self.pct, other.pct)
            and np.array_equal(self.transformed, other.transformed)
        )


def _read_csv(path: str, columns: Sequence[str]) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Input file {path} does not exist.")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise ValueError(f"{path} is missing columns {missing}, found {list(df.columns)}.")
    return df


def _parse_dates(df: pd.DataFrame, column: str, path: str) -> pd.Series:
    dates = pd.to_datetime(df[column].str.strip(), format="%Y-%m-%d", errors="coerce")
    bad = dates.isna()
    if bad.any():
        # header is line 1
        row = int(np.argmax(bad.to_numpy())) + 2
        raise ValueError(f"{path}, row {row}: cannot parse date {df[column].iloc[row - 2]!r}.")
    return dates


def _parse_values(df: pd.DataFrame, column: str, path: str) -> pd.Series:
    values = pd.to_numeric(df[column].str.strip(), errors="coerce")
    bad = ~np.isfinite(values.to_numpy(dtype=float))
    if bad.any():
        row = int(np.argmax(bad)) + 2
        raise ValueError(
            f"{path}, row {row}: value {df[column].iloc[row - 2]!r} is not a finite number."
        )
    return values.astype(float)


def load_daily_csv(
    path: str,
    date_column: str = "date",
    value_column: str = "value",
    window: Optional[Tuple[DateLike, DateLike]] = DEFAULT_WINDOW,
    fill: Optional[str] = None,
    label: Optional[str] = None,
    series_class=DailySeries,
) -> DailySeries:
    """Load a daily series from a CSV file with a header row and ISO-8601 dates.

    Args:
        path (str): csv file.
        date_column (str, optional (default="date")): column of the dates.
        value_column (str, optional (default="value")): column of the values.
        window (tuple, optional (default=DEFAULT_WINDOW)): first and last day kept,
            None keeps every day.
        fill (str, optional (default=None)): policy for days missing within the kept range,
            None (missing days are an error), "zero" or "previous".
        label (str, optional (default=None)): label of the series, value_column by default.
        series_class (type, optional (default=DailySeries)): DailySeries or a subclass of it.

    Returns:
        DailySeries: gapless series spanning the days of the file within the window.

    Raises:
        FileNotFoundError: if path does not exist.
        ValueError: on unparseable rows, duplicate dates, non-finite values or unfilled gaps,
            naming the row.

    """
    if fill not in FILL_POLICIES:
        raise ValueError(f"Unknown fill policy {fill}, choose from {FILL_POLICIES}.")
    df = _read_csv(path, [date_column, value_column])
    if len(df) == 0:
        raise ValueError(f"{path} holds no rows.")
    dates = _parse_dates(df, date_column, path)
    values = _parse_values(df, value_column, path)

    duplicated = dates.duplicated()
    if duplicated.any():
        row = int(np.argmax(duplicated.to_numpy())) + 2
        raise ValueError(f"{path}, row {row}: duplicate date {dates.iloc[row - 2].date()}.")

    series = pd.Series(values.to_numpy(), index=pd.DatetimeIndex(dates)).sort_index()
    if window is not None:
        start, end = _to_day(window[0]), _to_day(window[1])
        if start > end:
            raise ValueError(f"Empty window {start.date()} ... {end.date()}.")
        series = series[(series.index >= start) & (series.index <= end)]
        if len(series) == 0:
            raise ValueError(f"{path} has no rows within {start.date()} ... {end.date()}.")

    series = series.asfreq("D")
    missing = series.index[series.isna()]
    if len(missing):
        if fill is None:
            shown = ", ".join(str(d.date()) for d in missing[:5])
            raise ValueError(
                f"{path} misses {len(missing)} day(s) ({shown}), choose a fill policy."
            )
        elif fill == "zero":
            series = series.fillna(0.0)
        else:
            series = series.ffill()
    return series_class.from_series(series, label=value_column if label is None else label)


def load_rt_csv(
    path: str,
    date_column: str = "date",
    value_column: str = "rt",
    window: Optional[Tuple[DateLike, DateLike]] = DEFAULT_WINDOW,
    fill: Optional[str] = None,
) -> RtSeries:
    """Load the real-time reproduction number series."""
    return load_daily_csv(
        path, date_column, value_column, window=window, fill=fill, series_class=RtSeries
    )


def load_survey_csv(
    path: str,
    date_column: str = "date",
    value_column: str = "pct",
    start_column: str = "start_date",
    end_column: str = "end_date",
) -> SurveySeries:
    """Load survey rounds and transform them.

    A round is dated by date_column, or by the midpoint of start_column and end_column
    (rounded down to a day) when the file has no date_column.

    """
    df = _read_csv(path, [value_column])
    if date_column in df.columns:
        dates = _parse_dates(df, date_column, path)
    elif start_column in df.columns and end_column in df.columns:
        start = _parse_dates(df, start_column, path)
        end = _parse_dates(df, end_column, path)
        if (end < start).any():
            row = int(np.argmax((end < start).to_numpy())) + 2
            raise ValueError(f"{path}, row {row}: survey ends before it starts.")
        dates = start + pd.to_timedelta((end - start).dt.days // 2, unit="D")
    else:
        raise ValueError(
            f"{path} needs a {date_column} column, or {start_column} and {end_column}."
        )
    pct = _parse_values(df, value_column, path)
    return transform_survey(list(zip(dates, pct)))


def min_max_normalize(series: DailySeries) -> ExternalSignal:
    """(v - min) / (max - min), a constant series maps to zeros."""
    values = series.values
    low, high = values.min(), values.max()
    if high == low:
        normalized = np.zeros_like(values)
    else:
        normalized = (values - low) / (high - low)
    return ExternalSignal(series.start_date, normalized, series.label)


def transform_survey(points: Sequence[Tuple[DateLike, float]]) -> SurveySeries:
    """Log of the percentage worried, min-max normalized across the rounds.

    Args:
        points (list): (date, pct) pairs with strictly increasing dates and 0 < pct <= 100.

    Raises:
        ValueError: if a percentage is outside (0, 100] or dates do not increase.

    """
    if len(points) == 0:
        raise ValueError("At least one survey round is needed.")
    dates = pd.DatetimeIndex([_to_day(d) for d, _ in points])
    pct = np.array([p for _, p in points], dtype=float)
    for d, p in zip(dates, pct):
        if not np.isfinite(p) or not 0 < p <= 100:
            raise ValueError(f"Survey percentage on {d.date()} should be in (0, 100], not {p}.")
    if len(dates) > 1 and not (np.diff(dates.asi8) > 0).all():
        raise ValueError("Survey dates should be strictly increasing.")
    log_pct = np.log(pct)
    low, high = log_pct.min(), log_pct.max()
    if high == low:
        transformed = np.zeros_like(log_pct)
    else:
        transformed = (log_pct - low) / (high - low)
    return SurveySeries(dates, pct, transformed)


def smooth_centered(series: DailySeries, width: int = 7) -> DailySeries:
    """Centered rolling mean, shrinking at the edges."""
    if width < 1:
        raise ValueError(f"Smoothing width should be positive, not {width}.")
    smoothed = series.to_series().rolling(width, center=True, min_periods=1).mean()
    return type(series).from_series(smoothed, label=series.label)


def align(*series: DailySeries) -> List[DailySeries]:
    """Restrict every series to the days they all share."""
    if not series:
        return []
    start = max(s.start_date for s in series)
    end = min(s.end_date for s in series)
    if start > end:
        raise ValueError("Series do not overlap.")
    return [s.window(start, end) for s in series]


def check_aligned(a: DailySeries, b: DailySeries) -> None:
    """Raise ValueError unless a and b cover the same days."""
    if a.start_date != b.start_date or len(a) != len(b):
        raise ValueError(
            f"Series are not aligned: {a.label or 'a'} covers {a.start_date.date()} ... "
            f"{a.end_date.date()}, {b.label or 'b'} covers {b.start_date.date()} ... "
            f"{b.end_date.date()}."
        )


def write_daily_csv(series: DailySeries, path: str) -> None:
    """Write date,value rows, floats with round-trip precision."""
    print(f"Saving {path}")
    df = pd.DataFrame({"date": series.dates.strftime("%Y-%m-%d"), "value": series.values})
    df.to_csv(path, index=False, float_format="%.17g")


def write_survey_csv(survey: SurveySeries, path: str) -> None:
    print(f"Saving {path}")
    df = pd.DataFrame(
        {
            "date": survey.dates.strftime("%Y-%m-%d"),
            "pct": survey.pct,
            "transformed": survey.transformed,
        }
    )
    df.to_csv(path, index=False, float_format="%.17g")
