"""Weekly bank-asset panel construction.

Pipeline: fetch (or read) one CSV per series, inner-join on calendar weeks,
trim to the last ten calendar years, derive the residual "other" level,
convert to floored shares, and attach the lagged realized-volatility
precision regressor.  All fetch paths accept local files so nothing here
needs a network to run.
"""
from __future__ import annotations

import csv
import datetime
import io
import time
import urllib.error
import urllib.request
import warnings
from dataclasses import dataclass

import numpy as np

from . import simplex
from .errors import (DataIntegrityError, FetchError, FormatError,
                     InvalidInput, NumericalError)
from .panel import SeriesPanel, standardize_train

DEFAULT_ENDPOINT = "https://fred.stlouisfed.org/graph/fredgraph.csv?id={id}"

#: seasonally adjusted identifiers (loans has an in-family fallback)
SA_IDS = {"total": ("TLAACBW027SBOG",),
          "cash": ("CASACBW027SBOG",),
          "securities": ("SBCACBW027SBOG",),
          "loans": ("TOTLL", "LLBACBW027SBOG")}
#: not-seasonally-adjusted counterparts used all-or-nothing
NSA_IDS = {"total": ("TLAACBW027NBOG",),
           "cash": ("CASACBW027NBOG",),
           "securities": ("SBCACBW027NBOG",),
           "loans": ("LLBACBW027NBOG",)}

COMPONENTS = ["cash", "secr", "loans", "other"]
LOANS_INDEX = 2

_DATE_HEADERS = ("DATE", "date", "observation_date")


@dataclass
class RawSeries:
    """One downloaded series: sorted weekly (date, value) pairs."""

    id: str
    dates: list
    values: np.ndarray


def _http_get(url, timeout=30.0, retries=2):
    delay = 1.0
    for attempt in range(retries + 1):
        try:
            with urllib.request.urlopen(url, timeout=timeout) as resp:
                return resp.read().decode("utf-8")
        except (urllib.error.URLError, OSError) as exc:
            if attempt == retries:
                raise FetchError(f"GET {url} failed: {exc}")
            time.sleep(delay)
            delay *= 2.0
    raise FetchError(f"GET {url} failed")


def parse_series_csv(text, series_id, origin="<memory>"):
    """Parse a two-column FRED-style CSV into a :class:`RawSeries`.

    The date column is auto-detected among DATE/date/observation_date; the
    value column is the one named after the series when present, otherwise
    the first remaining column.  Missing-value markers ``.`` are dropped.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{origin}: empty file", line=1)
    header = [h.strip() for h in header]
    date_col = next((i for i, h in enumerate(header) if h in _DATE_HEADERS),
                    None)
    if date_col is None:
        raise FormatError(f"{origin}: no date column among "
                          f"{'/'.join(_DATE_HEADERS)}", line=1)
    value_col = next((i for i, h in enumerate(header)
                      if h.upper() == series_id.upper()), None)
    if value_col is None:
        value_col = next((i for i in range(len(header)) if i != date_col),
                         None)
    if value_col is None:
        raise FormatError(f"{origin}: no value column", line=1)
    dates, values = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            stamp = row[date_col].strip()
            datetime.date.fromisoformat(stamp)
            cell = row[value_col].strip()
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{origin}:{lineno}: {exc}", line=lineno)
        if cell == ".":
            continue
        try:
            value = float(cell)
        except ValueError:
            raise FormatError(f"{origin}:{lineno}: bad value {cell!r}",
                              line=lineno)
        if not np.isfinite(value):
            raise FormatError(f"{origin}:{lineno}: non-finite value",
                              line=lineno)
        dates.append(stamp)
        values.append(value)
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise FormatError(f"{origin}: dates not strictly increasing")
    return RawSeries(series_id, dates, np.asarray(values))


def fetch_series(series_id, source=DEFAULT_ENDPOINT, timeout=30.0,
                 retries=2):
    """Fetch one series from a URL template or read it from a local path."""
    if "://" in source:
        text = _http_get(source.format(id=series_id), timeout, retries)
        return parse_series_csv(text, series_id, origin=source)
    try:
        with open(source) as fh:
            text = fh.read()
    except OSError as exc:
        raise FetchError(f"cannot read {source}: {exc}")
    return parse_series_csv(text, series_id, origin=str(source))


def fetch_h8_series(fetcher=fetch_series):
    """Fetch the four H.8 component series with the SA/NSA switch.

    Seasonally adjusted identifiers are preferred; if any SA component is
    unavailable, every component falls back to its NSA counterpart so the
    panel stays seasonally consistent.  Returns ``(series_by_role, flag)``.
    """

    def try_ids(ids):
        out = {}
        for role, candidates in ids.items():
            last = None
            for sid in candidates:
                try:
                    out[role] = fetcher(sid)
                    break
                except FetchError as exc:
                    last = exc
            else:
                raise last or FetchError(f"no candidate id for {role}")
        return out

    try:
        return try_ids(SA_IDS), "SA"
    except FetchError:
        return try_ids(NSA_IDS), "NSA"


def years_before(date_iso, years):
    """Same calendar date ``years`` earlier; Feb 29 clamps to Feb 28."""
    d = datetime.date.fromisoformat(date_iso)
    try:
        return d.replace(year=d.year - years).isoformat()
    except ValueError:
        return d.replace(year=d.year - years, day=28).isoformat()


def precision_regressor(Y, ref_index, train_len):
    """Lagged smoothed realized log-ratio volatility, train-standardized.

    Steps: one-step log-ratio increments (the first row stands in for its
    own increment), root-mean-square across coordinates, four-week trailing
    mean (leading rows filled with the first defined value), a one-week lag,
    then standardization by the mean/sd of the first ``train_len`` entries
    with the sd guard.  Returns ``(z_raw, z_std)``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    T = Y.shape[0]
    if T < 2:
        raise InvalidInput("need at least two rows")
    eta = simplex.alr(Y, ref_index)
    d_eta = np.empty_like(eta)
    d_eta[0] = eta[0]
    d_eta[1:] = eta[1:] - eta[:-1]
    r = np.sqrt((d_eta * d_eta).mean(axis=1))
    rbar = np.empty(T)
    for t in range(T):
        rbar[t] = r[t - 3:t + 1].mean() if t >= 3 else np.nan
    first = rbar[3] if T > 3 else r[:T].mean()
    rbar[:3] = first
    z_raw = np.empty(T)
    z_raw[0] = rbar[0]
    z_raw[1:] = rbar[:-1]
    return z_raw, standardize_train(z_raw, train_len)


def holdout_length(T):
    """Test-window rule: ``min(104, floor(T / 4))`` weeks."""
    return min(104, T // 4)


def build_panel(series, floor=simplex.EPS_PROB, trim_years=10,
                max_negative_other=0.05, ref_index=LOANS_INDEX,
                train_len=None, sa_flag=None):
    """Assemble the four-part share panel from level series.

    Joins the total/cash/securities/loans levels on their common weeks,
    trims to the last ``trim_years`` calendar years, derives the residual
    other level, converts to shares, floors, and closes.  More than
    ``max_negative_other`` negative-other rows aborts with the observed
    fraction; a smaller positive fraction only warns.
    """
    for role in ("total", "cash", "securities", "loans"):
        if role not in series:
            raise InvalidInput(f"missing series role {role!r}")
    date_sets = [set(s.dates) for s in series.values()]
    common = sorted(set.intersection(*date_sets))
    if not common:
        raise DataIntegrityError("series share no common weeks")
    if trim_years is not None:
        cutoff = years_before(common[-1], trim_years)
        common = [d for d in common if d > cutoff]
    maps = {role: dict(zip(s.dates, s.values))
            for role, s in series.items()}
    total = np.array([maps["total"][d] for d in common])
    cash = np.array([maps["cash"][d] for d in common])
    secr = np.array([maps["securities"][d] for d in common])
    loans = np.array([maps["loans"][d] for d in common])
    other = total - cash - secr - loans
    if np.any(total <= 0.0):
        raise DataIntegrityError("nonpositive total assets")
    neg_frac = float(np.mean(other < 0.0))
    if neg_frac > max_negative_other:
        raise DataIntegrityError(
            f"{neg_frac:.4f} of weeks have negative residual other "
            f"(limit {max_negative_other})", fraction=neg_frac)
    if neg_frac > 0.0:
        warnings.warn(f"negative residual other in {neg_frac:.4f} of weeks",
                      stacklevel=2)
    shares = np.column_stack([cash, secr, loans, other]) / total[:, None]
    Y = simplex.floor_and_close(np.maximum(shares, 0.0), floor)
    T = len(common)
    if train_len is None:
        train_len = T - holdout_length(T)
    z_raw, z_std = precision_regressor(Y, ref_index, train_len)
    X = np.ones((T, 1))
    Z = np.column_stack([np.ones(T), z_std])
    meta = {"components": COMPONENTS, "ref_index": ref_index,
            "floor": floor, "train_len": int(train_len),
            "source_ids": {role: s.id for role, s in series.items()},
            "seasonal_adjustment": sa_flag, "m": 1, "r_phi": 2}
    return SeriesPanel(common, Y, X, Z, z_raw, meta)


def adf_test(series, lags=6, with_drift=True, crit=-2.86):
    """Augmented Dickey-Fuller regression and 5% decision.

    Regresses the first difference on the lagged level plus ``lags`` lagged
    differences (and a drift term); the unit root is rejected when the
    t-statistic of the lagged level falls below ``crit``.
    """
    y = np.asarray(series, dtype=np.float64)
    T = y.shape[0]
    if T <= lags + 2:
        raise InvalidInput("series too short for the requested lag order")
    dy = np.diff(y)
    rows = np.arange(lags + 1, T)
    cols = [y[rows - 1]]
    for i in range(1, lags + 1):
        cols.append(dy[rows - 1 - i])
    if with_drift:
        cols.insert(0, np.ones(rows.shape[0]))
    Xmat = np.column_stack(cols)
    target = dy[rows - 1]
    n, k = Xmat.shape
    xtx = Xmat.T @ Xmat
    if np.linalg.matrix_rank(xtx) < k:
        raise NumericalError("singular regression design")
    coef = np.linalg.solve(xtx, Xmat.T @ target)
    resid = target - Xmat @ coef
    sigma2 = float(resid @ resid) / (n - k)
    cov = sigma2 * np.linalg.inv(xtx)
    pos = 1 if with_drift else 0
    t_stat = float(coef[pos] / np.sqrt(cov[pos, pos]))
    return t_stat, bool(t_stat < crit)
