"""OHLC ingestion, windowing, chronological splits, and synthetic GBM data.

The synthetic generator produces daily bars whose closes follow a discrete
geometric Brownian motion with an AR(1) error chain, whose opens sit at a
fixed time fraction of the overnight-to-close interval, and whose extrema
come from an intraday Brownian bridge.  Ground-truth drift, volatility, and
open fraction are therefore known, which is what the recovery tests need.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParseError, SizingError, ValidationError

logger = logging.getLogger(__name__)

CSV_HEADER = ("date", "open", "high", "low", "close")


@dataclass(frozen=True, slots=True)
class OhlcBar:
    """One trading day's open/high/low/close prices."""

    day: date
    open: float
    high: float
    low: float
    close: float

    def __post_init__(self) -> None:
        prices = (self.open, self.high, self.low, self.close)
        if not all(math.isfinite(p) and p > 0 for p in prices):
            raise ValidationError(f"bar {self.day}: prices must be positive finite, got {prices}")
        if self.low > min(self.open, self.close):
            raise ValidationError(f"bar {self.day}: low {self.low} above open/close")
        if self.high < max(self.open, self.close):
            raise ValidationError(f"bar {self.day}: high {self.high} below open/close")


@dataclass(frozen=True, slots=True)
class WindowSample:
    """w+1 consecutive bars plus the next-day close target.

    The extra leading bar supplies the previous close for the first return
    step.  ``target_close is None`` marks an inference-only sample (the last
    window of a series, which has no observed next day).
    """

    symbol: str
    bars: tuple[OhlcBar, ...]
    target_close: float | None = None
    target_date: date | None = None

    def __post_init__(self) -> None:
        if len(self.bars) < 2:
            raise ValidationError("a window needs at least 2 bars")
        days = [b.day for b in self.bars]
        if any(later <= earlier for earlier, later in zip(days, days[1:])):
            raise ValidationError(f"{self.symbol}: window dates not strictly increasing")
        if (self.target_close is None) != (self.target_date is None):
            raise ValidationError("target_close and target_date must both be set or both absent")

    @property
    def w(self) -> int:
        return len(self.bars) - 1

    @property
    def is_inference_only(self) -> bool:
        return self.target_close is None


@dataclass(frozen=True)
class DatasetSplit:
    """Chronologically disjoint train/validation/test samples."""

    train: tuple[WindowSample, ...]
    validation: tuple[WindowSample, ...]
    test: tuple[WindowSample, ...]
    dropped_straddling: int = 0

    def content_hash(self) -> str:
        """Digest of sample identities; equal hashes mean identical splits."""
        h = hashlib.sha256()
        for name, part in (("train", self.train), ("val", self.validation), ("test", self.test)):
            h.update(name.encode())
            for s in part:
                h.update(f"{s.symbol}|{s.bars[0].day}|{s.target_date}|{s.bars[-1].close!r}".encode())
        return h.hexdigest()


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic regime-shift generator.

    ``regimes`` is a list of (length_in_days, drift_per_day, vol_per_day).
    ``ar_coefficient`` couples consecutive error terms; ``open_fraction`` is
    the true time fraction of the open within the close-to-close interval.
    Shock days add ``shock_scale`` (in error-term units) to that day's
    return with probability ``shock_probability``.
    """

    regimes: tuple[tuple[int, float, float], ...]
    ar_coefficient: float = 0.0
    open_fraction: float = 0.35
    shock_probability: float = 0.0
    shock_scale: float = 0.0
    seed: int = 0
    start_price: float = 100.0
    start_date: date = date(2010, 1, 4)
    bridge_steps: int = 20

    def __post_init__(self) -> None:
        if not self.regimes:
            raise ConfigError("at least one regime required")
        for length, _, sigma in self.regimes:
            if length < 2:
                raise ConfigError(f"regime length {length} too short")
            if not sigma > 0:
                raise ConfigError(f"regime volatility must be > 0, got {sigma}")
        if not -1 < self.ar_coefficient < 1:
            raise ConfigError(f"ar_coefficient must be in (-1, 1), got {self.ar_coefficient}")
        if not 0 < self.open_fraction <= 1:
            raise ConfigError(f"open_fraction must be in (0, 1], got {self.open_fraction}")
        if not 0 <= self.shock_probability <= 1:
            raise ConfigError("shock_probability must be in [0, 1]")
        if self.shock_scale < 0:
            raise ConfigError("shock_scale must be >= 0")
        if not self.start_price > 0:
            raise ConfigError("start_price must be positive")
        if self.bridge_steps < 2:
            raise ConfigError("bridge_steps must be >= 2")

    @property
    def total_days(self) -> int:
        return sum(length for length, _, _ in self.regimes)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_csv(path: str | Path, symbol: str) -> list[OhlcBar]:
    """Parse and validate one symbol's bars from a `date,open,high,low,close` file."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    bars: list[OhlcBar] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(c.strip().lower() for c in header) != CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                day = date.fromisoformat(row[0].strip())
                o, h, lo, c = (float(v) for v in row[1:])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            try:
                bar = OhlcBar(day, o, h, lo, c)
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno} ({symbol}): {exc}") from exc
            bars.append(bar)
    bars.sort(key=lambda b: b.day)
    for prev, cur in zip(bars, bars[1:]):
        if cur.day == prev.day:
            raise ValidationError(f"{path} ({symbol}): duplicate date {cur.day}")
    if not bars:
        raise ParseError(f"{path}: no data rows")
    return bars


def write_csv(bars: Iterable[OhlcBar], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for b in bars:
            writer.writerow([b.day.isoformat(), repr(b.open), repr(b.high), repr(b.low), repr(b.close)])


def load_universe(path: str | Path, symbol: str | None = None) -> dict[str, list[OhlcBar]]:
    """Load a single CSV (symbol = stem unless given) or a directory of CSVs."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise ParseError(f"{path}: no CSV files in directory")
        return {f.stem: load_csv(f, f.stem) for f in files}
    name = symbol or path.stem
    return {name: load_csv(path, name)}


# ---------------------------------------------------------------------------
# Windowing and splitting
# ---------------------------------------------------------------------------

def make_windows(bars: Sequence[OhlcBar], w: int, symbol: str = "SYM") -> list[WindowSample]:
    """Stride-1 sliding windows of w+1 bars, each with the next day's close as target.

    The final window has no next day and is emitted inference-only.
    """
    if w < 1:
        raise ConfigError(f"window size must be >= 1, got {w}")
    n = len(bars)
    if n < w + 2:
        raise SizingError(f"{symbol}: need at least {w + 2} bars for w={w}, got {n}")
    samples: list[WindowSample] = []
    for start in range(0, n - w):
        chunk = tuple(bars[start : start + w + 1])
        nxt = start + w + 1
        if nxt < n:
            samples.append(WindowSample(symbol, chunk, bars[nxt].close, bars[nxt].day))
        else:
            samples.append(WindowSample(symbol, chunk))
    return samples


def _partition_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    # Largest-remainder apportionment; ties go to the earlier split
    # (fractions quantized so float noise cannot flip a tie).
    raw = [r * n for r in ratios]
    counts = [int(math.floor(x)) for x in raw]
    remainder = n - sum(counts)
    order = sorted(range(3), key=lambda i: (-round(raw[i] - counts[i], 9), i))
    for i in range(remainder):
        counts[order[i]] += 1
    return counts[0], counts[1], counts[2]


def chronological_split(
    samples: Sequence[WindowSample],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> DatasetSplit:
    """Split on distinct target dates so all symbols share the same boundaries.

    A sample lands in the split containing its target date, and is kept only
    if its whole window lies past the previous split's boundary; windows that
    straddle a boundary are dropped to keep the splits informationally
    disjoint.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)}")
    targeted = [s for s in samples if not s.is_inference_only]
    if not targeted:
        raise ConfigError("no targeted samples to split")
    dates = sorted({s.target_date for s in targeted})
    n_train, n_val, n_test = _partition_counts(len(dates), ratios)
    if min(n_train, n_val, n_test) == 0:
        raise ConfigError(
            f"split of {len(dates)} target dates with ratios {ratios} leaves an empty part"
        )
    train_end = dates[n_train - 1]
    val_end = dates[n_train + n_val - 1]

    parts: tuple[list[WindowSample], list[WindowSample], list[WindowSample]] = ([], [], [])
    dropped = 0
    for s in sorted(targeted, key=lambda s: (s.target_date, s.symbol)):
        first_day = s.bars[0].day
        if s.target_date <= train_end:
            parts[0].append(s)
        elif s.target_date <= val_end:
            if first_day > train_end:
                parts[1].append(s)
            else:
                dropped += 1
        else:
            if first_day > val_end:
                parts[2].append(s)
            else:
                dropped += 1
    if any(not p for p in parts):
        sizes = tuple(len(p) for p in parts)
        raise ConfigError(f"empty split after dropping straddlers (sizes {sizes}); need more data")
    logger.debug("split: %d/%d/%d samples, %d straddlers dropped",
                 len(parts[0]), len(parts[1]), len(parts[2]), dropped)
    return DatasetSplit(tuple(parts[0]), tuple(parts[1]), tuple(parts[2]), dropped)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

def _weekdays(start: date, n: int) -> list[date]:
    days: list[date] = []
    d = start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += timedelta(days=1)
    return days


def _per_day_params(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    mu = np.empty(spec.total_days)
    sigma = np.empty(spec.total_days)
    pos = 0
    for length, m, s in spec.regimes:
        mu[pos : pos + length] = m
        sigma[pos : pos + length] = s
        pos += length
    return mu, sigma


def generate_synthetic(spec: SyntheticSpec) -> list[OhlcBar]:
    """Generate one symbol's bars; deterministic for a fixed seed.

    Day 0 is a flat seed bar at ``start_price``; every later day's close is
    ``prev * exp((mu - sigma^2/2) + sigma * e)`` where the error chain ``e``
    is AR(1) with stationary N(0,1) marginals, plus optional shock days.
    The open sits on an intraday Brownian bridge at time ``open_fraction``;
    the high/low are the bridge extrema widened to cover open and close.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.total_days
    mu, sigma = _per_day_params(spec)
    drift = mu - 0.5 * sigma**2

    # AR(1) latent error chain with stationary unit-variance marginals.
    rho = spec.ar_coefficient
    z = rng.standard_normal(n)
    eps = np.empty(n)
    eps[0] = z[0]
    scale = math.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        eps[t] = rho * eps[t - 1] + scale * z[t]

    if spec.shock_probability > 0 and spec.shock_scale > 0:
        hit = rng.uniform(size=n) < spec.shock_probability
        signs = rng.choice((-1.0, 1.0), size=n)
        eps_obs = eps + hit * signs * spec.shock_scale
    else:
        eps_obs = eps.copy()
    eps_obs[0] = 0.0  # day 0 is the flat seed bar

    log_ret = drift + sigma * eps_obs
    log_ret[0] = 0.0
    # Sequential products keep closes[t] bit-identical to prev * exp(log_ret[t]),
    # matching how opens/extrema are formed below (bar invariants stay exact).
    factors = np.exp(log_ret)
    factors[0] = spec.start_price
    closes = np.cumprod(factors)
    prev_closes = np.concatenate(([spec.start_price], closes[:-1]))

    # Intraday bridge grid: interior steps plus the exact open time.
    r = spec.open_fraction
    grid = {k / spec.bridge_steps for k in range(1, spec.bridge_steps)}
    if r < 1.0:
        grid.add(r)
    ts = np.array(sorted(grid))
    bounds = np.concatenate(([0.0], ts, [1.0]))
    dts = np.sqrt(np.diff(bounds))
    incr = rng.standard_normal((n, len(dts))) * dts
    walk = np.cumsum(incr, axis=1)
    w_grid, w_one = walk[:, :-1], walk[:, -1]
    bridge = w_grid - ts[None, :] * (w_one - eps_obs)[:, None]
    path = drift[:, None] * ts[None, :] + sigma[:, None] * bridge

    log_close = log_ret
    log_open = log_close if r >= 1.0 else path[:, int(np.searchsorted(ts, r))]
    log_high = np.maximum(path.max(axis=1), log_close)
    log_low = np.minimum(path.min(axis=1), log_close)

    opens = prev_closes * np.exp(log_open)
    highs = prev_closes * np.exp(log_high)
    lows = prev_closes * np.exp(log_low)
    opens[0] = highs[0] = lows[0] = spec.start_price

    days = _weekdays(spec.start_date, n)
    return [
        OhlcBar(days[t], float(opens[t]), float(highs[t]), float(lows[t]), float(closes[t]))
        for t in range(n)
    ]


def generate_universe(
    spec: SyntheticSpec,
    n_symbols: int,
    sigma_spread: float = 0.0,
    mu_jitter: float = 0.0,
) -> dict[str, list[OhlcBar]]:
    """Generate ``n_symbols`` independent series from per-symbol variations of ``spec``.

    Each symbol scales every regime's volatility by a log-uniform factor in
    [1/(1+sigma_spread), 1+sigma_spread] and shifts its drift by a uniform
    jitter in [-mu_jitter, +mu_jitter].
    """
    if n_symbols < 1:
        raise ConfigError("n_symbols must be >= 1")
    if sigma_spread < 0 or mu_jitter < 0:
        raise ConfigError("spreads must be >= 0")
    seeds = np.random.SeedSequence(spec.seed).spawn(n_symbols + 1)
    meta_rng = np.random.default_rng(seeds[-1])
    width = max(2, len(str(n_symbols - 1)))
    out: dict[str, list[OhlcBar]] = {}
    for i in range(n_symbols):
        if sigma_spread > 0:
            lo = math.log(1.0 / (1.0 + sigma_spread))
            hi = math.log(1.0 + sigma_spread)
            factor = math.exp(meta_rng.uniform(lo, hi))
        else:
            factor = 1.0
        jitter = meta_rng.uniform(-mu_jitter, mu_jitter) if mu_jitter > 0 else 0.0
        regimes = tuple((length, m + jitter, s * factor) for length, m, s in spec.regimes)
        sub = SyntheticSpec(
            regimes=regimes,
            ar_coefficient=spec.ar_coefficient,
            open_fraction=spec.open_fraction,
            shock_probability=spec.shock_probability,
            shock_scale=spec.shock_scale,
            seed=int(np.random.default_rng(seeds[i]).integers(0, 2**31 - 1)),
            start_price=spec.start_price,
            start_date=spec.start_date,
            bridge_steps=spec.bridge_steps,
        )
        out[f"S{i:0{width}d}"] = generate_synthetic(sub)
    return out


# ---------------------------------------------------------------------------
# Plain-text key=value spec parsing
# ---------------------------------------------------------------------------

_SPEC_FLOAT_KEYS = {
    "ar_coefficient", "open_fraction", "shock_probability", "shock_scale", "start_price",
}
_SPEC_INT_KEYS = {"seed", "bridge_steps", "symbols"}


def parse_spec_config(text: str) -> tuple[SyntheticSpec, dict[str, float]]:
    """Parse a key=value synthetic spec; returns the spec plus extra keys.

    Repeated ``regime=length,mu,sigma`` lines accumulate.  Extra keys not
    consumed by :class:`SyntheticSpec` (``symbols``, ``sigma_spread``,
    ``mu_jitter``) are returned for the caller.
    """
    regimes: list[tuple[int, float, float]] = []
    kwargs: dict = {}
    extras: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"spec line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key == "regime":
                fields = value.split(",")
                if len(fields) != 3:
                    raise ValueError("regime needs length,mu,sigma")
                regimes.append((int(fields[0]), float(fields[1]), float(fields[2])))
            elif key == "start_date":
                kwargs["start_date"] = date.fromisoformat(value)
            elif key in _SPEC_FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key in _SPEC_INT_KEYS and key != "symbols":
                kwargs[key] = int(value)
            elif key in ("symbols", "sigma_spread", "mu_jitter"):
                extras[key] = float(value)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ParseError(f"spec line {lineno}: {exc}") from exc
    if not regimes:
        raise ParseError("spec defines no regime= lines")
    return SyntheticSpec(regimes=tuple(regimes), **kwargs), extras
