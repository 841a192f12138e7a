"""Batched array views of window samples (internal plumbing).

Training and bulk analysis work on dense float64 arrays rather than on
per-sample objects; this module converts between the two.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .market_data import WindowSample

SIGMA_FLOOR = 1e-8


@dataclass
class WindowBatch:
    """Array form of a list of equally sized windows.

    All log-ratio series are relative to the previous day's close; the
    ratio features are the per-day (open/close-1, high/close-1, low/close-1,
    close/prev_close-1) columns.  ``target_ratio`` is NaN for inference-only
    samples.  ``r_hat`` holds each sample's symbol-level open-fraction
    estimate and is filled by the pipeline (0.0 until then).
    """

    symbols: list[str]
    target_dates: list[date | None]
    log_close_ret: np.ndarray   # (B, w)
    log_open_ret: np.ndarray    # (B, w)
    log_high_ret: np.ndarray    # (B, w)
    log_low_ret: np.ndarray     # (B, w)
    ratio_features: np.ndarray  # (B, w, 4)
    last_close: np.ndarray      # (B,)
    target_ratio: np.ndarray    # (B,)
    r_hat: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        if self.r_hat.size == 0:
            self.r_hat = np.zeros(len(self.symbols))

    def __len__(self) -> int:
        return self.log_close_ret.shape[0]

    @property
    def w(self) -> int:
        return self.log_close_ret.shape[1]

    def arithmetic_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample mean and (divisor-w) std of the log close returns."""
        m = self.log_close_ret.mean(axis=1)
        s = np.sqrt(((self.log_close_ret - m[:, None]) ** 2).mean(axis=1))
        return m, s

    def take(self, idx: np.ndarray) -> "WindowBatch":
        return WindowBatch(
            symbols=[self.symbols[i] for i in idx],
            target_dates=[self.target_dates[i] for i in idx],
            log_close_ret=self.log_close_ret[idx],
            log_open_ret=self.log_open_ret[idx],
            log_high_ret=self.log_high_ret[idx],
            log_low_ret=self.log_low_ret[idx],
            ratio_features=self.ratio_features[idx],
            last_close=self.last_close[idx],
            target_ratio=self.target_ratio[idx],
            r_hat=self.r_hat[idx],
        )


def build_batch(samples: list[WindowSample]) -> WindowBatch:
    if not samples:
        raise ValueError("cannot build a batch from zero samples")
    w = samples[0].w
    if any(s.w != w for s in samples):
        raise ValueError("all samples in a batch must share the window size")
    B = len(samples)
    opens = np.empty((B, w + 1))
    highs = np.empty((B, w + 1))
    lows = np.empty((B, w + 1))
    closes = np.empty((B, w + 1))
    for i, s in enumerate(samples):
        opens[i] = [b.open for b in s.bars]
        highs[i] = [b.high for b in s.bars]
        lows[i] = [b.low for b in s.bars]
        closes[i] = [b.close for b in s.bars]

    prev_c = closes[:, :-1]
    log_close = np.log(closes[:, 1:] / prev_c)
    log_open = np.log(opens[:, 1:] / prev_c)
    log_high = np.log(highs[:, 1:] / prev_c)
    log_low = np.log(lows[:, 1:] / prev_c)

    feats = np.empty((B, w, 4))
    feats[:, :, 0] = opens[:, 1:] / closes[:, 1:] - 1.0
    feats[:, :, 1] = highs[:, 1:] / closes[:, 1:] - 1.0
    feats[:, :, 2] = lows[:, 1:] / closes[:, 1:] - 1.0
    feats[:, :, 3] = closes[:, 1:] / prev_c - 1.0

    target = np.array([
        np.nan if s.target_close is None else s.target_close / s.bars[-1].close
        for s in samples
    ])
    return WindowBatch(
        symbols=[s.symbol for s in samples],
        target_dates=[s.target_date for s in samples],
        log_close_ret=log_close,
        log_open_ret=log_open,
        log_high_ret=log_high,
        log_low_ret=log_low,
        ratio_features=feats,
        last_close=closes[:, -1].copy(),
        target_ratio=target,
    )
