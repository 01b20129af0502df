"""OHLCV acquisition: chart-API fetch, CSV load, caching, universe assembly."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import httpx

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://query1.finance.yahoo.com"
DATA_URL_ENV = "I2E_DATA_URL"
CACHE_DIR_ENV = "I2E_CACHE_DIR"

CSV_HEADER = ["date", "open", "high", "low", "close", "volume"]


class DataError(Exception):
    """Base class for market-data failures."""


class FetchError(DataError):
    """Transient fetch failure (network / HTTP 5xx); safe to retry."""


class SymbolUnavailableError(DataError):
    """The source does not know this symbol; caller should drop it."""


class CsvFormatError(DataError):
    """CSV file is structurally unusable (bad header, or no parseable rows)."""


@dataclass(frozen=True)
class DailyBar:
    """One ticker-day of OHLCV. Prices positive, volume non-negative."""

    date: date
    open: float
    high: float
    low: float
    close: float
    volume: int

    def is_valid(self) -> bool:
        return (
            self.open > 0
            and self.high > 0
            and self.low > 0
            and self.close > 0
            and self.volume >= 0
            and self.low <= min(self.open, self.close)
            and self.high >= max(self.open, self.close)
            and self.low <= self.high
        )


@dataclass(frozen=True)
class TickerSeries:
    """Date-ascending bars for one symbol."""

    symbol: str
    bars: tuple[DailyBar, ...]

    def __post_init__(self) -> None:
        dates = [b.date for b in self.bars]
        if any(later <= earlier for earlier, later in zip(dates, dates[1:])):
            raise ValueError(f"{self.symbol}: bar dates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.bars)

    def first_date(self) -> date | None:
        return self.bars[0].date if self.bars else None

    def last_date(self) -> date | None:
        return self.bars[-1].date if self.bars else None

    def slice_dates(self, start: date | None = None, end: date | None = None) -> "TickerSeries":
        kept = tuple(
            b
            for b in self.bars
            if (start is None or b.date >= start) and (end is None or b.date <= end)
        )
        return TickerSeries(self.symbol, kept)


@dataclass
class Universe:
    """Immutable map of symbol -> TickerSeries; every member non-empty."""

    series_by_symbol: dict[str, TickerSeries]
    as_of: date

    def __post_init__(self) -> None:
        for sym, series in self.series_by_symbol.items():
            if len(series) == 0:
                raise ValueError(f"universe member {sym} has no bars")

    @classmethod
    def from_series(cls, series_list: list[TickerSeries]) -> "Universe":
        members = {s.symbol: s for s in series_list if len(s) > 0}
        if not members:
            raise ValueError("universe needs at least one non-empty series")
        as_of = max(s.last_date() for s in members.values())
        return cls(members, as_of)

    def symbols(self) -> list[str]:
        return sorted(self.series_by_symbol)


@dataclass
class RowError:
    row: int
    reason: str


def _clean_series(symbol: str, bars: list[DailyBar]) -> tuple[TickerSeries, int]:
    """Sort by date, drop duplicates and invariant violations; return (series, dropped)."""
    bars = sorted(bars, key=lambda b: b.date)
    kept: list[DailyBar] = []
    dropped = 0
    last: date | None = None
    for bar in bars:
        if not bar.is_valid():
            dropped += 1
            continue
        if last is not None and bar.date <= last:
            dropped += 1
            continue
        kept.append(bar)
        last = bar.date
    if dropped:
        log.warning("%s: dropped %d invalid/duplicate bars", symbol, dropped)
    return TickerSeries(symbol, tuple(kept)), dropped


def parse_chart_json(symbol: str, payload: dict) -> tuple[TickerSeries, int]:
    """Parse a chart-endpoint response into a series, counting dropped bars.

    Expected layout: chart.result[0] with parallel `timestamp` and
    indicators.quote[0].{open,high,low,close,volume} arrays.
    """
    chart = payload.get("chart") or {}
    error = chart.get("error")
    result = chart.get("result")
    if error or not result:
        reason = (error or {}).get("description", "no result") if isinstance(error, dict) else "no result"
        raise SymbolUnavailableError(f"{symbol}: {reason}")
    node = result[0]
    timestamps = node.get("timestamp") or []
    quote = (node.get("indicators", {}).get("quote") or [{}])[0]
    opens = quote.get("open") or []
    highs = quote.get("high") or []
    lows = quote.get("low") or []
    closes = quote.get("close") or []
    volumes = quote.get("volume") or []
    bars: list[DailyBar] = []
    dropped = 0
    for i, ts in enumerate(timestamps):
        try:
            fields = (opens[i], highs[i], lows[i], closes[i], volumes[i])
        except IndexError:
            dropped += 1
            continue
        if any(v is None for v in fields):
            dropped += 1
            continue
        day = datetime.fromtimestamp(ts, tz=timezone.utc).date()
        bars.append(
            DailyBar(day, float(opens[i]), float(highs[i]), float(lows[i]), float(closes[i]), int(volumes[i]))
        )
    series, cleaned = _clean_series(symbol, bars)
    return series, dropped + cleaned


def resolve_base_url(base_url: str | None = None) -> str:
    return base_url or os.environ.get(DATA_URL_ENV) or DEFAULT_BASE_URL


def fetch_history(
    symbol: str,
    start: date,
    end: date,
    *,
    base_url: str | None = None,
    client: httpx.Client | None = None,
    timeout: float = 30.0,
) -> TickerSeries:
    """Fetch daily bars for `symbol` within [start, end] from the chart endpoint."""
    if not symbol:
        raise ValueError("symbol must be non-empty")
    if start > end:
        raise ValueError("range start must be <= end")
    url = f"{resolve_base_url(base_url)}/v8/finance/chart/{symbol}"
    # period2 is exclusive at the source, so push it one day past `end`.
    params = {
        "period1": int(datetime(start.year, start.month, start.day, tzinfo=timezone.utc).timestamp()),
        "period2": int(datetime(end.year, end.month, end.day, tzinfo=timezone.utc).timestamp()) + 86_400,
        "interval": "1d",
    }
    owns_client = client is None
    client = client or httpx.Client(timeout=timeout)
    try:
        try:
            resp = client.get(url, params=params)
        except httpx.HTTPError as exc:
            raise FetchError(f"{symbol}: {exc}") from exc
        if resp.status_code == 404:
            raise SymbolUnavailableError(f"{symbol}: not found at source")
        if resp.status_code >= 500:
            raise FetchError(f"{symbol}: upstream returned {resp.status_code}")
        if resp.status_code != 200:
            raise SymbolUnavailableError(f"{symbol}: upstream returned {resp.status_code}")
        series, _ = parse_chart_json(symbol, resp.json())
    finally:
        if owns_client:
            client.close()
    return series.slice_dates(start, end)


def read_csv_rows(path: Path) -> tuple[list[DailyBar], list[RowError]]:
    """Parse a bar CSV; malformed rows are collected, not fatal."""
    path = Path(path)
    if not path.exists():
        raise CsvFormatError(f"{path}: no such file")
    bars: list[DailyBar] = []
    errors: list[RowError] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if [h.strip().lower() for h in header] != CSV_HEADER:
            raise CsvFormatError(f"{path}: header must be {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 6:
                errors.append(RowError(lineno, f"expected 6 fields, got {len(row)}"))
                continue
            try:
                bar = DailyBar(
                    date.fromisoformat(row[0].strip()),
                    float(row[1]),
                    float(row[2]),
                    float(row[3]),
                    float(row[4]),
                    int(float(row[5])),
                )
            except (ValueError, TypeError) as exc:
                errors.append(RowError(lineno, str(exc)))
                continue
            if not bar.is_valid():
                errors.append(RowError(lineno, "OHLC/volume invariant violated"))
                log.warning("%s row %d: OHLC invariant violated, dropped", path.name, lineno)
                continue
            bars.append(bar)
    if not bars and errors:
        raise CsvFormatError(f"{path}: all {len(errors)} data rows failed to parse")
    return bars, errors


def load_csv(path: Path | str, symbol: str | None = None) -> TickerSeries:
    """Load one ticker's bars from CSV; symbol defaults to the filename stem."""
    path = Path(path)
    symbol = symbol or path.stem.upper()
    bars, _ = read_csv_rows(path)
    series, _ = _clean_series(symbol, bars)
    return series


def exclude_first_year(series: TickerSeries) -> TickerSeries:
    """Drop every bar within 365 calendar days of the series' first bar."""
    if len(series) == 0:
        raise ValueError("series must be non-empty")
    cutoff = series.bars[0].date + timedelta(days=365)
    return TickerSeries(series.symbol, tuple(b for b in series.bars if b.date > cutoff))


def coverage_histogram(universe: Universe) -> dict[date, int]:
    """Per-date count of tickers with a bar on that date."""
    counts: dict[date, int] = {}
    for series in universe.series_by_symbol.values():
        for bar in series.bars:
            counts[bar.date] = counts.get(bar.date, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# Local CSV cache: <cache_dir>/<SYMBOL>.csv + manifest.json


class BarCache:
    """CSV-per-symbol cache; refresh appends only strictly newer dates."""

    def __init__(self, cache_dir: Path | str):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.cache_dir / "manifest.json"

    def _symbol_path(self, symbol: str) -> Path:
        return self.cache_dir / f"{symbol.upper()}.csv"

    def has(self, symbol: str) -> bool:
        return self._symbol_path(symbol).exists()

    def load(self, symbol: str) -> TickerSeries:
        return load_csv(self._symbol_path(symbol), symbol)

    def save(self, series: TickerSeries) -> None:
        write_series_csv(series, self._symbol_path(series.symbol))
        self._update_manifest(series)

    def append_newer(self, fresh: TickerSeries) -> int:
        """Merge freshly fetched bars; only dates after the cached end are added."""
        if not self.has(fresh.symbol):
            self.save(fresh)
            return len(fresh)
        cached = self.load(fresh.symbol)
        last = cached.last_date()
        new_bars = tuple(b for b in fresh.bars if last is None or b.date > last)
        if new_bars:
            merged = TickerSeries(fresh.symbol, cached.bars + new_bars)
            self.save(merged)
        return len(new_bars)

    def _update_manifest(self, series: TickerSeries) -> None:
        manifest = self.read_manifest()
        manifest[series.symbol] = {
            "start": series.first_date().isoformat() if len(series) else None,
            "end": series.last_date().isoformat() if len(series) else None,
            "rows": len(series),
        }
        payload = {"symbols": manifest}
        self.manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def read_manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {}
        return json.loads(self.manifest_path.read_text()).get("symbols", {})


def write_series_csv(series: TickerSeries, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for b in series.bars:
            writer.writerow([b.date.isoformat(), repr(b.open), repr(b.high), repr(b.low), repr(b.close), b.volume])


@dataclass
class UniverseBuildResult:
    universe: Universe | None
    failed: dict[str, str] = field(default_factory=dict)


def build_universe(
    symbols: list[str],
    start: date,
    end: date,
    *,
    base_url: str | None = None,
    client: httpx.Client | None = None,
    cache: BarCache | None = None,
    max_workers: int = 8,
) -> UniverseBuildResult:
    """Fetch many tickers with bounded fan-out; unavailable symbols are dropped.

    The universe map is assembled by this single caller after all fetches
    resolve; cached series are reused and refreshed with strictly newer bars.
    """

    def fetch_one(symbol: str) -> TickerSeries:
        if cache is not None and cache.has(symbol):
            cached = cache.load(symbol)
            last = cached.last_date()
            if last is not None and last < end:
                fresh = fetch_history(symbol, last, end, base_url=base_url, client=client)
                cache.append_newer(fresh)
                cached = cache.load(symbol)
            return cached.slice_dates(start, end)
        series = fetch_history(symbol, start, end, base_url=base_url, client=client)
        if cache is not None:
            cache.append_newer(series)
        return series

    results: dict[str, TickerSeries] = {}
    failed: dict[str, str] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(fetch_one, sym): sym for sym in symbols}
        for fut in as_completed(futures):
            sym = futures[fut]
            try:
                series = fut.result()
            except DataError as exc:
                failed[sym] = str(exc)
                continue
            if len(series) > 0:
                results[sym] = series
            else:
                failed[sym] = "no bars in range"
    if not results:
        return UniverseBuildResult(None, failed)
    return UniverseBuildResult(Universe.from_series(list(results.values())), failed)
