"""HTTP API: data refresh, ranked next-day predictions, ticker history.

Predictions are computed once per refresh into an immutable snapshot; readers
always see either the old snapshot or the new one, never a partial build.
"""

from __future__ import annotations

import logging
import threading
from datetime import date

import httpx
from fastapi import FastAPI, HTTPException, Query

from ..config import RunConfig
from ..market_data import DataError, fetch_history
from ..pipeline import snapshot_builder
from ..snapshot import PredictionEntry, PredictionSnapshot
from .schemas import (
    BarOut,
    FailedSymbol,
    HealthResponse,
    IndicatorRowOut,
    ModelBreakdown,
    PredictionRecord,
    RankResponse,
    RefreshResponse,
    TickerResponse,
)

log = logging.getLogger(__name__)


class ServiceState:
    def __init__(self, config: RunConfig, client: httpx.Client | None = None, clock=None):
        self.config = config
        self.client = client
        self.clock = clock or date.today
        self.builder = snapshot_builder(config)
        self.snapshot: PredictionSnapshot | None = None
        self.refresh_lock = threading.Lock()

    def pull_upstream(self) -> tuple[int, list[FailedSymbol]]:
        """Fetch strictly newer bars for every universe symbol (http source)."""
        if self.config.data.source != "http":
            return 0, []
        updated = 0
        failed: list[FailedSymbol] = []
        today = self.clock()
        for symbol in self.builder.universe_symbols():
            cached = self.builder.cache.load(symbol)
            since = cached.last_date() or self.config.data.start_date()
            if since >= today:
                continue
            try:
                fresh = fetch_history(
                    symbol, since, today, base_url=self.config.data.base_url, client=self.client
                )
            except DataError as exc:
                failed.append(FailedSymbol(symbol=symbol, reason=str(exc)))
                continue
            added = self.builder.cache.append_newer(fresh)
            if added:
                self.builder.recompute_features(symbol)
                updated += 1
        return updated, failed

    def refresh(self) -> RefreshResponse:
        with self.refresh_lock:
            updated, failed = self.pull_upstream()
            symbols = self.builder.universe_symbols()
            if not symbols:
                raise HTTPException(status_code=502, detail="universe is empty")
            if failed and len(failed) == len(symbols):
                raise HTTPException(
                    status_code=502,
                    detail={"message": "refresh failed for every symbol", "failed": [f.model_dump() for f in failed]},
                )
            current = self.snapshot
            if updated == 0 and current is not None:
                # No new bars: the existing snapshot is already today's answer.
                return RefreshResponse(updated=0, failed=failed, as_of=current.as_of)
            snapshot = self.builder.build()
            self.snapshot = snapshot  # atomic reference swap
            return RefreshResponse(updated=updated, failed=failed, as_of=snapshot.as_of)


def _record(entry: PredictionEntry, snapshot: PredictionSnapshot) -> PredictionRecord:
    return PredictionRecord(
        symbol=entry.symbol,
        predicted_return=entry.predicted_return,
        rank=entry.rank,
        models=ModelBreakdown(transformer=entry.transformer, lstm=entry.lstm, gbt=entry.gbt),
        ensemble=entry.ensemble,
        as_of=snapshot.as_of,
        target_date=snapshot.target_date,
    )


def create_app(config: RunConfig, client: httpx.Client | None = None, clock=None) -> FastAPI:
    state = ServiceState(config, client, clock)
    app = FastAPI(title="i2e prediction service", version="1")
    app.state.service = state

    @app.post("/api/v1/refresh", response_model=RefreshResponse)
    def refresh() -> RefreshResponse:
        return state.refresh()

    @app.get("/api/v1/rank", response_model=RankResponse)
    def rank(k: int = Query(default=5, ge=1)) -> RankResponse:
        snapshot = state.snapshot
        if snapshot is None:
            raise HTTPException(status_code=409, detail="refresh required")
        if k > len(snapshot.records) // 2:
            raise HTTPException(
                status_code=422,
                detail=f"k={k} exceeds half the predicted universe ({len(snapshot.records)} symbols)",
            )
        top, bottom = snapshot.top_bottom(k)
        return RankResponse(
            target_date=snapshot.target_date,
            top=[_record(e, snapshot) for e in top],
            bottom=[_record(e, snapshot) for e in bottom],
        )

    @app.get("/api/v1/tickers/{symbol}", response_model=TickerResponse)
    def ticker(symbol: str, from_: str | None = Query(default=None, alias="from"), to: str | None = None) -> TickerResponse:
        sym = symbol.upper()
        if sym not in state.builder.universe_symbols():
            raise HTTPException(status_code=404, detail=f"unknown ticker {symbol!r}")
        try:
            lo = date.fromisoformat(from_) if from_ else None
            hi = date.fromisoformat(to) if to else None
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        series = state.builder.cache.load(sym)
        bars = [
            BarOut(date=b.date, open=b.open, high=b.high, low=b.low, close=b.close, volume=b.volume)
            for b in series.bars
            if (lo is None or b.date >= lo) and (hi is None or b.date <= hi)
        ]
        rows = [
            IndicatorRowOut(**{k: getattr(r, k) for k in IndicatorRowOut.model_fields})
            for r in state.builder.feature_rows(sym)
            if (lo is None or r.date >= lo) and (hi is None or r.date <= hi)
        ]
        return TickerResponse(bars=bars, indicators=rows)

    @app.get("/api/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        snapshot = state.snapshot
        as_of = snapshot.as_of if snapshot else None
        if as_of is None:
            manifest = state.builder.cache.read_manifest()
            ends = [v.get("end") for v in manifest.values() if v.get("end")]
            as_of = max((date.fromisoformat(e) for e in ends), default=None)
        return HealthResponse(status="ok", model_digests=state.builder.bundle.digests, data_as_of=as_of)

    return app
