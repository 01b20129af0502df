"""Wire schemas for the prediction service."""

from __future__ import annotations

from datetime import date

from pydantic import BaseModel, Field


class ModelBreakdown(BaseModel):
    transformer: float
    lstm: float
    gbt: float


class PredictionRecord(BaseModel):
    symbol: str
    predicted_return: float
    rank: int = Field(ge=1)
    models: ModelBreakdown
    ensemble: float
    as_of: date
    target_date: date


class RankResponse(BaseModel):
    target_date: date
    top: list[PredictionRecord]
    bottom: list[PredictionRecord]


class FailedSymbol(BaseModel):
    symbol: str
    reason: str


class RefreshResponse(BaseModel):
    updated: int
    failed: list[FailedSymbol]
    as_of: date


class BarOut(BaseModel):
    date: date
    open: float
    high: float
    low: float
    close: float
    volume: int


class IndicatorRowOut(BaseModel):
    date: date
    intraday_return: float
    ema10: float
    ema12: float
    ema26: float
    stoch_k: float
    roc: float
    rsi: float
    accdo: float
    macd: float
    disparity5: float
    disparity10: float
    ma5: float
    ma10: float
    close_lag10: float
    day_of_year: int


class TickerResponse(BaseModel):
    bars: list[BarOut]
    indicators: list[IndicatorRowOut]


class HealthResponse(BaseModel):
    status: str
    model_digests: dict[str, str]
    data_as_of: date | None
