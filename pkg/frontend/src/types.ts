// API payload shapes, mirroring the service's documented JSON exactly.

export interface ModelBreakdown {
    transformer: number;
    lstm: number;
    gbt: number;
}

export interface PredictionRecord {
    symbol: string;
    predicted_return: number;
    rank: number;
    models: ModelBreakdown;
    ensemble: number;
    as_of: string;
    target_date: string;
}

export interface RankPayload {
    target_date: string;
    top: PredictionRecord[];
    bottom: PredictionRecord[];
}

export interface RefreshPayload {
    updated: number;
    failed: { symbol: string; reason: string }[];
    as_of: string;
}

export interface BarRow {
    date: string;
    open: number;
    high: number;
    low: number;
    close: number;
    volume: number;
}

export interface IndicatorRow {
    date: string;
    intraday_return: number;
    ema10: number;
    ema12: number;
    ema26: number;
    stoch_k: number;
    roc: number;
    rsi: number;
    accdo: number;
    macd: number;
    disparity5: number;
    disparity10: number;
    ma5: number;
    ma10: number;
    close_lag10: number;
    day_of_year: number;
}

export interface TickerPayload {
    bars: BarRow[];
    indicators: IndicatorRow[];
}

export interface ErrorPayload {
    detail: unknown;
}

export type ApiResult<T> =
    | { ok: true; status: number; data: T }
    | { ok: false; status: number; error: ErrorPayload | null };
