// Pure HTML/SVG string renderers; every number shown comes straight from an
// API payload field, never recomputed here.

import type { ErrorPayload, IndicatorRow, PredictionRecord, RankPayload, TickerPayload } from "./types.js";

export const PRICE_SERIES = ["close", "ema10", "ema12", "ema26", "ma5", "ma10"] as const;
export const OSCILLATOR_SERIES = ["rsi", "stoch_k"] as const;
export type SeriesName = (typeof PRICE_SERIES)[number] | (typeof OSCILLATOR_SERIES)[number] | "macd";

const SERIES_COLORS: Record<string, string> = {
    close: "#222222",
    ema10: "#1f77b4",
    ema12: "#ff7f0e",
    ema26: "#2ca02c",
    ma5: "#9467bd",
    ma10: "#8c564b",
    rsi: "#d62728",
    stoch_k: "#17becf",
    macd: "#7f7f7f",
};

function escapeHtml(raw: string): string {
    return raw
        .replace(/&/g, "&amp;")
        .replace(/</g, "&lt;")
        .replace(/>/g, "&gt;")
        .replace(/"/g, "&quot;");
}

function pct(value: number): string {
    const sign = value > 0 ? "+" : "";
    return `${sign}${(value * 100).toFixed(3)}%`;
}

function rankRow(record: PredictionRecord, side: "long" | "short"): string {
    return (
        `<tr class="rank-row ${side}-row" data-symbol="${escapeHtml(record.symbol)}">` +
        `<td>${record.rank}</td>` +
        `<td>${escapeHtml(record.symbol)}</td>` +
        `<td class="num">${pct(record.predicted_return)}</td>` +
        `<td class="num">${pct(record.models.transformer)}</td>` +
        `<td class="num">${pct(record.models.lstm)}</td>` +
        `<td class="num">${pct(record.models.gbt)}</td>` +
        `</tr>`
    );
}

function rankTable(records: PredictionRecord[], k: number, side: "long" | "short", title: string): string {
    const rows = records.slice(0, k);
    const notice =
        rows.length < k
            ? `<p class="notice">server returned only ${rows.length} of ${k} requested rows</p>`
            : "";
    return (
        `<section class="rank-table ${side}">` +
        `<h2>${title}</h2>${notice}` +
        `<table><thead><tr><th>#</th><th>Symbol</th><th>Ensemble</th>` +
        `<th>Transformer</th><th>LSTM</th><th>GBT</th></tr></thead><tbody>` +
        rows.map((r) => rankRow(r, side)).join("") +
        `</tbody></table></section>`
    );
}

export function renderRankingView(payload: RankPayload, k: number): string {
    return (
        `<div class="ranking" data-target-date="${payload.target_date}">` +
        `<p class="target">predictions for <strong>${payload.target_date}</strong></p>` +
        rankTable(payload.top, k, "long", `Top ${k} — buy candidates`) +
        rankTable(payload.bottom, k, "short", `Bottom ${k} — short candidates`) +
        `</div>`
    );
}

export function renderRefreshStatus(asOf: string, updated: number, failed: { symbol: string; reason: string }[], stale: boolean): string {
    const staleNote = stale ? ` <span class="stale">stale snapshot (as of ${asOf})</span>` : "";
    const failures = failed.length
        ? `<ul class="failures">${failed
              .map((f) => `<li>${escapeHtml(f.symbol)}: ${escapeHtml(f.reason)}</li>`)
              .join("")}</ul>`
        : "";
    return `<p class="status">data as of <strong>${asOf}</strong>, ${updated} symbols updated${staleNote}</p>${failures}`;
}

export function renderRefreshRequired(): string {
    return `<div class="prompt" data-state="refresh-required">` +
        `<p>No prediction snapshot yet — press <strong>Refresh</strong> to update stock data and get predictions.</p>` +
        `</div>`;
}

export function renderServerError(status: number, error: ErrorPayload | null): string {
    const body = error === null ? "(no body)" : escapeHtml(JSON.stringify(error.detail));
    return `<div class="error" data-status="${status}"><p>server error ${status}</p><pre>${body}</pre></div>`;
}

export function renderUnknownTicker(symbol: string): string {
    return `<div class="error" data-state="unknown-ticker"><p>unknown ticker &quot;${escapeHtml(symbol)}&quot;</p></div>`;
}

export function renderEmptyChart(symbol: string): string {
    return `<div class="placeholder" data-state="empty-range">` +
        `<p>no data for ${escapeHtml(symbol)} in the selected range</p></div>`;
}

function polyline(name: string, xs: number[], ys: number[], lo: number, hi: number, width: number, height: number, hidden: boolean): string {
    const span = hi - lo || 1;
    const step = xs.length > 1 ? width / (xs.length - 1) : 0;
    const points = ys
        .map((y, i) => `${(i * step).toFixed(1)},${(height - ((y - lo) / span) * height).toFixed(1)}`)
        .join(" ");
    const style = hidden ? ` style="display:none"` : "";
    return (
        `<polyline data-series="${name}" data-points="${ys.length}" fill="none" ` +
        `stroke="${SERIES_COLORS[name] ?? "#000"}" stroke-width="1"${style} points="${points}" />`
    );
}

function chartPanel(
    title: string,
    rows: IndicatorRow[],
    names: readonly string[],
    hidden: Set<string>,
    fixedRange?: [number, number],
): string {
    const width = 640;
    const height = 160;
    const xs = rows.map((_, i) => i);
    const visibleValues: number[] = [];
    for (const name of names) {
        for (const row of rows) visibleValues.push(row[name as keyof IndicatorRow] as number);
    }
    const lo = fixedRange ? fixedRange[0] : Math.min(...visibleValues);
    const hi = fixedRange ? fixedRange[1] : Math.max(...visibleValues);
    const lines = names
        .map((name) =>
            polyline(
                name,
                xs,
                rows.map((r) => r[name as keyof IndicatorRow] as number),
                lo,
                hi,
                width,
                height,
                hidden.has(name),
            ),
        )
        .join("");
    return (
        `<figure class="panel" data-panel="${title}">` +
        `<figcaption>${title}</figcaption>` +
        `<svg viewBox="0 0 ${width} ${height}" role="img">${lines}</svg>` +
        `</figure>`
    );
}

export function renderTickerView(symbol: string, payload: TickerPayload, hidden: Set<string>): string {
    if (payload.bars.length === 0 && payload.indicators.length === 0) {
        return renderEmptyChart(symbol);
    }
    const rows = payload.indicators;
    const priceRows = rows.length ? rows : [];
    const closeSeries = payload.bars.map((b) => b.close);
    // price panel plots the close from bars plus the MA/EMA overlays
    const width = 640;
    const height = 200;
    const candidates = [...closeSeries];
    for (const name of ["ema10", "ema12", "ema26", "ma5", "ma10"]) {
        if (!hidden.has(name)) for (const r of priceRows) candidates.push(r[name as keyof IndicatorRow] as number);
    }
    const lo = Math.min(...candidates);
    const hi = Math.max(...candidates);
    const pricePanel =
        `<figure class="panel" data-panel="price"><figcaption>${escapeHtml(symbol)} price</figcaption>` +
        `<svg viewBox="0 0 ${width} ${height}" role="img">` +
        polyline("close", closeSeries.map((_, i) => i), closeSeries, lo, hi, width, height, hidden.has("close")) +
        ["ema10", "ema12", "ema26", "ma5", "ma10"]
            .map((name) =>
                polyline(
                    name,
                    priceRows.map((_, i) => i),
                    priceRows.map((r) => r[name as keyof IndicatorRow] as number),
                    lo,
                    hi,
                    width,
                    height,
                    hidden.has(name),
                ),
            )
            .join("") +
        `</svg></figure>`;
    const oscillatorPanel = chartPanel("RSI / %K", rows, OSCILLATOR_SERIES, hidden, [0, 100]);
    const macdPanel = chartPanel("MACD", rows, ["macd"], hidden);
    return `<div class="ticker-view" data-symbol="${escapeHtml(symbol)}">${pricePanel}${oscillatorPanel}${macdPanel}</div>`;
}
