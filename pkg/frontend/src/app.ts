// View-model/state machine: what gets fetched when, and what HTML results.
// k changes never trigger a data refresh; lowering k re-slices the cached
// payload and only raising it past the cached depth issues a new rank GET.

import { ApiClient } from "./api.js";
import {
    renderEmptyChart,
    renderRankingView,
    renderRefreshRequired,
    renderRefreshStatus,
    renderServerError,
    renderTickerView,
    renderUnknownTicker,
} from "./render.js";
import type { RankPayload, TickerPayload } from "./types.js";

export interface RankingState {
    html: string;
    statusHtml: string;
}

export class App {
    k = 5;
    private cachedRank: RankPayload | null = null;
    private cachedDepth = 0;
    private lastAsOf: string | null = null;
    private refreshInFlight = false;
    private hiddenSeries = new Set<string>();
    private lastTicker: { symbol: string; payload: TickerPayload } | null = null;

    constructor(private readonly api: ApiClient) {}

    get refreshing(): boolean {
        return this.refreshInFlight;
    }

    private renderCached(stale: boolean, statusHtml: string): RankingState {
        if (!this.cachedRank) {
            return { html: renderRefreshRequired(), statusHtml };
        }
        return { html: renderRankingView(this.cachedRank, this.k), statusHtml };
    }

    /** Figure-3 flow: update data, then pull the ranked tables. */
    async refreshAndRank(): Promise<RankingState> {
        if (this.refreshInFlight) {
            return this.renderCached(true, "");
        }
        this.refreshInFlight = true;
        try {
            const refreshed = await this.api.refresh();
            if (!refreshed.ok) {
                const stale = this.lastAsOf
                    ? renderRefreshStatus(this.lastAsOf, 0, [], true)
                    : "";
                return {
                    html: this.cachedRank ? renderRankingView(this.cachedRank, this.k) : renderServerError(refreshed.status, refreshed.error),
                    statusHtml: renderServerError(refreshed.status, refreshed.error) + stale,
                };
            }
            this.lastAsOf = refreshed.data.as_of;
            const ranked = await this.api.rank(this.k);
            if (!ranked.ok) {
                if (ranked.status === 409) {
                    return { html: renderRefreshRequired(), statusHtml: "" };
                }
                return { html: renderServerError(ranked.status, ranked.error), statusHtml: "" };
            }
            this.cachedRank = ranked.data;
            this.cachedDepth = this.k;
            return {
                html: renderRankingView(ranked.data, this.k),
                statusHtml: renderRefreshStatus(refreshed.data.as_of, refreshed.data.updated, refreshed.data.failed, false),
            };
        } finally {
            this.refreshInFlight = false;
        }
    }

    /** k control: client-side re-render; never POSTs a refresh. */
    async setK(k: number): Promise<RankingState> {
        this.k = k;
        if (!this.cachedRank) {
            return { html: renderRefreshRequired(), statusHtml: "" };
        }
        if (k <= this.cachedDepth) {
            return { html: renderRankingView(this.cachedRank, k), statusHtml: "" };
        }
        const ranked = await this.api.rank(k);
        if (!ranked.ok) {
            return { html: renderServerError(ranked.status, ranked.error), statusHtml: "" };
        }
        this.cachedRank = ranked.data;
        this.cachedDepth = k;
        return { html: renderRankingView(ranked.data, k), statusHtml: "" };
    }

    /** Figure-4 flow: look up one ticker's history and indicators. */
    async searchTicker(symbol: string, from?: string, to?: string): Promise<string> {
        const trimmed = symbol.trim();
        if (!trimmed) {
            return renderEmptyChart("(no symbol)");
        }
        const resp = await this.api.ticker(trimmed, from, to);
        if (!resp.ok) {
            if (resp.status === 404) {
                return renderUnknownTicker(trimmed);
            }
            return renderServerError(resp.status, resp.error);
        }
        this.lastTicker = { symbol: trimmed, payload: resp.data };
        return renderTickerView(trimmed, resp.data, this.hiddenSeries);
    }

    /** Overlay toggles hide/show rendered series; nothing is refetched. */
    toggleSeries(name: string): string | null {
        if (this.hiddenSeries.has(name)) {
            this.hiddenSeries.delete(name);
        } else {
            this.hiddenSeries.add(name);
        }
        if (!this.lastTicker) return null;
        return renderTickerView(this.lastTicker.symbol, this.lastTicker.payload, this.hiddenSeries);
    }
}
