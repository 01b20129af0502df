// Typed client over the service's four endpoints; fetch is injectable so
// tests run against recorded fixtures with no server.

import type { ApiResult, RankPayload, RefreshPayload, TickerPayload } from "./types.js";

export type FetchLike = (url: string, init?: { method?: string }) => Promise<{
    status: number;
    ok: boolean;
    json(): Promise<unknown>;
}>;

export class ApiClient {
    constructor(
        private readonly baseUrl: string,
        private readonly fetchFn: FetchLike,
    ) {}

    private async call<T>(path: string, method: string = "GET"): Promise<ApiResult<T>> {
        let resp;
        try {
            resp = await this.fetchFn(`${this.baseUrl}${path}`, { method });
        } catch (err) {
            return { ok: false, status: 0, error: { detail: String(err) } };
        }
        let body: unknown = null;
        try {
            body = await resp.json();
        } catch {
            body = null;
        }
        if (!resp.ok) {
            return { ok: false, status: resp.status, error: body as { detail: unknown } | null };
        }
        return { ok: true, status: resp.status, data: body as T };
    }

    refresh(): Promise<ApiResult<RefreshPayload>> {
        return this.call<RefreshPayload>("/api/v1/refresh", "POST");
    }

    rank(k: number): Promise<ApiResult<RankPayload>> {
        return this.call<RankPayload>(`/api/v1/rank?k=${k}`);
    }

    ticker(symbol: string, from?: string, to?: string): Promise<ApiResult<TickerPayload>> {
        const params = new URLSearchParams();
        if (from) params.set("from", from);
        if (to) params.set("to", to);
        const query = params.toString();
        return this.call<TickerPayload>(
            `/api/v1/tickers/${encodeURIComponent(symbol)}${query ? `?${query}` : ""}`,
        );
    }
}
