// Recorded-fixture fetch double: routes requests and logs every call.

import type { FetchLike } from "../src/api.js";

export interface Route {
    method: string;
    match: RegExp;
    status: number;
    body: unknown;
}

export interface CallLog {
    method: string;
    url: string;
}

export function fixtureFetch(routes: Route[], log: CallLog[]): FetchLike {
    return async (url, init) => {
        const method = init?.method ?? "GET";
        log.push({ method, url });
        for (const route of routes) {
            if (route.method === method && route.match.test(url)) {
                return {
                    status: route.status,
                    ok: route.status >= 200 && route.status < 300,
                    json: async () => JSON.parse(JSON.stringify(route.body)),
                };
            }
        }
        throw new Error(`unrouted request: ${method} ${url}`);
    };
}

export function countMatches(haystack: string, needle: RegExp): number {
    return (haystack.match(new RegExp(needle.source, "g")) ?? []).length;
}
