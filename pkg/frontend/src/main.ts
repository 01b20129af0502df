// Browser bootstrap: binds the App view-model to the static page regions.

import { ApiClient } from "./api.js";
import { App } from "./app.js";

const baseUrl = (window as unknown as { I2E_API?: string }).I2E_API ?? "";
const app = new App(new ApiClient(baseUrl, (url, init) => fetch(url, init)));

function byId(id: string): HTMLElement {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el;
}

async function doRefresh(): Promise<void> {
    const button = byId("refresh-button") as HTMLButtonElement;
    button.disabled = true; // at most one in-flight refresh
    try {
        const state = await app.refreshAndRank();
        byId("ranking").innerHTML = state.html;
        byId("status").innerHTML = state.statusHtml;
    } finally {
        button.disabled = false;
    }
}

async function doSetK(): Promise<void> {
    const k = Number((byId("k-input") as HTMLInputElement).value) || 5;
    const state = await app.setK(k);
    byId("ranking").innerHTML = state.html;
}

async function doSearch(): Promise<void> {
    const symbol = (byId("symbol-input") as HTMLInputElement).value;
    const from = (byId("from-input") as HTMLInputElement).value || undefined;
    const to = (byId("to-input") as HTMLInputElement).value || undefined;
    byId("ticker").innerHTML = await app.searchTicker(symbol, from, to);
}

function bindToggles(): void {
    document.querySelectorAll<HTMLInputElement>("input[data-toggle]").forEach((box) => {
        box.addEventListener("change", () => {
            const html = app.toggleSeries(box.dataset.toggle as string);
            if (html !== null) byId("ticker").innerHTML = html;
        });
    });
}

window.addEventListener("DOMContentLoaded", () => {
    byId("refresh-button").addEventListener("click", () => void doRefresh());
    byId("k-input").addEventListener("change", () => void doSetK());
    byId("search-button").addEventListener("click", () => void doSearch());
    bindToggles();
});
