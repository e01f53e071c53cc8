/**
 * Browser entry point: wires the view-models to the DOM.  All state
 * flows through the ApiClient; this module only renders.
 */

import { ApiClient } from "./api.js";
import { ChartModel } from "./chart.js";
import { EventList } from "./events.js";
import { parsePublishIndex, PublishIndex } from "./index-browser.js";
import { MapViewModel } from "./map.js";
import {
    buildDocument,
    emptyDraft,
    SubscriptionDraft,
    Transport,
    validateDraft,
} from "./subscription.js";

const api = new ApiClient(
    new URLSearchParams(location.search).get("manager") ?? location.origin,
);
const map = new MapViewModel();
const events = new EventList();
let chart: ChartModel | null = null;
let selectedDevice: string | null = null;
let selectedIndex: PublishIndex | null = null;

function el<T extends HTMLElement>(id: string): T {
    return document.getElementById(id) as T;
}

function renderMap(): void {
    const host = el<HTMLDivElement>("map");
    host.innerHTML = "";
    const snapshot = map.snapshot();
    for (const device of Object.keys(snapshot).sort()) {
        const tile = document.createElement("button");
        tile.className = `device ${snapshot[device].color}`;
        tile.textContent = device;
        tile.onclick = () => void selectDevice(device);
        host.appendChild(tile);
    }
    el<HTMLSpanElement>("feed-state").textContent =
        map.feedState === "live" ? "live" : "stale, reconnecting";
}

function renderEvents(): void {
    const rows = events.visible().map(
        (e) =>
            `<tr><td>${e.t}</td><td>${e.source}</td><td>${e.kind}</td>` +
            `<td>sev ${e.severity}</td></tr>`,
    );
    el<HTMLTableSectionElement>("events").innerHTML = rows.join("");
}

function renderChart(): void {
    const canvas = el<HTMLCanvasElement>("chart");
    const ctx = canvas.getContext("2d")!;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (chart === null || chart.empty) {
        ctx.fillText("no data", 10, 20);
        return;
    }
    const pts = chart.series();
    const ts = pts.map((p) => p.t);
    const vs = pts.map((p) => p.value);
    const [t0, t1] = [Math.min(...ts), Math.max(...ts)];
    const [v0, v1] = [Math.min(...vs), Math.max(...vs)];
    const x = (t: number) => ((t - t0) / Math.max(1, t1 - t0)) * (canvas.width - 20) + 10;
    const y = (v: number) =>
        canvas.height - 10 - ((v - v0) / Math.max(1e-9, v1 - v0)) * (canvas.height - 20);
    ctx.beginPath();
    pts.forEach((p, i) => (i === 0 ? ctx.moveTo(x(p.t), y(p.value)) : ctx.lineTo(x(p.t), y(p.value))));
    ctx.stroke();
    for (const p of pts) {
        if (p.interpolated) {
            ctx.strokeRect(x(p.t) - 2, y(p.value) - 2, 4, 4);
        }
    }
}

async function selectDevice(device: string): Promise<void> {
    selectedDevice = device;
    el<HTMLSpanElement>("selected").textContent = device;
    selectedIndex = parsePublishIndex(await api.publishIndex(device));
    const picker = el<HTMLSelectElement>("variable");
    picker.innerHTML = selectedIndex.variables
        .filter((v) => !v.table)
        .map((v) => `<option value="${v.oid}">${v.name} (${v.syntax})</option>`)
        .join("");
    const filters = el<HTMLDivElement>("filters");
    filters.innerHTML = selectedIndex.notifications
        .map(
            (n) =>
                `<label><input type="checkbox" class="notif" value="${n.name}">` +
                `${n.name}</label>`,
        )
        .join("");
}

function draftFromForm(): SubscriptionDraft {
    const draft = emptyDraft();
    draft.id = el<HTMLInputElement>("sub-id").value;
    draft.agent = selectedDevice ?? "";
    const [host, port] = el<HTMLInputElement>("endpoint").value.split(":");
    if (host !== undefined && port !== undefined) {
        draft.endpoints.push({
            host,
            port: Number(port),
            transport: el<HTMLSelectElement>("transport").value as Transport,
        });
    }
    const oid = el<HTMLSelectElement>("variable").value;
    if (oid !== "") {
        draft.selections.push({
            oid,
            periodMs: Number(el<HTMLInputElement>("period").value),
        });
    }
    for (const box of document.querySelectorAll<HTMLInputElement>(".notif:checked")) {
        draft.notificationFilter.push(box.value);
    }
    return draft;
}

async function submitDraft(): Promise<void> {
    const draft = draftFromForm();
    const problems = validateDraft(draft);
    const status = el<HTMLSpanElement>("submit-status");
    if (problems.length > 0) {
        status.textContent = problems.join("; ");
        return;
    }
    const result = await api.submitSubscription(buildDocument(draft));
    status.textContent = result.ok ? "installed" : `rejected: ${result.reason}`;
    if (result.ok) {
        await refreshSubscriptions();
    }
}

async function refreshSubscriptions(): Promise<void> {
    const subs = await api.subscriptions();
    el<HTMLTableSectionElement>("subs").innerHTML = subs
        .map((s) => `<tr><td>${s["sub-id"]}</td><td>${s.agent}</td></tr>`)
        .join("");
}

async function loadChart(): Promise<void> {
    if (selectedDevice === null) {
        return;
    }
    const oid = el<HTMLSelectElement>("variable").value;
    const to = Date.now();
    chart = new ChartModel(selectedDevice, oid);
    chart.loadReport(await api.report([selectedDevice], [oid], to - 300_000, to, 1000));
    renderChart();
}

async function feedLoop(): Promise<void> {
    for (;;) {
        try {
            for await (const message of api.stream()) {
                map.apply(message);
                renderMap();
            }
        } catch {
            // fall through to reconnect
        }
        map.markStale();
        renderMap();
        await new Promise((r) => setTimeout(r, 1000));
        try {
            const snapshot = await api.mapSnapshot();
            map.reconcile({ type: "snapshot", map: snapshot.map as never });
        } catch {
            // manager still unreachable; loop retries
        }
    }
}

async function pollLoop(): Promise<void> {
    for (;;) {
        try {
            events.load(await api.events());
            renderEvents();
        } catch {
            // transient; keep last rendering
        }
        await new Promise((r) => setTimeout(r, 2000));
    }
}

el<HTMLButtonElement>("submit").onclick = () => void submitDraft();
el<HTMLButtonElement>("load-chart").onclick = () => void loadChart();
void refreshSubscriptions();
void feedLoop();
void pollLoop();
