/**
 * Typed client for the manager HTTP API.  Everything the console
 * renders comes through this module; the fetch implementation is
 * injectable so component tests can mock the manager.
 */

import { FeedDecoder, FeedMessage } from "./map.js";
import { ReportDocument } from "./chart.js";
import { ApiEvent } from "./events.js";

export interface AgentEntry {
    device: string;
    host: string;
    port: number;
}

export interface SubscriptionEntry {
    "sub-id": string;
    agent: string;
    document: string;
}

export interface SubmitResult {
    ok: boolean;
    /** server rejection reason, surfaced verbatim */
    reason?: string;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
    readonly base: string;
    private fetchFn: FetchLike;

    constructor(base: string, fetchFn: FetchLike = (...a) => fetch(...a)) {
        this.base = base.replace(/\/$/, "");
        this.fetchFn = fetchFn;
    }

    private async getJson<T>(path: string): Promise<T> {
        const resp = await this.fetchFn(this.base + path);
        if (!resp.ok) {
            throw new Error(`GET ${path}: ${resp.status}`);
        }
        return (await resp.json()) as T;
    }

    agents(): Promise<AgentEntry[]> {
        return this.getJson("/api/agents");
    }

    async publishIndex(device: string): Promise<string> {
        const doc = await this.getJson<{ index: string }>(
            `/api/agents/${device}/publish-index`,
        );
        return doc.index;
    }

    subscriptions(): Promise<SubscriptionEntry[]> {
        return this.getJson("/api/subscriptions");
    }

    async submitSubscription(document: string): Promise<SubmitResult> {
        const resp = await this.fetchFn(this.base + "/api/subscriptions", {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ document }),
        });
        const body = (await resp.json()) as { status?: string; reason?: string };
        if (resp.ok && body.status === "ok") {
            return { ok: true };
        }
        return { ok: false, reason: body.reason ?? `status ${resp.status}` };
    }

    async deleteSubscription(id: string): Promise<void> {
        await this.fetchFn(`${this.base}/api/subscriptions/${id}`, {
            method: "DELETE",
        });
    }

    mapSnapshot(): Promise<{ map: Record<string, { color: string; changed: number }> }> {
        return this.getJson("/api/map");
    }

    events(): Promise<ApiEvent[]> {
        return this.getJson("/api/events");
    }

    report(
        devices: string[],
        oids: string[],
        from: number,
        to: number,
        resolution: number,
    ): Promise<ReportDocument> {
        const q = new URLSearchParams({
            from: String(from),
            to: String(to),
            device: devices.join(","),
            oid: oids.join(","),
            resolution: String(resolution),
        });
        return this.getJson(`/api/report?${q}`);
    }

    /**
     * The live feed: newline-delimited JSON, snapshot first, held
     * open.  Yields messages until the connection drops, then returns;
     * the caller owns reconnect policy.
     */
    async *stream(): AsyncGenerator<FeedMessage> {
        const resp = await this.fetchFn(this.base + "/api/stream");
        if (!resp.ok || resp.body === null) {
            throw new Error(`GET /api/stream: ${resp.status}`);
        }
        const reader = resp.body.getReader();
        const decoder = new FeedDecoder();
        const text = new TextDecoder();
        try {
            for (;;) {
                const { done, value } = await reader.read();
                if (done) {
                    return;
                }
                for (const message of decoder.feed(text.decode(value, { stream: true }))) {
                    yield message;
                }
            }
        } finally {
            reader.releaseLock();
        }
    }
}
