/**
 * Subscription editor model.  Builds the canonical subscription
 * document the manager API accepts; the byte layout must match the
 * server's serialization exactly (fixed line order, sorted filters,
 * trailing newline), because the stored document and the editor's
 * output are compared verbatim.
 */

export const TRANSPORTS = ["stream", "datagram", "http-push"] as const;
export type Transport = (typeof TRANSPORTS)[number];

export const MIN_PERIOD_MS = 100;

export interface EndpointDraft {
    host: string;
    port: number;
    transport: Transport;
}

export interface SelectionDraft {
    oid: string;
    periodMs: number;
}

export interface SubscriptionDraft {
    id: string;
    agent: string;
    endpoints: EndpointDraft[];
    selections: SelectionDraft[];
    notificationFilter: string[];
    durable: boolean;
    createdAt: number;
}

export function emptyDraft(): SubscriptionDraft {
    return {
        id: "",
        agent: "",
        endpoints: [],
        selections: [],
        notificationFilter: [],
        durable: true,
        createdAt: 0,
    };
}

const OID_RE = /^\d+(\.\d+)*$/;

/**
 * Client-side mirror of the manager's subscription invariants, so the
 * form can refuse a document the server would reject.  Returns a list
 * of problems; empty means submittable.
 */
export function validateDraft(draft: SubscriptionDraft): string[] {
    const problems: string[] = [];
    if (draft.id === "") {
        problems.push("empty subscription id");
    }
    if (draft.agent === "") {
        problems.push("no agent selected");
    }
    if (draft.endpoints.length === 0) {
        problems.push("at least one endpoint required");
    }
    for (const ep of draft.endpoints) {
        if (!TRANSPORTS.includes(ep.transport)) {
            problems.push(`unknown transport '${ep.transport}'`);
        }
        if (!Number.isInteger(ep.port) || ep.port < 0 || ep.port > 65535) {
            problems.push(`bad port ${ep.port}`);
        }
    }
    if (draft.selections.length === 0 && draft.notificationFilter.length === 0) {
        problems.push("select at least one variable or notification");
    }
    for (const sel of draft.selections) {
        if (!OID_RE.test(sel.oid)) {
            problems.push(`bad oid '${sel.oid}'`);
        }
        if (sel.periodMs < MIN_PERIOD_MS) {
            problems.push(`period ${sel.periodMs} ms below floor ${MIN_PERIOD_MS} ms`);
        }
    }
    return problems;
}

/**
 * Canonical text form: sub-id, agent, endpoints, selections, sorted
 * filters, durable flag, created-at, one per line, trailing newline.
 */
export function buildDocument(draft: SubscriptionDraft): string {
    const lines = [`sub-id ${draft.id}`, `agent ${draft.agent}`];
    for (const ep of draft.endpoints) {
        lines.push(`endpoint ${ep.host} ${ep.port} ${ep.transport}`);
    }
    for (const sel of draft.selections) {
        lines.push(`select ${sel.oid} ${sel.periodMs}`);
    }
    for (const name of [...draft.notificationFilter].sort()) {
        lines.push(`filter ${name}`);
    }
    lines.push(`durable ${draft.durable ? 1 : 0}`);
    lines.push(`created-at ${draft.createdAt}`);
    return lines.join("\n") + "\n";
}

/** Inverse of buildDocument, for editing a stored subscription. */
export function parseDocument(text: string): SubscriptionDraft {
    const draft = emptyDraft();
    for (const raw of text.split("\n")) {
        const line = raw.trim();
        if (line === "") {
            continue;
        }
        const space = line.indexOf(" ");
        const kw = line.slice(0, space);
        const rest = line.slice(space + 1);
        if (kw === "sub-id") {
            draft.id = rest;
        } else if (kw === "agent") {
            draft.agent = rest;
        } else if (kw === "endpoint") {
            const [host, port, transport] = rest.split(" ");
            draft.endpoints.push({ host, port: Number(port), transport: transport as Transport });
        } else if (kw === "select") {
            const [oid, period] = rest.split(" ");
            draft.selections.push({ oid, periodMs: Number(period) });
        } else if (kw === "filter") {
            draft.notificationFilter.push(rest);
        } else if (kw === "durable") {
            draft.durable = rest === "1";
        } else if (kw === "created-at") {
            draft.createdAt = Number(rest);
        } else {
            throw new Error(`unknown subscription line '${kw}'`);
        }
    }
    return draft;
}
