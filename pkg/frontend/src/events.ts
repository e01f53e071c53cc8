/**
 * Event list view-model: newest first, with masked events collapsed
 * behind a toggle (the correlator marks redundant events with the id
 * of the event that masks them).
 */

export interface ApiEvent {
    id: number;
    source: string;
    kind: string;
    severity: number;
    t: number;
    "masked-by": number | null;
}

export class EventList {
    private events: ApiEvent[] = [];
    showMasked = false;

    load(events: ApiEvent[]): void {
        this.events = [...events];
    }

    visible(): ApiEvent[] {
        const shown = this.showMasked
            ? this.events
            : this.events.filter((e) => e["masked-by"] === null);
        return [...shown].sort((a, b) => b.t - a.t || b.id - a.id);
    }

    maskedCount(): number {
        return this.events.filter((e) => e["masked-by"] !== null).length;
    }

    worstOpenSeverity(source: string): number {
        let worst = 0;
        for (const e of this.events) {
            if (e.source === source && e["masked-by"] === null) {
                worst = Math.max(worst, e.severity);
            }
        }
        return worst;
    }
}
