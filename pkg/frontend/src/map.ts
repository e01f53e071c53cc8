/**
 * Live network map view-model.
 *
 * State comes exclusively from the manager: a snapshot (from the feed
 * or GET /api/map) establishes the full device set, deltas mutate it.
 * The invariant the tests pin down: applying a snapshot and then its
 * deltas always equals the server's current snapshot, including after
 * a feed drop and reconnect.
 */

export type Color = "green" | "yellow" | "red";

export interface DeviceStatus {
    color: Color;
    changed: number;
}

export interface SnapshotMessage {
    type: "snapshot";
    map: Record<string, DeviceStatus>;
}

export interface DeltaMessage {
    type: "delta";
    device: string;
    color: Color;
    changed: number;
}

export type FeedMessage = SnapshotMessage | DeltaMessage;

export type FeedState = "live" | "stale";

export class MapViewModel {
    private devices = new Map<string, DeviceStatus>();
    private state: FeedState = "stale";

    get feedState(): FeedState {
        return this.state;
    }

    /** Current color per device, for rendering. */
    snapshot(): Record<string, DeviceStatus> {
        const out: Record<string, DeviceStatus> = {};
        for (const [device, status] of this.devices) {
            out[device] = { ...status };
        }
        return out;
    }

    colorOf(device: string): Color | undefined {
        return this.devices.get(device)?.color;
    }

    apply(message: FeedMessage): void {
        if (message.type === "snapshot") {
            this.devices = new Map(
                Object.entries(message.map).map(([d, s]) => [d, { ...s }]),
            );
        } else {
            this.devices.set(message.device, {
                color: message.color,
                changed: message.changed,
            });
        }
        this.state = "live";
    }

    /** The feed dropped: keep rendering the last state but flag it. */
    markStale(): void {
        this.state = "stale";
    }

    /**
     * After reconnect the server sends a fresh snapshot; applying it
     * discards anything missed during the outage.  Returns the devices
     * whose color the outage had left wrong, for a change log.
     */
    reconcile(snapshot: SnapshotMessage): string[] {
        const corrected: string[] = [];
        for (const [device, status] of Object.entries(snapshot.map)) {
            if (this.devices.get(device)?.color !== status.color) {
                corrected.push(device);
            }
        }
        for (const device of this.devices.keys()) {
            if (!(device in snapshot.map)) {
                corrected.push(device);
            }
        }
        this.apply(snapshot);
        return corrected.sort();
    }
}

/**
 * Incremental parser for the newline-delimited JSON feed; tolerates
 * arbitrary chunk boundaries.
 */
export class FeedDecoder {
    private buffer = "";

    feed(chunk: string): FeedMessage[] {
        this.buffer += chunk;
        const out: FeedMessage[] = [];
        let nl;
        while ((nl = this.buffer.indexOf("\n")) >= 0) {
            const line = this.buffer.slice(0, nl).trim();
            this.buffer = this.buffer.slice(nl + 1);
            if (line !== "") {
                out.push(JSON.parse(line) as FeedMessage);
            }
        }
        return out;
    }
}
