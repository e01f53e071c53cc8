import { describe, expect, it } from "vitest";

import { FeedDecoder, FeedMessage, MapViewModel, SnapshotMessage } from "../src/map.js";

const snapshot = (map: SnapshotMessage["map"]): SnapshotMessage => ({
    type: "snapshot",
    map,
});

describe("MapViewModel", () => {
    it("renders the snapshot then applies deltas", () => {
        const vm = new MapViewModel();
        vm.apply(snapshot({
            "dev-1": { color: "green", changed: 0 },
            "dev-2": { color: "green", changed: 0 },
        }));
        expect(vm.colorOf("dev-1")).toBe("green");
        vm.apply({ type: "delta", device: "dev-1", color: "red", changed: 5000 });
        expect(vm.colorOf("dev-1")).toBe("red");
        expect(vm.colorOf("dev-2")).toBe("green");
        expect(vm.feedState).toBe("live");
    });

    it("reconciles to the server snapshot after a forced feed drop", () => {
        // Simulated manager: tracks the authoritative state and the
        // deltas it would have sent, some of which get lost.
        const server: SnapshotMessage["map"] = {
            "dev-1": { color: "green", changed: 0 },
            "dev-2": { color: "green", changed: 0 },
            "dev-3": { color: "green", changed: 0 },
        };
        const vm = new MapViewModel();
        vm.apply(snapshot(server));

        // delivered before the drop
        server["dev-1"] = { color: "yellow", changed: 1000 };
        vm.apply({ type: "delta", device: "dev-1", color: "yellow", changed: 1000 });

        // feed drops here; these deltas never reach the console
        vm.markStale();
        server["dev-2"] = { color: "red", changed: 2000 };
        server["dev-1"] = { color: "green", changed: 3000 };
        expect(vm.feedState).toBe("stale");
        expect(vm.colorOf("dev-2")).toBe("green"); // stale view, flagged

        // reconnect: fresh snapshot wins, missed changes are reported
        const corrected = vm.reconcile(snapshot(server));
        expect(corrected).toEqual(["dev-1", "dev-2"]);
        expect(vm.snapshot()).toEqual(server);
        expect(vm.feedState).toBe("live");
    });

    it("reconcile drops devices the server no longer reports", () => {
        const vm = new MapViewModel();
        vm.apply(snapshot({ "dev-9": { color: "red", changed: 1 } }));
        const corrected = vm.reconcile(snapshot({ "dev-1": { color: "green", changed: 2 } }));
        expect(corrected).toEqual(["dev-1", "dev-9"]);
        expect(vm.colorOf("dev-9")).toBeUndefined();
    });

    it("never invents state: snapshot equals what the feed delivered", () => {
        const vm = new MapViewModel();
        const delivered: FeedMessage[] = [
            snapshot({ "dev-1": { color: "green", changed: 0 } }),
            { type: "delta", device: "dev-1", color: "red", changed: 10 },
            { type: "delta", device: "dev-2", color: "yellow", changed: 11 },
        ];
        delivered.forEach((m) => vm.apply(m));
        expect(vm.snapshot()).toEqual({
            "dev-1": { color: "red", changed: 10 },
            "dev-2": { color: "yellow", changed: 11 },
        });
    });
});

describe("FeedDecoder", () => {
    it("handles arbitrary chunk boundaries", () => {
        const line = JSON.stringify({ type: "delta", device: "d", color: "red", changed: 1 });
        const d = new FeedDecoder();
        const got: FeedMessage[] = [];
        for (const chunk of [line.slice(0, 7), line.slice(7) + "\n" + line.slice(0, 3), line.slice(3) + "\n"]) {
            got.push(...d.feed(chunk));
        }
        expect(got).toHaveLength(2);
        expect(got[0]).toEqual(got[1]);
    });

    it("ignores blank keepalive lines", () => {
        const d = new FeedDecoder();
        expect(d.feed("\n\n")).toEqual([]);
    });
});
