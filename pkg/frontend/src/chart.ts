/**
 * Chart model for one (device, variable) series: history loaded from a
 * report document, points appended from the live feed.  Interpolated
 * slots keep their flag so the renderer can mark them.
 */

export interface ReportSlot {
    t: number;
    value: number;
    interpolated: boolean;
    min: number;
    avg: number;
    max: number;
    count: number;
}

export interface ReportSeries {
    slots: ReportSlot[];
    received: number;
    expected: number;
    availability: number;
}

export interface ReportDocument {
    window: [number, number];
    resolution: number;
    series: Record<string, ReportSeries>;
    availability: number;
}

export interface ChartPoint {
    t: number;
    value: number;
    interpolated: boolean;
}

export class ChartModel {
    readonly device: string;
    readonly oid: string;
    private points: ChartPoint[] = [];
    private maxPoints: number;

    constructor(device: string, oid: string, maxPoints = 2000) {
        this.device = device;
        this.oid = oid;
        this.maxPoints = maxPoints;
    }

    get empty(): boolean {
        return this.points.length === 0;
    }

    series(): ChartPoint[] {
        return [...this.points];
    }

    /** Replace history with the matching series of a report document. */
    loadReport(doc: ReportDocument): void {
        const key = `${this.device}/${this.oid}`;
        const series = doc.series[key];
        this.points = (series?.slots ?? []).map((s) => ({
            t: s.t,
            value: s.value,
            interpolated: s.interpolated,
        }));
    }

    /** Append one live sample; out-of-order samples are dropped. */
    append(t: number, value: number): void {
        const last = this.points[this.points.length - 1];
        if (last !== undefined && t <= last.t) {
            return;
        }
        this.points.push({ t, value, interpolated: false });
        if (this.points.length > this.maxPoints) {
            this.points.splice(0, this.points.length - this.maxPoints);
        }
    }

    /** Indices the renderer should flag as interpolated. */
    flaggedIndices(): number[] {
        const out: number[] = [];
        this.points.forEach((p, i) => {
            if (p.interpolated) {
                out.push(i);
            }
        });
        return out;
    }
}
