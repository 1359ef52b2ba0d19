/** What-if session state: prompt edits, undo history, and panel provenance.
 *
 * Invariants: every displayed probability carries the manifest of the run
 * that produced it, and any prompt edit marks the panel stale until the
 * next completed simulation.
 */

import { Manifest, PredictEstimate, TimelinePayload } from './api.js';

export type Row = (string | null)[];

export type Edit =
    | { kind: 'remove'; index: number }
    | { kind: 'insert'; index: number; row: Row }
    | { kind: 'modify'; index: number; row: Row };

export interface PanelState {
    estimates: Record<string, PredictEstimate>;
    manifest: Manifest;
    horizonDays: number;
    nSim: number;
    seed: number;
    stale: boolean;
}

export class WhatIfSession {
    readonly columns: string[];
    private current: Row[];
    private history: Row[][] = [];
    private redoStack: Row[][] = [];
    panel: PanelState | null = null;
    lastError: { rule?: string; message: string } | null = null;

    constructor(base: TimelinePayload) {
        this.columns = [...base.columns];
        this.current = base.rows.map((row) => [...row]);
    }

    prompt(): TimelinePayload {
        return { columns: [...this.columns], rows: this.current.map((row) => [...row]) };
    }

    rowCount(): number {
        return this.current.length;
    }

    applyEdit(edit: Edit): void {
        this.history.push(this.current.map((row) => [...row]));
        this.redoStack = [];
        if (edit.kind === 'remove') {
            this.current.splice(edit.index, 1);
        } else if (edit.kind === 'insert') {
            this.current.splice(edit.index, 0, [...edit.row]);
        } else {
            this.current[edit.index] = [...edit.row];
        }
        this.invalidatePanel();
        this.lastError = null;
    }

    /** Roll back the most recent edit (used when the server rejects it). */
    revertLastEdit(rule: string | undefined, message: string): void {
        const previous = this.history.pop();
        if (previous) this.current = previous;
        this.lastError = { rule, message };
    }

    undo(): boolean {
        const previous = this.history.pop();
        if (!previous) return false;
        this.redoStack.push(this.current);
        this.current = previous;
        this.invalidatePanel();
        return true;
    }

    redo(): boolean {
        const next = this.redoStack.pop();
        if (!next) return false;
        this.history.push(this.current);
        this.current = next;
        this.invalidatePanel();
        return true;
    }

    invalidatePanel(): void {
        if (this.panel) this.panel.stale = true;
    }

    setPanel(
        estimates: Record<string, PredictEstimate>,
        manifest: Manifest,
        options: { horizonDays: number; nSim: number; seed: number },
    ): void {
        this.panel = {
            estimates,
            manifest,
            horizonDays: options.horizonDays,
            nSim: options.nSim,
            seed: options.seed,
            stale: false,
        };
    }
}
