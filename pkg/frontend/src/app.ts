/** Composition root: loads a prompt, renders the browser, runs what-ifs. */

import { ApiRequestError, InspectResponse, TimelinePayload, WardsimClient } from './api.js';
import { expandRows } from './entries.js';
import { renderNumericBins, renderPanel } from './panel.js';
import { Edit, WhatIfSession } from './session.js';
import { renderTimeline } from './timeline.js';

export interface AppElements {
    timeline: HTMLElement;
    panel: HTMLElement;
    bins: HTMLElement;
    status: HTMLElement;
    topk: HTMLElement;
}

export class App {
    session: WhatIfSession | null = null;
    lastInspect: InspectResponse | null = null;
    private inFlight = false;

    constructor(
        private readonly client: WardsimClient,
        private readonly el: AppElements,
        private readonly events: string[] = [],
    ) {}

    async loadPrompt(payload: TimelinePayload): Promise<void> {
        this.session = new WhatIfSession(payload);
        await this.refreshInspect();
        this.render();
    }

    /** Apply an edit; the server validates it, rejected edits roll back. */
    async edit(edit: Edit): Promise<boolean> {
        if (!this.session) return false;
        this.session.applyEdit(edit);
        try {
            await this.refreshInspect();
            this.render();
            return true;
        } catch (error) {
            if (error instanceof ApiRequestError) {
                this.session.revertLastEdit(
                    error.apiDetail.rule,
                    `edit rejected (${error.apiDetail.rule ?? error.apiDetail.error})`,
                );
                await this.refreshInspect().catch(() => (this.lastInspect = null));
                this.render();
                return false;
            }
            throw error;
        }
    }

    async undo(): Promise<void> {
        if (this.session?.undo()) {
            await this.refreshInspect();
            this.render();
        }
    }

    async redo(): Promise<void> {
        if (this.session?.redo()) {
            await this.refreshInspect();
            this.render();
        }
    }

    async runSimulation(horizonDays: number, nSim: number, seed: number): Promise<void> {
        if (!this.session || this.inFlight) return;
        this.inFlight = true;
        this.el.status.textContent = 'simulating…';
        try {
            const response = await this.client.predict({
                prompt: this.session.prompt(),
                events: this.events,
                horizon_days: horizonDays,
                n_sim: nSim,
                seed,
            });
            this.session.setPanel(response.estimates, response.manifest, {
                horizonDays,
                nSim,
                seed,
            });
            this.el.status.textContent = '';
        } catch (error) {
            this.el.status.textContent =
                error instanceof ApiRequestError ? `simulation failed: ${error.message}` : 'simulation failed';
        } finally {
            this.inFlight = false;
            this.render();
        }
    }

    private async refreshInspect(): Promise<void> {
        if (!this.session) return;
        this.lastInspect = await this.client.inspect(this.session.prompt());
    }

    render(): void {
        if (!this.session) return;
        const entries = expandRows(this.session.prompt());
        renderTimeline(this.el.timeline, {
            entries,
            promptLength: entries.length,
            attention: this.lastInspect?.attention ?? null,
        });
        renderPanel(this.el.panel, this.session.panel);
        renderNumericBins(this.el.bins, this.lastInspect?.numeric_bins ?? null);
        this.el.topk.textContent = (this.lastInspect?.top_k ?? [])
            .map((t) => `${t.token} ${(t.prob * 100).toFixed(1)}%`)
            .join('  ');
        const errorBox = this.el.status;
        if (this.session.lastError) {
            errorBox.textContent = `edit rejected: rule ${this.session.lastError.rule ?? 'unknown'}`;
            errorBox.dataset.rule = this.session.lastError.rule ?? '';
        }
    }
}
