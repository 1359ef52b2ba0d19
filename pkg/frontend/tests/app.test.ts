import { beforeEach, describe, expect, it } from 'vitest';

import { WardsimClient } from '../src/api.js';
import { App, AppElements } from '../src/app.js';
import { COLUMNS, MockState, mockFetch, predictEstimates, samplePrompt } from './helpers.js';

function elements(): AppElements {
    const make = () => document.createElement('div');
    const el = { timeline: make(), panel: make(), bins: make(), status: make(), topk: make() };
    Object.values(el).forEach((node) => document.body.appendChild(node));
    return el;
}

describe('App', () => {
    let state: MockState;
    let app: App;
    let el: AppElements;

    beforeEach(() => {
        document.body.innerHTML = '';
        state = { predictCalls: [], inspectCalls: [] };
        el = elements();
        app = new App(new WardsimClient('', mockFetch(state)), el, ['death', 'hyponatremia']);
    });

    it('loads a prompt, renders entries, and requests attention', async () => {
        await app.loadPrompt(samplePrompt());
        expect(state.inspectCalls).toHaveLength(1);
        expect(el.timeline.querySelectorAll('li.entry').length).toBeGreaterThan(5);
        // overlay applied: some entry carries an attention dataset
        const shaded = [...el.timeline.querySelectorAll('li.entry')].filter(
            (item) => (item as HTMLElement).dataset.attention,
        );
        expect(shaded.length).toBeGreaterThan(0);
    });

    it('panel values are byte-equal to the /v1/predict response', async () => {
        await app.loadPrompt(samplePrompt());
        await app.runSimulation(7, 256, 0);
        const cells = [...el.panel.querySelectorAll('td.p-hat')].map((c) => c.textContent);
        const expected = Object.values(predictEstimates(0)).map((e) => JSON.stringify(e.p_hat));
        expect(cells).toEqual(expected);
        const provenance = el.panel.querySelector('.provenance') as HTMLElement;
        expect(provenance.dataset.seed).toBe('0');
        expect(provenance.dataset.configHash).toBe('cfg0123456789abcdef');
    });

    it('same seed renders an identical panel', async () => {
        await app.loadPrompt(samplePrompt());
        await app.runSimulation(7, 256, 7);
        const first = el.panel.innerHTML;
        await app.runSimulation(7, 256, 7);
        expect(el.panel.innerHTML).toBe(first);
    });

    it('editing the prompt marks the panel stale until re-run', async () => {
        await app.loadPrompt(samplePrompt());
        await app.runSimulation(7, 256, 0);
        expect(el.panel.querySelector('.stale-flag')).toBeNull();
        const ok = await app.edit({ kind: 'remove', index: 5 });
        expect(ok).toBe(true);
        expect(el.panel.querySelector('.stale-flag')).not.toBeNull();
        expect(el.panel.querySelector('table.panel')?.className).toContain('stale');
        await app.runSimulation(7, 256, 0);
        expect(el.panel.querySelector('.stale-flag')).toBeNull();
    });

    it('structurally invalid edits are rejected inline with the rule id', async () => {
        await app.loadPrompt(samplePrompt());
        const before = JSON.stringify(app.session!.prompt());
        const dischargeRow = COLUMNS.map(() => null as string | null);
        dischargeRow[0] = 'p0';
        dischargeRow[1] = 'discharge';
        dischargeRow[2] = '2023-04-30T09:00:00'; // before the admission
        dischargeRow[8] = '[DSC_ALV]';
        const ok = await app.edit({ kind: 'insert', index: 1, row: dischargeRow });
        expect(ok).toBe(false);
        expect(JSON.stringify(app.session!.prompt())).toBe(before); // rolled back
        expect(el.status.textContent).toContain('discharge_without_admission');
        expect(el.status.dataset.rule).toBe('discharge_without_admission');
    });

    it('valid deletion of a medication entry passes validation', async () => {
        await app.loadPrompt(samplePrompt());
        const medIndex = samplePrompt().rows.findIndex((r) => r[1] === 'medication');
        const ok = await app.edit({ kind: 'remove', index: medIndex });
        expect(ok).toBe(true);
        expect(app.session!.lastError).toBeNull();
    });

    it('renders the pending-lab numeric distribution when present', async () => {
        const prompt = samplePrompt();
        const pendingRow = [...prompt.rows[3]];
        pendingRow[5] = null; // strip the result: LNA pending
        prompt.rows = [...prompt.rows.slice(0, 3), pendingRow];
        await app.loadPrompt(prompt);
        const bars = el.bins.querySelectorAll('.bin-bar');
        expect(bars.length).toBe(4);
        expect((bars[0] as HTMLElement).dataset.value).toBe('131');
    });
});
