/** Browser entry point: wires DOM controls to the app. */

import { TimelinePayload, WardsimClient } from './api.js';
import { App } from './app.js';

function parseTsv(text: string): TimelinePayload {
    const lines = text.trim().split('\n').map((line) => line.split('\t'));
    const [columns, ...rows] = lines;
    return { columns, rows: rows.map((r) => r.map((c) => (c === '' ? null : c))) };
}

function start(): void {
    const byId = (id: string) => document.getElementById(id) as HTMLElement;
    const app = new App(new WardsimClient(''), {
        timeline: byId('timeline'),
        panel: byId('panel'),
        bins: byId('bins'),
        status: byId('status'),
        topk: byId('topk'),
    });
    const input = byId('prompt-input') as HTMLTextAreaElement;
    byId('load').addEventListener('click', () => {
        void app.loadPrompt(parseTsv(input.value)).catch((error) => {
            byId('status').textContent = `load failed: ${error}`;
        });
    });
    byId('run').addEventListener('click', () => {
        const horizon = Number((byId('horizon') as HTMLInputElement).value);
        const nSim = Number((byId('nsim') as HTMLInputElement).value);
        const seed = Number((byId('seed') as HTMLInputElement).value);
        void app.runSimulation(horizon, nSim, seed);
    });
    byId('undo').addEventListener('click', () => void app.undo());
    byId('redo').addEventListener('click', () => void app.redo());
}

document.addEventListener('DOMContentLoaded', start);
