/** Probability panel and numeric-bin histogram. */

import { NumericBins } from './api.js';
import { PanelState } from './session.js';

export function renderPanel(container: HTMLElement, panel: PanelState | null): void {
    container.textContent = '';
    if (!panel) {
        const empty = document.createElement('p');
        empty.className = 'panel-empty';
        empty.textContent = 'No simulation yet.';
        container.appendChild(empty);
        return;
    }
    if (panel.stale) {
        const flag = document.createElement('p');
        flag.className = 'stale-flag';
        flag.textContent = 'Prompt edited since this run — results are stale. Re-run to refresh.';
        container.appendChild(flag);
    }
    const table = document.createElement('table');
    table.className = `panel ${panel.stale ? 'stale' : 'fresh'}`;
    const head = table.createTHead().insertRow();
    for (const text of ['event', 'p̂', '95% CI', 'n']) {
        const cell = document.createElement('th');
        cell.textContent = text;
        head.appendChild(cell);
    }
    const body = table.createTBody();
    for (const [name, estimate] of Object.entries(panel.estimates)) {
        const row = body.insertRow();
        row.dataset.event = name;
        row.insertCell().textContent = name;
        const p = row.insertCell();
        p.className = 'p-hat';
        p.textContent = JSON.stringify(estimate.p_hat);
        row.insertCell().textContent = `${estimate.ci95[0].toFixed(4)}–${estimate.ci95[1].toFixed(4)}`;
        row.insertCell().textContent = `${estimate.n_event}/${estimate.n_sim}`;
    }
    container.appendChild(table);

    const provenance = document.createElement('p');
    provenance.className = 'provenance';
    provenance.dataset.seed = String(panel.seed);
    provenance.dataset.configHash = panel.manifest.config_hash;
    provenance.textContent =
        `seed ${panel.seed} · horizon ${panel.horizonDays}d · n_sim ${panel.nSim} · ` +
        `config ${panel.manifest.config_hash.slice(0, 12)} · vocab ${panel.manifest.vocab_hash.slice(0, 12)}`;
    container.appendChild(provenance);
}

export function renderNumericBins(container: HTMLElement, bins: NumericBins | null): void {
    container.textContent = '';
    if (!bins) return;
    const title = document.createElement('h3');
    title.textContent = `pending ${bins.lab_code} (${bins.unit})`;
    container.appendChild(title);
    const chart = document.createElement('div');
    chart.className = 'bins';
    const maxProb = Math.max(...bins.probabilities, 1e-12);
    bins.probabilities.forEach((probability, i) => {
        const bar = document.createElement('div');
        bar.className = 'bin-bar';
        bar.style.height = `${(60 * probability) / maxProb}px`;
        bar.title = `${bins.values[i]} ${bins.unit}: ${probability.toExponential(3)}`;
        bar.dataset.value = bins.values[i];
        chart.appendChild(bar);
    });
    container.appendChild(chart);
}
