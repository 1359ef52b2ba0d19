/** Timeline list rendering with the attention overlay. */

import { EntryView } from './entries.js';

export interface TimelineView {
    entries: EntryView[];
    promptLength: number; // entries beyond this index render as future (grey)
    attention: number[] | null; // one weight per prompt entry; null degrades gracefully
}

export function shadeFor(weight: number, maxWeight: number): string {
    if (maxWeight <= 0 || weight <= 0) return 'transparent';
    const alpha = Math.min(1, weight / maxWeight) * 0.55;
    return `rgba(214, 40, 40, ${alpha.toFixed(4)})`;
}

export function renderTimeline(container: HTMLElement, view: TimelineView): void {
    container.textContent = '';
    const list = document.createElement('ol');
    list.className = 'timeline';
    const aligned =
        view.attention !== null && view.attention.length === view.promptLength
            ? view.attention
            : null;
    const maxWeight = aligned ? Math.max(...aligned, 0) : 0;

    view.entries.forEach((entry, index) => {
        const item = document.createElement('li');
        item.className = `entry entry-${entry.kind} ${index < view.promptLength ? 'prompt' : 'future'}`;
        item.dataset.index = String(index);
        if (aligned && index < view.promptLength) {
            const weight = aligned[index];
            item.style.backgroundColor = shadeFor(weight, maxWeight);
            item.dataset.attention = String(weight);
            item.title = `attention ${weight.toExponential(4)}`;
        }
        const label = document.createElement('span');
        label.className = 'label';
        label.textContent = entry.label;
        const detail = document.createElement('span');
        detail.className = 'detail';
        detail.textContent = entry.detail;
        item.append(label, detail);
        list.appendChild(item);
    });
    container.appendChild(list);
}
