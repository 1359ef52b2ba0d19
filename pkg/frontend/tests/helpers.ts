/** Fixtures and a mock server honoring the wardsim API contract. */

import { FetchLike, Manifest, TimelinePayload } from '../src/api.js';

export const COLUMNS = [
    'patient_id', 'record_type', 'timestamp', 'age', 'code', 'value', 'unit',
    'provisional', 'disposition', 'reported',
];

function row(partial: Record<string, string | null>): (string | null)[] {
    return COLUMNS.map((column) => partial[column] ?? null);
}

export function samplePrompt(): TimelinePayload {
    return {
        columns: [...COLUMNS],
        rows: [
            row({ patient_id: 'p0', record_type: 'demographic', timestamp: '1980-01-01T00:00:00', code: '[F]' }),
            row({ patient_id: 'p0', record_type: 'admission', timestamp: '2023-05-01T13:00:00', code: '[ADM]' }),
            row({ patient_id: 'p0', record_type: 'diagnosis', timestamp: '2023-05-01T13:05:00', code: 'A419', provisional: '1' }),
            row({ patient_id: 'p0', record_type: 'lab_test', timestamp: '2023-05-01T14:00:00', code: 'LNA', value: '133', unit: 'mmol/L' }),
            row({ patient_id: 'p0', record_type: 'lab_test', timestamp: '2023-05-01T14:00:00', code: 'LK', value: '3.9', unit: 'mmol/L' }),
            row({ patient_id: 'p0', record_type: 'medication', timestamp: '2023-05-01T15:30:00', code: 'J01XA01' }),
        ],
    };
}

export function bigPrompt(entryTarget: number): TimelinePayload {
    // demographic + N lab rows at distinct times: entries = 2 + N*(1 temporal + 2)
    const rows = [
        row({ patient_id: 'p0', record_type: 'demographic', timestamp: '1980-01-01T00:00:00', code: '[M]' }),
    ];
    const n = Math.ceil((entryTarget - 2) / 3) + 1;
    for (let i = 0; i < n; i++) {
        const minutes = String(i % 60).padStart(2, '0');
        const hours = String(8 + Math.floor(i / 60)).padStart(2, '0');
        rows.push(
            row({
                patient_id: 'p0', record_type: 'lab_test',
                timestamp: `2023-05-01T${hours}:${minutes}:00`,
                code: 'LNA', value: String(130 + (i % 15)), unit: 'mmol/L',
            }),
        );
    }
    return { columns: [...COLUMNS], rows };
}

export function manifest(command: string, seed: number): Manifest {
    return {
        command,
        seed,
        config_hash: 'cfg0123456789abcdef',
        vocab_hash: 'voc0123456789abcdef',
        checkpoint_id: 'checkpoint.pt',
        started: '2026-01-01T00:00:00+00:00',
        finished: '2026-01-01T00:00:05+00:00',
        wall_seconds: 5.0,
        counts: {},
        version: 1,
    };
}

export interface MockState {
    predictCalls: { body: any }[];
    inspectCalls: { body: any }[];
}

/** Structural check the mock shares with the real server: discharge rows
 * require a preceding admission row; everything else passes. */
function findViolation(prompt: TimelinePayload): string | null {
    let admitted = false;
    const sorted = [...prompt.rows].sort((a, b) => String(a[2]).localeCompare(String(b[2])));
    for (const r of sorted) {
        const recordType = r[1];
        if (recordType === 'admission') {
            if (admitted) return 'admission_alternation';
            admitted = true;
        } else if (recordType === 'discharge') {
            if (!admitted) return 'discharge_without_admission';
            admitted = false;
        }
    }
    return null;
}

export function predictEstimates(seed: number) {
    // awkward dyadic fractions, exactly what n_event / n_sim produces
    return {
        death: { p_hat: 0.12109375 + seed * 0, ci95: [0.0845, 0.1663] as [number, number], n_event: 31, n_sim: 256 },
        hyponatremia: { p_hat: 0.4453125, ci95: [0.3834, 0.5085] as [number, number], n_event: 114, n_sim: 256 },
    };
}

export function mockFetch(state: MockState): FetchLike {
    return async (input: string, init?: RequestInit) => {
        const body = init?.body ? JSON.parse(String(init.body)) : null;
        const respond = (status: number, payload: unknown) =>
            new Response(JSON.stringify(payload), {
                status,
                headers: { 'Content-Type': 'application/json' },
            });

        if (input.endsWith('/healthz')) {
            return respond(200, { status: 'ok', model_loaded: true });
        }
        if (input.endsWith('/v1/inspect')) {
            state.inspectCalls.push({ body });
            const violation = findViolation(body.prompt);
            if (violation) {
                return respond(400, { detail: { error: 'invalid_timeline', rule: violation } });
            }
            const entryCount = countEntries(body.prompt);
            const attention = Array.from({ length: entryCount }, (_, i) => (i + 1) / ((entryCount * (entryCount + 1)) / 2));
            const lastLab = lastPendingLab(body.prompt);
            return respond(200, {
                top_k: [
                    { token: '[T+570-580m]', id: 900, prob: 0.21 },
                    { token: 'LNA', id: 40, prob: 0.11 },
                ],
                numeric_bins: lastLab
                    ? {
                          lab_code: lastLab,
                          unit: 'mmol/L',
                          values: ['131', '135', '140', '144'],
                          probabilities: [0.05, 0.2, 0.3, 0.05],
                          mass: 0.6,
                      }
                    : null,
                attention,
                admitted: true,
                manifest: manifest('inspect', 0),
            });
        }
        if (input.endsWith('/v1/predict')) {
            state.predictCalls.push({ body });
            const violation = findViolation(body.prompt);
            if (violation) {
                return respond(400, { detail: { error: 'invalid_timeline', rule: violation } });
            }
            return respond(200, { estimates: predictEstimates(body.seed ?? 0), manifest: manifest('predict', body.seed ?? 0) });
        }
        return respond(404, { detail: { error: 'not_found' } });
    };
}

export function countEntries(prompt: TimelinePayload): number {
    // temporal headers (distinct event times) + sex + per-row entries
    const events = prompt.rows.filter((r) => r[1] !== 'demographic');
    const times = new Set(events.map((r) => r[2]));
    let n = 1 + 1; // first temporal + sex
    const extraTimes = times.size > 0 ? times.size - 1 : 0;
    n += extraTimes;
    for (const r of events) {
        if (r[1] === 'lab_test') n += r[5] ? 2 : 1;
        else if (r[1] === 'discharge') n += 2;
        else n += 1;
    }
    return n;
}

function lastPendingLab(prompt: TimelinePayload): string | null {
    const events = prompt.rows.filter((r) => r[1] !== 'demographic');
    if (!events.length) return null;
    const last = events[events.length - 1];
    return last[1] === 'lab_test' && !last[5] ? (last[4] as string) : null;
}
