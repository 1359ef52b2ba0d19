/** Typed client for the wardsim HTTP API. */

export interface TimelinePayload {
    columns: string[];
    rows: (string | null)[][];
}

export interface Manifest {
    command: string;
    seed: number | null;
    config_hash: string;
    vocab_hash: string;
    checkpoint_id: string;
    started: string;
    finished: string;
    wall_seconds: number;
    counts: Record<string, unknown>;
    version: number;
}

export interface PredictEstimate {
    p_hat: number;
    ci95: [number, number];
    n_event: number;
    n_sim: number;
}

export interface PredictResponse {
    estimates: Record<string, PredictEstimate>;
    manifest: Manifest;
}

export interface NumericBins {
    lab_code: string;
    unit: string;
    values: string[];
    probabilities: number[];
    mass: number;
}

export interface InspectResponse {
    top_k: { token: string; id: number; prob: number }[];
    numeric_bins: NumericBins | null;
    attention: number[];
    admitted: boolean;
    manifest: Manifest;
}

export interface ApiErrorDetail {
    error: string;
    rule?: string;
    rules?: string[];
    detail?: string;
    code?: string;
    events?: string[];
}

export class ApiRequestError extends Error {
    constructor(
        public readonly status: number,
        public readonly apiDetail: ApiErrorDetail,
    ) {
        super(`${apiDetail.error}${apiDetail.rule ? `: ${apiDetail.rule}` : ''}`);
    }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class WardsimClient {
    constructor(
        private readonly base: string = '',
        private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
    ) {}

    private async post<T>(path: string, body: unknown): Promise<T> {
        const response = await this.fetchFn(`${this.base}${path}`, {
            method: 'POST',
            headers: { 'Content-Type': 'application/json' },
            body: JSON.stringify(body),
        });
        const payload = await response.json();
        if (!response.ok) {
            const detail: ApiErrorDetail =
                payload && typeof payload.detail === 'object'
                    ? payload.detail
                    : { error: 'request_failed', detail: String(payload?.detail ?? response.status) };
            throw new ApiRequestError(response.status, detail);
        }
        return payload as T;
    }

    predict(body: {
        prompt: TimelinePayload;
        events?: string[];
        horizon_days?: number;
        n_sim?: number;
        seed?: number;
    }): Promise<PredictResponse> {
        return this.post('/v1/predict', body);
    }

    inspect(prompt: TimelinePayload, topK = 10): Promise<InspectResponse> {
        return this.post('/v1/inspect', { prompt, top_k: topK });
    }

    async health(): Promise<{ status: string; model_loaded: boolean }> {
        const response = await this.fetchFn(`${this.base}/healthz`);
        return response.json();
    }
}
