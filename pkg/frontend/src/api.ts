import { CandidateSummary, CreateRunPayload, RunState } from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`API error ${status}: ${JSON.stringify(detail)}`);
  }
}

async function parseOrThrow<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail: unknown = null;
    try {
      detail = (await res.json()).detail;
    } catch {
      detail = await res.text().catch(() => null);
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

/** Thin typed client over the run endpoints. */
export class ApiClient {
  constructor(
    public baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  async createRun(payload: CreateRunPayload): Promise<{ run_id: string; status: string }> {
    const res = await this.fetchFn(`${this.baseUrl}/runs`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    });
    return parseOrThrow(res);
  }

  async getRun(runId: string): Promise<RunState> {
    const res = await this.fetchFn(`${this.baseUrl}/runs/${runId}`);
    return parseOrThrow(res);
  }

  async listCandidates(runId: string): Promise<CandidateSummary[]> {
    const res = await this.fetchFn(`${this.baseUrl}/runs/${runId}/candidates`);
    const body = await parseOrThrow<{ candidates: CandidateSummary[] }>(res);
    return body.candidates;
  }

  async select(runId: string, candidateId: string): Promise<{ candidate_id: string }> {
    const res = await this.fetchFn(`${this.baseUrl}/runs/${runId}/select`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ candidate_id: candidateId }),
    });
    return parseOrThrow(res);
  }

  artifactUrl(runId: string, path: string): string {
    return `${this.baseUrl}/runs/${runId}/artifacts/${path}`;
  }

  async fetchMetrics(runId: string): Promise<import('./types.js').MetricReport> {
    const res = await this.fetchFn(this.artifactUrl(runId, 'metrics.json'));
    return parseOrThrow(res);
  }
}
