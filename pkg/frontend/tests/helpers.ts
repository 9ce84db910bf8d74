import { CandidateSummary, RunState } from '../src/types.js';

export function runState(overrides: Partial<RunState> = {}): RunState {
  return {
    run_id: 'run-0000-test',
    status: 'awaiting-selection',
    config_digest: 'digest',
    candidate_ids: ['c000', 'c001', 'c002'],
    selected_id: null,
    artifacts: [],
    progress: {},
    error: null,
    ...overrides,
  };
}

export function candidate(id: string, branch: number, score: number | null): CandidateSummary {
  return {
    id,
    branch,
    t: 124,
    score,
    seed_entropy: [0, branch],
    preview: `candidates/${id}/preview.png`,
  };
}

export interface FetchLog {
  calls: Array<{ url: string; method: string; body?: unknown }>;
}

/** fetch stub: routes by "METHOD url-suffix" substring match. */
export function fakeFetch(
  routes: Record<string, () => { status?: number; json?: unknown }>,
): { fetchFn: typeof fetch; log: FetchLog } {
  const log: FetchLog = { calls: [] };
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    const method = init?.method ?? 'GET';
    log.calls.push({
      url,
      method,
      body: init?.body ? JSON.parse(String(init.body)) : undefined,
    });
    for (const [pattern, handler] of Object.entries(routes)) {
      const [m, suffix] = pattern.split(' ', 2);
      if (method === m && url.includes(suffix)) {
        const res = handler();
        return new Response(JSON.stringify(res.json ?? {}), {
          status: res.status ?? 200,
          headers: { 'Content-Type': 'application/json' },
        });
      }
    }
    return new Response(JSON.stringify({ detail: 'no route' }), { status: 404 });
  }) as typeof fetch;
  return { fetchFn, log };
}
