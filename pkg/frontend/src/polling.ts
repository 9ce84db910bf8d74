import { ApiClient } from './api.js';
import { RunState, RunStatus } from './types.js';

const TERMINAL: RunStatus[] = ['done', 'failed'];

/**
 * Poll a run until it reaches one of the target statuses (or any terminal
 * status). Calls onUpdate with every snapshot so views can re-render; the UI
 * keeps no state of its own beyond the latest snapshot.
 */
export async function pollRun(
  client: ApiClient,
  runId: string,
  until: RunStatus[],
  onUpdate?: (state: RunState) => void,
  intervalMs = 1000,
  maxAttempts = 600,
): Promise<RunState> {
  for (let attempt = 0; attempt < maxAttempts; attempt++) {
    const state = await client.getRun(runId);
    if (onUpdate) onUpdate(state);
    if (until.includes(state.status) || TERMINAL.includes(state.status)) {
      return state;
    }
    await new Promise((resolve) => setTimeout(resolve, intervalMs));
  }
  throw new Error(`run ${runId} did not reach ${until.join('/')} in time`);
}
