import { ApiClient } from './api.js';
import { CandidateGallery } from './gallery.js';
import { pollRun } from './polling.js';
import { MetricReport, RunState } from './types.js';

/**
 * Run view: renders whatever the service says the run is right now.
 * Reloading mid-run reconstructs the exact view from service state alone;
 * nothing is cached client-side beyond the current snapshot.
 */
export class RunView {
  readonly element: HTMLElement;
  private gallery: CandidateGallery;
  private statusLine: HTMLElement;
  private body: HTMLElement;
  private stopped = false;

  constructor(
    private client: ApiClient,
    private runId: string,
    private pollIntervalMs = 1000,
  ) {
    this.element = document.createElement('div');
    this.element.className = 'run-view';
    this.statusLine = document.createElement('div');
    this.statusLine.className = 'run-status';
    this.body = document.createElement('div');
    this.body.className = 'run-body';
    this.element.append(this.statusLine, this.body);
    this.gallery = new CandidateGallery(client, runId, {
      onError: (msg) => this.showNote(msg),
    });
  }

  /** Drive the view until the run is done or failed. */
  async run(): Promise<RunState> {
    const state = await pollRun(
      this.client,
      this.runId,
      ['awaiting-selection'],
      (s) => void this.renderState(s),
      this.pollIntervalMs,
    );
    if (state.status === 'awaiting-selection') {
      const done = await pollRun(
        this.client,
        this.runId,
        ['done'],
        (s) => void this.renderState(s),
        this.pollIntervalMs,
      );
      await this.renderState(done);
      return done;
    }
    await this.renderState(state);
    return state;
  }

  stop(): void {
    this.stopped = true;
  }

  async renderState(state: RunState): Promise<void> {
    if (this.stopped) return;
    const progress = state.progress?.total
      ? ` (${state.progress.done}/${state.progress.total})`
      : '';
    this.statusLine.textContent = `run ${state.run_id}: ${state.status}${progress}`;
    this.body.textContent = '';

    if (state.status === 'failed') {
      const err = document.createElement('div');
      err.className = 'run-error';
      err.textContent = state.error ?? 'run failed';
      this.body.appendChild(err);
      return;
    }
    if (state.status === 'awaiting-selection' || state.status === 'refining') {
      try {
        const candidates = await this.client.listCandidates(this.runId);
        this.gallery.render(state, candidates);
        this.body.appendChild(this.gallery.element);
      } catch {
        this.showNote('candidates not available yet');
      }
    }
    if (state.status === 'done') {
      this.body.appendChild(await this.buildResultView(state));
    }
  }

  private async buildResultView(state: RunState): Promise<HTMLElement> {
    const view = document.createElement('div');
    view.className = 'result-view';

    const img = document.createElement('img');
    img.src = this.client.artifactUrl(this.runId, 'result.png');
    img.alt = 'final inpainting result';
    img.className = 'result-image';
    view.appendChild(img);

    const caption = document.createElement('div');
    caption.className = 'result-caption';
    caption.textContent = `selected ${state.selected_id}`;
    view.appendChild(caption);

    try {
      const metrics = await this.client.fetchMetrics(this.runId);
      view.appendChild(buildMetricReadout(metrics));
    } catch {
      this.showNote('metrics not available');
    }
    return view;
  }

  private showNote(message: string): void {
    const note = document.createElement('div');
    note.className = 'run-note';
    note.textContent = message;
    this.body.appendChild(note);
  }
}

export function buildMetricReadout(metrics: MetricReport): HTMLElement {
  const dl = document.createElement('dl');
  dl.className = 'metric-readout';
  const entries: Array<[string, number]> = [
    ['PSNR (full)', metrics.psnr_full],
    ['PSNR (unknown region)', metrics.psnr_unknown],
    ['SSIM (full)', metrics.ssim_full],
    ['SSIM (unknown region)', metrics.ssim_unknown],
  ];
  for (const [name, value] of entries) {
    const dt = document.createElement('dt');
    dt.textContent = name;
    const dd = document.createElement('dd');
    dd.textContent = name.startsWith('PSNR') ? `${value.toFixed(2)} dB` : value.toFixed(4);
    dl.append(dt, dd);
  }
  return dl;
}
