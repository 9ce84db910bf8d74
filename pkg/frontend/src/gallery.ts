import { ApiClient, ApiError } from './api.js';
import { CandidateSummary, RunState } from './types.js';

export interface GalleryOptions {
  /** Called after a selection request succeeds. */
  onSelected?: (candidateId: string) => void;
  /** Called with a user-facing message when a request fails. */
  onError?: (message: string) => void;
}

function scoreText(score: number | null): string {
  return score === null ? 'score n/a' : `score ${score.toFixed(4)}`;
}

function sortByScore(cands: CandidateSummary[]): CandidateSummary[] {
  return [...cands].sort((a, b) => {
    const sa = a.score ?? -Infinity;
    const sb = b.score ?? -Infinity;
    if (sa !== sb) return sb - sa;
    return a.branch - b.branch;
  });
}

/**
 * Candidate gallery: one card per stochastic branch, previews sorted by
 * classifier score. Clicking a card fires exactly one selection request;
 * clicks outside awaiting-selection are inert with an explanatory tooltip.
 */
export class CandidateGallery {
  readonly element: HTMLElement;
  private selectionSent = false;

  constructor(
    private client: ApiClient,
    private runId: string,
    private opts: GalleryOptions = {},
  ) {
    this.element = document.createElement('div');
    this.element.className = 'candidate-gallery';
  }

  render(state: RunState, candidates: CandidateSummary[]): void {
    this.element.textContent = '';
    const selectable = state.status === 'awaiting-selection' && !this.selectionSent;
    for (const cand of sortByScore(candidates)) {
      this.element.appendChild(this.buildCard(cand, state, selectable));
    }
  }

  private buildCard(
    cand: CandidateSummary,
    state: RunState,
    selectable: boolean,
  ): HTMLElement {
    const card = document.createElement('button');
    card.className = 'candidate-card';
    card.dataset.candidateId = cand.id;

    const img = document.createElement('img');
    img.src = this.client.artifactUrl(this.runId, cand.preview);
    img.alt = `candidate ${cand.id} preview`;
    card.appendChild(img);

    const caption = document.createElement('div');
    caption.className = 'candidate-caption';
    caption.textContent = `${cand.id} · ${scoreText(cand.score)} · seed ${cand.seed_entropy.join('/')}`;
    card.appendChild(caption);

    if (state.selected_id === cand.id) {
      card.classList.add('selected');
    }
    if (selectable) {
      card.addEventListener('click', () => void this.select(cand.id));
    } else {
      card.disabled = true;
      card.title =
        state.status === 'awaiting-selection'
          ? 'selection already sent'
          : `run is ${state.status}; selection is only possible while awaiting-selection`;
    }
    return card;
  }

  private async select(candidateId: string): Promise<void> {
    if (this.selectionSent) return;
    this.selectionSent = true; // guard before the request: at most one POST
    for (const el of this.element.querySelectorAll<HTMLButtonElement>('button')) {
      el.disabled = true;
    }
    try {
      await this.client.select(this.runId, candidateId);
      this.opts.onSelected?.(candidateId);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else selected first; the next poll re-renders from truth
        this.opts.onError?.('selection already made elsewhere');
      } else {
        this.selectionSent = false; // network failure: allow retry
        for (const el of this.element.querySelectorAll<HTMLButtonElement>('button')) {
          el.disabled = false;
        }
        this.opts.onError?.(`selection failed: ${String(err)} (click to retry)`);
      }
    }
  }
}
