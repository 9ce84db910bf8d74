/** Wire types mirrored from the service JSON. */

export type RunStatus =
  | 'created'
  | 'sampling'
  | 'awaiting-selection'
  | 'refining'
  | 'done'
  | 'failed';

export interface RunState {
  run_id: string;
  status: RunStatus;
  config_digest: string;
  candidate_ids: string[];
  selected_id: string | null;
  artifacts: string[];
  progress: { phase?: string; done?: number; total?: number };
  error: string | null;
}

export interface CandidateSummary {
  id: string;
  branch: number;
  t: number;
  score: number | null;
  seed_entropy: [number, number];
  preview: string; // artifact path relative to the run
}

export interface MetricReport {
  psnr_full: number;
  psnr_unknown: number;
  ssim_full: number;
  ssim_unknown: number;
  config_digest?: string;
}

export interface ScheduleSpec {
  T: number;
  beta_start?: number | null;
  beta_end?: number | null;
  stage_steps?: number[] | null;
}

export interface Rect {
  top: number;
  left: number;
  height: number;
  width: number;
}

export interface LocalSpec extends Rect {
  label: number;
}

export interface GuidanceSpec {
  s?: number;
  i_guid?: number;
  i_inp?: number;
  t_stop_comp?: number;
  candidates?: number;
  seed?: number;
  enable_cg?: boolean;
  enable_ss?: boolean;
  mode?: 'global' | 'local';
  labels?: number[];
  local_specs?: LocalSpec[];
}

export interface CreateRunPayload {
  schedule: ScheduleSpec;
  guidance: GuidanceSpec;
  backend: Record<string, unknown>;
  image_png: string; // base64
  mask_png?: string; // base64, 255 = known
  mask_kind?: 'expand' | 'half' | 'square';
  idempotency_key?: string;
}
