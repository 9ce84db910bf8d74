import { CreateRunPayload, GuidanceSpec, LocalSpec, Rect, ScheduleSpec } from './types.js';

export type MaskPreset = 'expand' | 'half' | 'square';

export interface EditorImage {
  width: number;
  height: number;
  pngBase64: string;
}

export function normalizeRect(r: Rect): Rect {
  const top = Math.min(r.top, r.top + r.height);
  const left = Math.min(r.left, r.left + r.width);
  return {
    top,
    left,
    height: Math.abs(r.height),
    width: Math.abs(r.width),
  };
}

export function rectsOverlap(a: Rect, b: Rect): boolean {
  return (
    a.left < b.left + b.width &&
    b.left < a.left + a.width &&
    a.top < b.top + b.height &&
    b.top < a.top + a.height
  );
}

/**
 * Rectangle mask and label editor. Collects user-drawn rectangles with one
 * class label each (local guidance, processed in draw order) or a set of
 * global labels, and emits a create-run payload matching the service schema.
 */
export class MaskEditor {
  private rects: LocalSpec[] = [];
  private globalLabels: number[] = [];
  private preset: MaskPreset | null = null;
  /** Warnings accumulated while editing (e.g. overlapping rectangles). */
  readonly warnings: string[] = [];

  constructor(private image: EditorImage) {}

  addRectangle(rect: Rect, label: number): void {
    const norm = normalizeRect(rect);
    if (norm.width === 0 || norm.height === 0) {
      throw new Error('rectangle must have positive size');
    }
    if (
      norm.top < 0 ||
      norm.left < 0 ||
      norm.top + norm.height > this.image.height ||
      norm.left + norm.width > this.image.width
    ) {
      throw new Error('rectangle outside the image');
    }
    for (const existing of this.rects) {
      if (rectsOverlap(norm, existing)) {
        // allowed: guidance is applied sequentially in draw order
        this.warnings.push(
          `rectangle overlaps an earlier one; regions are guided sequentially in draw order`,
        );
        break;
      }
    }
    this.rects.push({ ...norm, label });
  }

  removeRectangle(index: number): void {
    this.rects.splice(index, 1);
  }

  get rectangles(): readonly LocalSpec[] {
    return this.rects;
  }

  setGlobalLabels(labels: number[]): void {
    this.globalLabels = [...labels];
  }

  /** Preset buttons delegate to the three benchmark masks. */
  usePreset(preset: MaskPreset): void {
    this.preset = preset;
  }

  clearPreset(): void {
    this.preset = null;
  }

  buildPayload(
    backend: Record<string, unknown>,
    schedule: ScheduleSpec = { T: 250 },
    guidance: GuidanceSpec = {},
  ): CreateRunPayload {
    const local = this.rects.length > 0;
    if (!local && this.globalLabels.length === 0 && guidance.enable_cg !== false) {
      throw new Error('pick at least one global label or draw a labeled rectangle');
    }
    const payload: CreateRunPayload = {
      schedule,
      guidance: {
        ...guidance,
        mode: local ? 'local' : 'global',
        labels: local ? [] : this.globalLabels,
        local_specs: local ? [...this.rects] : [],
      },
      backend,
      image_png: this.image.pngBase64,
    };
    if (this.preset) {
      payload.mask_kind = this.preset;
    }
    return payload;
  }
}
