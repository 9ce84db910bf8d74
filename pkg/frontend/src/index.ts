export { ApiClient, ApiError } from './api.js';
export { CandidateGallery } from './gallery.js';
export { MaskEditor, normalizeRect, rectsOverlap } from './maskEditor.js';
export { pollRun } from './polling.js';
export { RunView, buildMetricReadout } from './app.js';
export * from './types.js';
