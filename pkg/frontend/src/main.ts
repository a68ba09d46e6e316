import { ApiClient, Mode } from './api.js';
import { ReviewController, ViewElements } from './controller.js';
import { FILTER_KEY_HELP, QUALITY_KEY_HELP } from './keyboard.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function currentMode(): Mode {
  const mode = new URLSearchParams(window.location.search).get('mode');
  return mode === 'quality' ? 'quality' : 'filter';
}

function wireButtons(controller: ReviewController, mode: Mode): void {
  const buttons: Array<[string, string]> =
    mode === 'filter'
      ? [['btn-keep', '1'], ['btn-multiple', '2'], ['btn-body', '3'], ['btn-closeup', '4']]
      : [['btn-approve', 'a'], ['btn-flag-label', 'f1'], ['btn-flag-box', 'f2'], ['btn-flag-mask', 'f3']];
  for (const [id, keys] of buttons) {
    const button = document.getElementById(id);
    if (!button) continue;
    button.hidden = false;
    button.addEventListener('click', async () => {
      for (const key of keys) await controller.handleKey(key);
    });
  }
}

export function boot(): void {
  const mode = currentMode();
  const view: ViewElements = {
    image: el<HTMLImageElement>('item-image'),
    maskImage: el<HTMLImageElement>('mask-image'),
    overlayImage: el<HTMLImageElement>('overlay-image'),
    overlayCanvas: el<HTMLCanvasElement>('overlay-canvas'),
    labelText: el('label-text'),
    progressText: el('progress-text'),
    statusText: el('status-text'),
    donePanel: el('done-panel'),
    reviewPanel: el('review-panel'),
  };
  document.body.dataset.mode = mode;
  el('key-help').textContent = mode === 'filter' ? FILTER_KEY_HELP : QUALITY_KEY_HELP;

  const controller = new ReviewController(new ApiClient(fetch.bind(window)), mode, view);
  wireButtons(controller, mode);

  view.overlayImage.addEventListener('load', () => controller.drawOverlay());
  document.addEventListener('keydown', (event) => {
    if (event.target instanceof HTMLInputElement || event.target instanceof HTMLTextAreaElement) {
      return;
    }
    void controller.handleKey(event.key);
  });
  void controller.start();
}

boot();
