import {
  ApiClient,
  Decision,
  Mode,
  PermanentDecisionError,
  QueueItem,
} from './api.js';
import { FILTER_DECISIONS, FLAG_REASONS } from './keyboard.js';
import { Box, drawBoxOverlay, RectContext, scaleBoxToCanvas } from './overlay.js';
import { formatProgress } from './progress.js';

export interface ViewElements {
  image: HTMLImageElement;
  maskImage: HTMLImageElement;
  overlayImage: HTMLImageElement;
  overlayCanvas: HTMLCanvasElement;
  labelText: HTMLElement;
  progressText: HTMLElement;
  statusText: HTMLElement;
  donePanel: HTMLElement;
  reviewPanel: HTMLElement;
}

export interface ControllerOptions {
  /** pause between retries of a failed decision POST */
  retryDelayMs?: number;
  /** displayed canvas size; defaults to the element's rendered size */
  canvasSize?: { width: number; height: number };
  sessionId?: string;
}

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/**
 * One review session: shows one item at a time, turns keystrokes into
 * decisions, POSTs each exactly once per item (an idempotency key makes
 * retries safe), refreshes the progress header after every round trip, and
 * advances only after the server has accepted the decision. A failed POST
 * is retried, never dropped.
 */
export class ReviewController {
  readonly mode: Mode;
  current: QueueItem | null = null;
  done = false;
  /** last overlay rectangle in canvas coordinates, for tests and debugging */
  lastOverlayBox: Box | null = null;

  private flagArmed = false;
  private submitting = false;
  private readonly sessionId: string;
  private readonly retryDelayMs: number;

  constructor(
    private readonly api: ApiClient,
    mode: Mode,
    private readonly view: ViewElements,
    private readonly options: ControllerOptions = {},
  ) {
    this.mode = mode;
    this.retryDelayMs = options.retryDelayMs ?? 1000;
    this.sessionId = options.sessionId ?? cryptoRandomId();
  }

  async start(): Promise<void> {
    await this.refreshProgress();
    await this.advance();
  }

  /** Routes one key press; ignores input while a POST is in flight. */
  async handleKey(key: string): Promise<void> {
    if (this.done || this.current === null || this.submitting) return;
    if (this.mode === 'filter') {
      const decision = FILTER_DECISIONS[key];
      if (decision) await this.submit(decision);
      return;
    }
    if (this.flagArmed) {
      if (key === 'Escape') {
        this.flagArmed = false;
        this.setStatus('');
        return;
      }
      const reason = FLAG_REASONS[key];
      if (reason) {
        this.flagArmed = false;
        await this.submit({ verdict: 'flag', reason });
      }
      return;
    }
    if (key === 'a') {
      await this.submit({ verdict: 'approve' });
    } else if (key === 'f') {
      this.flagArmed = true;
      this.setStatus('flag: 1 bad label · 2 bad box · 3 bad mask · Esc cancel');
    }
  }

  /** Sends the decision, retrying on transient failures until it lands. */
  private async submit(decision: Decision): Promise<void> {
    if (this.current === null) return;
    const item = this.current;
    const key = `${this.sessionId}:${item.id}`;
    this.submitting = true;
    try {
      for (;;) {
        try {
          const result = await this.api.postDecision(item.id, decision, key);
          if (result.alreadyDecided) this.setStatus('already decided elsewhere');
          else this.setStatus('');
          break;
        } catch (err) {
          if (err instanceof PermanentDecisionError) {
            this.setStatus(`rejected: ${err.message}`);
            return; // stay on the item; a different verdict may succeed
          }
          this.setStatus('offline – retrying…');
          await sleep(this.retryDelayMs);
        }
      }
      await this.refreshProgress();
      await this.advance();
    } finally {
      this.submitting = false;
    }
  }

  private async advance(): Promise<void> {
    const item = await this.api.nextItem();
    this.current = item;
    this.flagArmed = false;
    if (item === null) {
      this.done = true;
      this.renderDone();
      return;
    }
    this.render(item);
  }

  private render(item: QueueItem): void {
    this.view.reviewPanel.hidden = false;
    this.view.donePanel.hidden = true;
    this.view.image.src = item.image_url;
    if (this.mode === 'quality') {
      this.view.labelText.textContent = item.label ?? '(no label)';
      if (item.mask_url) this.view.maskImage.src = item.mask_url;
      this.view.overlayImage.src = item.image_url;
    }
    this.lastOverlayBox = null;
    this.drawOverlay();
  }

  /**
   * Scales the payload box onto the overlay canvas. Called again from the
   * image's load event once natural dimensions are known.
   */
  drawOverlay(naturalWidth?: number, naturalHeight?: number): void {
    const item = this.current;
    if (!item || this.mode !== 'quality' || !item.bbox) return;
    const nw = naturalWidth ?? this.view.overlayImage.naturalWidth;
    const nh = naturalHeight ?? this.view.overlayImage.naturalHeight;
    if (!nw || !nh) return;
    const size = this.options.canvasSize ?? {
      width: this.view.overlayCanvas.width,
      height: this.view.overlayCanvas.height,
    };
    this.view.overlayCanvas.width = size.width;
    this.view.overlayCanvas.height = size.height;
    const [x, y, w, h] = item.bbox;
    const box = scaleBoxToCanvas({ x, y, w, h }, nw, nh, size.width, size.height);
    this.lastOverlayBox = box;
    const ctx = this.view.overlayCanvas.getContext('2d') as RectContext | null;
    if (ctx) drawBoxOverlay(ctx, box, size.width, size.height);
  }

  private renderDone(): void {
    this.view.reviewPanel.hidden = true;
    this.view.donePanel.hidden = false;
  }

  private async refreshProgress(): Promise<void> {
    const progress = await this.api.getProgress();
    this.view.progressText.textContent = formatProgress(progress);
    if (this.done || progress.remaining === 0) {
      this.view.donePanel.textContent = `All done: ${progress.completed}/${progress.total} reviewed.`;
    }
  }

  private setStatus(text: string): void {
    this.view.statusText.textContent = text;
  }
}

function cryptoRandomId(): string {
  if (typeof crypto !== 'undefined' && 'randomUUID' in crypto) return crypto.randomUUID();
  return `s${Math.random().toString(36).slice(2)}`;
}
