/** Typed client for the review service API. */

export type Mode = 'filter' | 'quality';

export interface QueueItem {
  id: string;
  mode: Mode;
  image_url: string;
  label?: string | null;
  category?: string | null;
  bbox?: [number, number, number, number];
  mask_url?: string;
}

export interface Progress {
  total: number;
  completed: number;
  remaining: number;
  speed_per_second: number;
  eta_seconds: number | null;
}

export type FilterFlag = 'multiple_objects' | 'human_body_visible' | 'extreme_closeup';
export type FlagReason = 'bad_label' | 'bad_box' | 'bad_mask';

export type Decision =
  | { verdict: 'keep' }
  | { verdict: 'exclude'; flags: Partial<Record<FilterFlag, boolean>> }
  | { verdict: 'approve' }
  | { verdict: 'flag'; reason: FlagReason };

export interface DecisionResult {
  ok: boolean;
  /** true when the item was already decided (409) or this was a key replay */
  alreadyDecided: boolean;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly fetchFn: FetchLike,
    private readonly base = '',
  ) {}

  /** Next pending item, or null when the queue is drained (204). */
  async nextItem(): Promise<QueueItem | null> {
    const resp = await this.fetchFn(`${this.base}/api/queue/next`);
    if (resp.status === 204) return null;
    if (!resp.ok) throw new Error(`queue/next failed: ${resp.status}`);
    return (await resp.json()) as QueueItem;
  }

  async getProgress(): Promise<Progress> {
    const resp = await this.fetchFn(`${this.base}/api/progress`);
    if (!resp.ok) throw new Error(`progress failed: ${resp.status}`);
    return (await resp.json()) as Progress;
  }

  /**
   * Posts one decision. Network errors and 5xx reject (callers retry);
   * a 409 resolves with alreadyDecided so callers can advance.
   */
  async postDecision(
    itemId: string,
    decision: Decision,
    idempotencyKey: string,
  ): Promise<DecisionResult> {
    const resp = await this.fetchFn(
      `${this.base}/api/items/${encodeURIComponent(itemId)}/decision`,
      {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify({ ...decision, idempotency_key: idempotencyKey }),
      },
    );
    if (resp.status === 409) return { ok: false, alreadyDecided: true };
    if (resp.ok) {
      const body = (await resp.json()) as { status?: string };
      return { ok: true, alreadyDecided: body.status === 'replayed' };
    }
    if (resp.status >= 500) throw new Error(`decision failed: ${resp.status}`);
    throw new PermanentDecisionError(`decision rejected: ${resp.status}`);
  }
}

/** A 4xx the server will never accept; retrying is pointless. */
export class PermanentDecisionError extends Error {}
