import type { Decision, FlagReason } from './api.js';

/**
 * Keyboard layout.
 *
 * filter mode:  1 keep · 2 multiple objects · 3 human body · 4 extreme close-up
 * quality mode: a approve · f arm flag, then 1 bad label · 2 bad box · 3 bad mask
 *               (Escape cancels an armed flag)
 */

export const FILTER_DECISIONS: Record<string, Decision> = {
  '1': { verdict: 'keep' },
  '2': { verdict: 'exclude', flags: { multiple_objects: true } },
  '3': { verdict: 'exclude', flags: { human_body_visible: true } },
  '4': { verdict: 'exclude', flags: { extreme_closeup: true } },
};

export const FLAG_REASONS: Record<string, FlagReason> = {
  '1': 'bad_label',
  '2': 'bad_box',
  '3': 'bad_mask',
};

export const FILTER_KEY_HELP = '1 keep · 2 multiple · 3 body · 4 close-up';
export const QUALITY_KEY_HELP = 'a approve · f+1/2/3 flag label/box/mask';
