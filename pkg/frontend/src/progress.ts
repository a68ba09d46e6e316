import type { Progress } from './api.js';

/** "2h 3m", "4m 10s", "12s" */
export function formatEta(seconds: number | null): string {
  if (seconds === null || !isFinite(seconds)) return '–';
  const s = Math.round(seconds);
  if (s < 60) return `${s}s`;
  if (s < 3600) return `${Math.floor(s / 60)}m ${s % 60}s`;
  return `${Math.floor(s / 3600)}h ${Math.floor((s % 3600) / 60)}m`;
}

/** Header line: completed/total, speed in items per second, ETA. */
export function formatProgress(p: Progress): string {
  const speed = p.speed_per_second.toFixed(2);
  return `${p.completed}/${p.total} · ${speed}/s · ETA ${formatEta(p.eta_seconds)}`;
}
