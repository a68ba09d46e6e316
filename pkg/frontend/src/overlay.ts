/** Bounding-box overlay geometry and drawing. */

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

/**
 * Maps a box given in natural-image pixels onto a canvas of a different
 * size. The canvas is assumed to show the full image (no letterboxing), so
 * each axis scales independently.
 */
export function scaleBoxToCanvas(
  box: Box,
  naturalWidth: number,
  naturalHeight: number,
  canvasWidth: number,
  canvasHeight: number,
): Box {
  const sx = canvasWidth / naturalWidth;
  const sy = canvasHeight / naturalHeight;
  return { x: box.x * sx, y: box.y * sy, w: box.w * sx, h: box.h * sy };
}

export interface RectContext {
  clearRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
}

export function drawBoxOverlay(
  ctx: RectContext,
  box: Box,
  canvasWidth: number,
  canvasHeight: number,
  color = '#00e05a',
): void {
  ctx.clearRect(0, 0, canvasWidth, canvasHeight);
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.strokeRect(box.x, box.y, box.w, box.h);
}
