/** Mapping between screen (canvas CSS pixels) and stored-image coordinates.
 *
 * Clicks are stored in stored-image space; the display scale is applied only
 * when rendering, so the session state never depends on the window size.
 */

export interface DisplayGeometry {
  imageWidth: number;
  imageHeight: number;
  canvasWidth: number;
  canvasHeight: number;
}

export function displayScale(geom: DisplayGeometry): number {
  return Math.min(
    geom.canvasWidth / geom.imageWidth,
    geom.canvasHeight / geom.imageHeight,
  );
}

/** Top-left offset that centers the scaled image on the canvas. */
export function displayOffset(geom: DisplayGeometry): { x: number; y: number } {
  const s = displayScale(geom);
  return {
    x: (geom.canvasWidth - geom.imageWidth * s) / 2,
    y: (geom.canvasHeight - geom.imageHeight * s) / 2,
  };
}

/** Screen position to integer image pixel, or null when outside the image. */
export function screenToImage(
  geom: DisplayGeometry,
  x: number,
  y: number,
): { row: number; col: number } | null {
  const s = displayScale(geom);
  const off = displayOffset(geom);
  const col = Math.floor((x - off.x) / s);
  const row = Math.floor((y - off.y) / s);
  if (row < 0 || col < 0 || row >= geom.imageHeight || col >= geom.imageWidth) {
    return null;
  }
  return { row, col };
}

/** Center of an image pixel in screen space. */
export function imageToScreen(
  geom: DisplayGeometry,
  row: number,
  col: number,
): { x: number; y: number } {
  const s = displayScale(geom);
  const off = displayOffset(geom);
  return { x: off.x + (col + 0.5) * s, y: off.y + (row + 0.5) * s };
}
