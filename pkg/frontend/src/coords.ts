import type { Box, Point } from "./types"

/** Minimum box side in image pixels; smaller drags are discarded as clicks. */
export const MIN_BOX_SIDE = 4

/** Canvas (screen) coordinates -> image pixel coordinates at a given zoom. */
export function canvasToImage(p: Point, zoom: number): Point {
  return { x: p.x / zoom, y: p.y / zoom }
}

/** Image pixel coordinates -> canvas (screen) coordinates at a given zoom. */
export function imageToCanvas(p: Point, zoom: number): Point {
  return { x: p.x * zoom, y: p.y * zoom }
}

/** Translate a box (size preserved) so it lies inside the image. */
export function clampBox(box: Box, imageW: number, imageH: number): Box {
  const width = Math.min(box.width, imageW)
  const height = Math.min(box.height, imageH)
  const left = Math.min(Math.max(box.left, 0), imageW - width)
  const top = Math.min(Math.max(box.top, 0), imageH - height)
  return { left, top, width, height }
}

export function boxInside(box: Box, imageW: number, imageH: number): boolean {
  return (
    box.left >= 0 &&
    box.top >= 0 &&
    box.left + box.width <= imageW &&
    box.top + box.height <= imageH
  )
}

/**
 * Rubber-band drag -> pixel-space box.
 *
 * Corners may arrive in any order; coordinates are converted from canvas to
 * image space, rounded, and clamped. Returns null for degenerate drags
 * (either side under MIN_BOX_SIDE image pixels).
 */
export function dragToBox(
  start: Point,
  end: Point,
  zoom: number,
  imageW: number,
  imageH: number,
): Box | null {
  const a = canvasToImage(start, zoom)
  const b = canvasToImage(end, zoom)
  const left = Math.round(Math.min(a.x, b.x))
  const top = Math.round(Math.min(a.y, b.y))
  const right = Math.round(Math.max(a.x, b.x))
  const bottom = Math.round(Math.max(a.y, b.y))
  const width = right - left
  const height = bottom - top
  if (width < MIN_BOX_SIDE || height < MIN_BOX_SIDE) return null
  return clampBox({ left, top, width, height }, imageW, imageH)
}
