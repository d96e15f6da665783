/** Heatmap overlay helpers: pure pixel math, testable without a DOM. */

/** Blue -> cyan -> yellow -> red ramp for a normalized value in [0, 1]. */
export function colorRamp(v: number): [number, number, number] {
  const t = Math.min(1, Math.max(0, v))
  if (t < 1 / 3) {
    const u = t * 3
    return [0, Math.round(255 * u), 255]
  }
  if (t < 2 / 3) {
    const u = (t - 1 / 3) * 3
    return [Math.round(255 * u), 255, Math.round(255 * (1 - u))]
  }
  const u = (t - 2 / 3) * 3
  return [255, Math.round(255 * (1 - u)), 0]
}

/**
 * Blend a grayscale heatmap (one byte per pixel) over RGBA background pixels.
 * Returns a new RGBA buffer; opacity in [0, 1] scales the overlay.
 */
export function blendHeatmap(
  background: Uint8ClampedArray,
  heat: Uint8ClampedArray,
  opacity: number,
): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(background.length)
  const alpha = Math.min(1, Math.max(0, opacity))
  for (let i = 0; i < heat.length; i++) {
    const [r, g, b] = colorRamp(heat[i] / 255)
    const j = i * 4
    out[j] = Math.round(background[j] * (1 - alpha) + r * alpha)
    out[j + 1] = Math.round(background[j + 1] * (1 - alpha) + g * alpha)
    out[j + 2] = Math.round(background[j + 2] * (1 - alpha) + b * alpha)
    out[j + 3] = 255
  }
  return out
}
