import { describe, expect, it } from "vitest"

import { blendHeatmap, colorRamp } from "../src/heatmap"

describe("heatmap overlay", () => {
  it("ramp endpoints are blue and red", () => {
    expect(colorRamp(0)).toEqual([0, 0, 255])
    expect(colorRamp(1)).toEqual([255, 0, 0])
  })

  it("ramp stays in byte range and is monotone in red-blue balance", () => {
    let prev = -256
    for (let i = 0; i <= 20; i++) {
      const [r, g, b] = colorRamp(i / 20)
      for (const c of [r, g, b]) {
        expect(c).toBeGreaterThanOrEqual(0)
        expect(c).toBeLessThanOrEqual(255)
      }
      expect(r - b).toBeGreaterThanOrEqual(prev)
      prev = r - b
    }
  })

  it("opacity 0 returns the background unchanged", () => {
    const bg = new Uint8ClampedArray([10, 20, 30, 255, 40, 50, 60, 255])
    const heat = new Uint8ClampedArray([0, 255])
    const out = blendHeatmap(bg, heat, 0)
    expect([...out]).toEqual([10, 20, 30, 255, 40, 50, 60, 255])
  })

  it("opacity 1 returns the pure ramp colors", () => {
    const bg = new Uint8ClampedArray([10, 20, 30, 255])
    const heat = new Uint8ClampedArray([255])
    const out = blendHeatmap(bg, heat, 1)
    expect([...out.slice(0, 3)]).toEqual([255, 0, 0])
  })
})
