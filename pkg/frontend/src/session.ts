import type { ApiClient } from "./api"
import { boxInside, clampBox } from "./coords"
import type { Box, HistoryEntry, SessionState } from "./types"

function emptyState(): SessionState {
  return {
    background: null,
    box: null,
    results: [],
    selected: null,
    heatmapB64: null,
    predictedBox: null,
    previewBytes: null,
    history: [],
  }
}

/**
 * The steering loop: draw/adjust a box, query, pick a result, preview, repeat.
 *
 * History is append-only; undo moves a cursor backwards and re-applies the
 * recorded (box, selection) pair. Only one query is live at a time: responses
 * arriving after a newer request started are discarded by sequence number.
 */
export class SessionController {
  readonly state: SessionState = emptyState()
  private imageB64 = ""
  private seq = 0
  private cursor = -1

  constructor(private readonly api: ApiClient) {}

  loadBackground(width: number, height: number, src: string, imageB64: string): void {
    const fresh = emptyState()
    Object.assign(this.state, fresh)
    this.state.background = { width, height, src }
    this.imageB64 = imageB64
    this.cursor = -1
    this.record()
  }

  private record(): void {
    const entry: HistoryEntry = {
      box: this.state.box ? { ...this.state.box } : null,
      selected: this.state.selected,
    }
    this.state.history.push(entry)
    this.cursor = this.state.history.length - 1
  }

  setBox(box: Box | null): void {
    if (!this.state.background) throw new Error("no background loaded")
    if (box) {
      const { width, height } = this.state.background
      box = clampBox(box, width, height)
      if (!boxInside(box, width, height)) throw new Error("box escaped clamping")
    }
    this.state.box = box
    this.record()
  }

  /** Arrow-key steering: move the box by whole pixels, staying inside. */
  nudgeBox(dx: number, dy: number): void {
    if (!this.state.box || !this.state.background) return
    const { width, height } = this.state.background
    const moved = { ...this.state.box, left: this.state.box.left + dx, top: this.state.box.top + dy }
    this.state.box = clampBox(moved, width, height)
    this.record()
  }

  selectResult(objectId: string): void {
    this.state.selected = objectId
    this.record()
  }

  undo(): void {
    if (this.cursor <= 0) return
    this.cursor -= 1
    const entry = this.state.history[this.cursor]
    this.state.box = entry.box ? { ...entry.box } : null
    this.state.selected = entry.selected
  }

  /** Query with the current box (or without one: the non-box pipeline). */
  async runQuery(k: number): Promise<boolean> {
    if (!this.state.background) throw new Error("no background loaded")
    const mySeq = ++this.seq
    const response = await this.api.query(this.imageB64, this.state.box, k)
    if (mySeq !== this.seq) return false // stale: a newer query superseded this one
    this.state.results = response.results
    this.state.heatmapB64 = response.heatmap_png_b64 ?? null
    if (!this.state.box && response.box) {
      const [left, top, width, height] = response.box
      this.state.predictedBox = { left, top, width, height }
      this.state.box = { left, top, width, height }
      this.record()
    }
    return true
  }

  async previewComposite(): Promise<ArrayBuffer> {
    if (!this.state.selected) throw new Error("no object selected")
    if (!this.state.box) throw new Error("no box present")
    const bytes = await this.api.composite(this.imageB64, this.state.selected, this.state.box)
    this.state.previewBytes = bytes
    return bytes
  }
}
