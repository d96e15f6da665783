export interface Box {
  left: number
  top: number
  width: number
  height: number
}

export interface Point {
  x: number
  y: number
}

export interface QueryResult {
  id: string
  score: number
  thumbnail_url: string
}

export interface QueryResponse {
  results: QueryResult[]
  box?: [number, number, number, number]
  heatmap_png_b64?: string
  elapsed_ms: number
}

export interface HealthResponse {
  status: string
  index_size?: number
  embed_dim?: number
}

/** One step of the steering loop: the box and selection after an action. */
export interface HistoryEntry {
  box: Box | null
  selected: string | null
}

export interface SessionState {
  background: { width: number; height: number; src: string } | null
  box: Box | null
  results: QueryResult[]
  selected: string | null
  heatmapB64: string | null
  predictedBox: Box | null
  previewBytes: ArrayBuffer | null
  history: HistoryEntry[]
}
