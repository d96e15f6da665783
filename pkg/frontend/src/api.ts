import type { Box, HealthResponse, QueryResponse } from "./types"

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message)
  }
}

/** Thin client for the /v1 endpoints; fetch is injectable for tests. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async post(path: string, payload: unknown): Promise<Response> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    })
    if (!resp.ok) {
      let detail = `${resp.status}`
      try {
        const body = await resp.json()
        detail = body.error ?? detail
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail)
    }
    return resp
  }

  async query(imageB64: string, box: Box | null, k: number): Promise<QueryResponse> {
    const payload: Record<string, unknown> = { image: imageB64, k }
    if (box) payload.box = [box.left, box.top, box.width, box.height]
    const resp = await this.post("/v1/query", payload)
    return (await resp.json()) as QueryResponse
  }

  async composite(imageB64: string, objectId: string, box: Box): Promise<ArrayBuffer> {
    const resp = await this.post("/v1/composite", {
      image: imageB64,
      object_id: objectId,
      box: [box.left, box.top, box.width, box.height],
    })
    return await resp.arrayBuffer()
  }

  async health(): Promise<HealthResponse> {
    const resp = await this.fetchImpl(`${this.baseUrl}/v1/health`)
    return (await resp.json()) as HealthResponse
  }

  thumbnailUrl(objectId: string): string {
    return `${this.baseUrl}/v1/objects/${objectId}/thumbnail`
  }
}
