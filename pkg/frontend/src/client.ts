import type { DistanceGrid, DistanceReadout, ThresholdAck, ViewsInfo } from "./types.js";

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
  } catch {
    /* non-JSON error body */
  }
  return `${response.status} ${response.statusText}`;
}

/** Thin typed client; every number shown in the UI comes through here verbatim. */
export class SegmentationClient {
  constructor(readonly baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.baseUrl + path);
    if (!response.ok) {
      throw new ServiceError(response.status, await errorDetail(response));
    }
    return (await response.json()) as T;
  }

  views(): Promise<ViewsInfo> {
    return this.getJson<ViewsInfo>("/views");
  }

  /** URL of the server-colorized PNG; displayed as-is, never recolored. */
  colorizedUrl(viewId: string, clipMax: number): string {
    return `${this.baseUrl}/views/${encodeURIComponent(viewId)}/colorized?clip_max=${clipMax}`;
  }

  distance(viewId: string, u: number, v: number): Promise<DistanceReadout> {
    return this.getJson<DistanceReadout>(
      `/views/${encodeURIComponent(viewId)}/distance?u=${u}&v=${v}`,
    );
  }

  distanceGrid(viewId: string, size = 64): Promise<DistanceGrid> {
    return this.getJson<DistanceGrid>(
      `/views/${encodeURIComponent(viewId)}/distance_grid?size=${size}`,
    );
  }

  async confirm(rInner: number): Promise<ThresholdAck> {
    const response = await fetch(`${this.baseUrl}/threshold`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ r_inner: rInner }),
    });
    if (!response.ok) {
      throw new ServiceError(response.status, await errorDetail(response));
    }
    return (await response.json()) as ThresholdAck;
  }
}
