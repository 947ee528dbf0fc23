// Typed client over the service HTTP API. All calls go through the
// documented endpoints only.

import type {
  ClassifyResponse,
  ModelInfo,
  ServiceErrorBody,
  SpeciesInfo,
} from "./types.js";

/** A structured {code, message} error returned by the service. */
export class ServiceApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(body: ServiceErrorBody, status: number) {
    super(body.message);
    this.code = body.code;
    this.status = status;
  }
}

/** Network-level failure (service unreachable); the UI offers a retry. */
export class NetworkError extends Error {}

async function parseError(res: Response): Promise<never> {
  let body: ServiceErrorBody;
  try {
    body = (await res.json()) as ServiceErrorBody;
  } catch {
    body = { code: "http_error", message: `service returned HTTP ${res.status}` };
  }
  throw new ServiceApiError(body, res.status);
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private async get<T>(path: string): Promise<T> {
    let res: Response;
    try {
      res = await fetch(this.baseUrl + path);
    } catch (err) {
      throw new NetworkError(`cannot reach service: ${err}`);
    }
    if (!res.ok) await parseError(res);
    return (await res.json()) as T;
  }

  async classify(image: Blob, k = 3): Promise<ClassifyResponse> {
    let res: Response;
    try {
      res = await fetch(`${this.baseUrl}/classify?k=${k}`, {
        method: "POST",
        headers: { "content-type": "application/octet-stream" },
        body: image,
      });
    } catch (err) {
      throw new NetworkError(`cannot reach service: ${err}`);
    }
    if (!res.ok) await parseError(res);
    return (await res.json()) as ClassifyResponse;
  }

  async classes(): Promise<string[]> {
    const body = await this.get<{ classes: string[] }>("/classes");
    return body.classes;
  }

  async species(name: string): Promise<SpeciesInfo> {
    return this.get<SpeciesInfo>(`/species/${encodeURIComponent(name)}`);
  }

  async modelInfo(): Promise<ModelInfo> {
    return this.get<ModelInfo>("/model/info");
  }

  async health(): Promise<boolean> {
    try {
      await this.get<{ status: string }>("/healthz");
      return true;
    } catch {
      return false;
    }
  }
}
