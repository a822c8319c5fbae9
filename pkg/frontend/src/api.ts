/** Typed client for the protection service. The studio only ever talks to
 * the service through these three endpoints; configuration is limited to the
 * base URL (and an optional bearer token passed through as-is). */

export interface LevelEntry {
  level: number;
  path?: string;
  available: boolean;
}

export interface MetricReport {
  protocol: string;
  psnr: number;
  rmse: number;
  ssim: number;
  fid: number | null;
  perceptual: number;
  sample_count: number;
}

export interface ProtectResponse {
  level: number;
  original_size: [number, number];
  resolution: number;
  /** base64 PNG — the artifact the artist exports, byte-exact. */
  protected: string;
  metrics: { p1: MetricReport; p2?: MetricReport };
  preview_input_diffused?: string;
  preview_protected_diffused?: string;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface ClientOptions {
  baseUrl: string;
  token?: string;
  fetchImpl?: FetchLike;
}

export class ServiceClient {
  private baseUrl: string;
  private token?: string;
  private fetchImpl: FetchLike;

  constructor(opts: ClientOptions) {
    this.baseUrl = opts.baseUrl.replace(/\/+$/, "");
    this.token = opts.token;
    this.fetchImpl = opts.fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private headers(json: boolean): Record<string, string> {
    const h: Record<string, string> = {};
    if (json) h["content-type"] = "application/json";
    if (this.token) h["authorization"] = `Bearer ${this.token}`;
    return h;
  }

  private async checked(resp: Response): Promise<unknown> {
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      // non-JSON error bodies fall through with a generic detail
    }
    if (!resp.ok) {
      const detail =
        body && typeof body === "object" && "detail" in body
          ? String((body as { detail: unknown }).detail)
          : `request failed with status ${resp.status}`;
      throw new ApiError(resp.status, detail);
    }
    return body;
  }

  async health(): Promise<{ status: string; oracle: string }> {
    const resp = await this.fetchImpl(`${this.baseUrl}/health`, {
      headers: this.headers(false),
    });
    return (await this.checked(resp)) as { status: string; oracle: string };
  }

  /** The service's levels are the only levels the studio ever offers. */
  async levels(): Promise<LevelEntry[]> {
    const resp = await this.fetchImpl(`${this.baseUrl}/levels`, {
      headers: this.headers(false),
    });
    const body = (await this.checked(resp)) as { levels: LevelEntry[] };
    return body.levels.filter((e) => e.available);
  }

  async protect(
    imageBase64: string,
    level: number,
    preview: boolean,
  ): Promise<ProtectResponse> {
    const resp = await this.fetchImpl(`${this.baseUrl}/protect`, {
      method: "POST",
      headers: this.headers(true),
      body: JSON.stringify({ image: imageBase64, level, preview }),
    });
    return (await this.checked(resp)) as ProtectResponse;
  }
}
