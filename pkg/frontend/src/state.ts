/** Studio session state: one uploaded image, a discrete protection level
 * picked from the server's bank, and a cache of protect responses keyed by
 * (image hash, level).
 *
 * Contracts enforced here rather than in the DOM layer so they are testable
 * headlessly:
 *  - the level list is exactly what GET /levels returned — nothing
 *    interpolated, nothing hard-coded;
 *  - a slider move to a cached level never touches the network;
 *  - at most one protect request is in flight per level, and responses that
 *    arrive after the upload they belong to was replaced are discarded
 *    (matched by image hash);
 *  - export is only possible when a response exists for the selected level.
 */

import { ProtectResponse, ServiceClient } from "./api.js";
import { bytesToBase64, sha256Hex } from "./encoding.js";

export type ComparisonMode = "pair" | "four-panel" | "level-grid";

export interface UploadedImage {
  name: string;
  bytes: Uint8Array;
  base64: string;
  hash: string;
}

export interface StateEvents {
  /** Fired whenever anything render-relevant changed. */
  onChange?: () => void;
  /** Fired when a request fails; the DOM layer shows the banner. */
  onError?: (message: string, retry: () => void) => void;
}

const cacheKey = (hash: string, level: number) => `${hash}:${level}`;

export class StudioState {
  readonly levels: number[];
  selectedLevel: number;
  mode: ComparisonMode = "four-panel";
  image: UploadedImage | null = null;

  private cache = new Map<string, ProtectResponse>();
  private inFlight = new Map<string, Promise<void>>();
  private client: ServiceClient;
  private events: StateEvents;
  /** Count of network protect calls, exposed for the cache-contract tests. */
  requestCount = 0;

  constructor(client: ServiceClient, levels: number[], events: StateEvents = {}) {
    if (levels.length === 0) {
      throw new Error("service reported no available levels");
    }
    this.client = client;
    this.levels = [...levels].sort((a, b) => a - b);
    const mid = this.levels[Math.floor(this.levels.length / 2)]!;
    this.selectedLevel = this.levels.includes(50) ? 50 : mid;
    this.events = events;
  }

  private changed(): void {
    this.events.onChange?.();
  }

  async setImage(name: string, bytes: Uint8Array): Promise<void> {
    const hash = await sha256Hex(bytes);
    this.image = { name, bytes, base64: bytesToBase64(bytes), hash };
    this.changed();
    await this.ensureSelected();
  }

  /** Snap to one of the server's levels; anything else is rejected. */
  async setLevel(level: number): Promise<void> {
    if (!this.levels.includes(level)) {
      throw new Error(`level ${level} is not offered by the service`);
    }
    this.selectedLevel = level;
    this.changed();
    await this.ensureSelected();
  }

  async setMode(mode: ComparisonMode): Promise<void> {
    this.mode = mode;
    this.changed();
    if (mode === "level-grid") {
      await this.ensureAllLevels();
    }
  }

  response(level: number = this.selectedLevel): ProtectResponse | null {
    if (!this.image) return null;
    return this.cache.get(cacheKey(this.image.hash, level)) ?? null;
  }

  get exportEnabled(): boolean {
    return this.response() !== null;
  }

  /** Fetch the selected level unless cached or already being fetched. */
  async ensureSelected(): Promise<void> {
    await this.ensureLevel(this.selectedLevel);
  }

  async ensureAllLevels(): Promise<void> {
    await Promise.all(this.levels.map((lvl) => this.ensureLevel(lvl)));
  }

  async ensureLevel(level: number): Promise<void> {
    const img = this.image;
    if (!img) return;
    const key = cacheKey(img.hash, level);
    if (this.cache.has(key)) {
      this.changed(); // instant re-render from cache, no network
      return;
    }
    const pending = this.inFlight.get(key);
    if (pending) return pending;

    const task = (async () => {
      try {
        this.requestCount += 1;
        const resp = await this.client.protect(img.base64, level, true);
        // Discard responses for uploads that were replaced mid-flight.
        if (this.image?.hash !== img.hash) return;
        this.cache.set(key, resp);
        this.changed();
      } catch (err) {
        if (this.image?.hash !== img.hash) return; // stale failure: ignore
        const message = err instanceof Error ? err.message : String(err);
        this.events.onError?.(message, () => void this.ensureLevel(level));
      } finally {
        this.inFlight.delete(key);
      }
    })();
    this.inFlight.set(key, task);
    return task;
  }
}
