/** DOM layer: wires the studio state to the page. Rendering only — every
 * behavioural rule (cache, staleness, discrete levels, export gating) lives
 * in StudioState so it stays testable without a browser.
 *
 * Images are shown via object URLs over the exact bytes the server sent;
 * pixels are never touched client-side, so the export is byte-identical to
 * the response. */

import { ServiceClient } from "./api.js";
import { base64ToBytes, exportFilename } from "./encoding.js";
import { StudioState } from "./state.js";

const MAX_UPLOAD_BYTES = 8 * 1024 * 1024; // mirror of the server's cap

interface PanelSpec {
  title: string;
  b64: string | undefined;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function pngUrl(b64: string): string {
  const bytes = base64ToBytes(b64);
  const buf = bytes.buffer.slice(
    bytes.byteOffset,
    bytes.byteOffset + bytes.byteLength,
  ) as ArrayBuffer;
  return URL.createObjectURL(new Blob([buf], { type: "image/png" }));
}

export class StudioApp {
  private doc: Document;
  private root: HTMLElement;
  private state!: StudioState;
  private client: ServiceClient;
  private banner!: HTMLElement;
  private slider!: HTMLInputElement;
  private sliderLabel!: HTMLElement;
  private exportBtn!: HTMLButtonElement;
  private panels!: HTMLElement;
  private modeSelect!: HTMLSelectElement;

  constructor(root: HTMLElement, client: ServiceClient) {
    this.root = root;
    this.doc = root.ownerDocument;
    this.client = client;
  }

  async start(): Promise<void> {
    const levels = (await this.client.levels()).map((e) => e.level);
    this.state = new StudioState(this.client, levels, {
      onChange: () => this.render(),
      onError: (msg, retry) => this.showError(msg, retry),
    });
    this.buildSkeleton();
    this.render();
  }

  /** Exposed for tests. */
  get studioState(): StudioState {
    return this.state;
  }

  private buildSkeleton(): void {
    const doc = this.doc;
    this.root.textContent = "";

    this.banner = el(doc, "div", "error-banner");
    this.banner.hidden = true;
    this.root.appendChild(this.banner);

    const controls = el(doc, "div", "controls");

    const upload = el(doc, "input") as HTMLInputElement;
    upload.type = "file";
    upload.accept = "image/png,image/jpeg";
    upload.id = "upload";
    upload.addEventListener("change", () => {
      const file = upload.files?.[0];
      if (file) void this.handleUpload(file);
    });
    controls.appendChild(upload);

    // Discrete slider: one notch per level the service offers, nothing else.
    this.slider = el(doc, "input") as HTMLInputElement;
    this.slider.type = "range";
    this.slider.id = "level-slider";
    this.slider.min = "0";
    this.slider.max = String(this.state.levels.length - 1);
    this.slider.step = "1";
    this.slider.value = String(this.state.levels.indexOf(this.state.selectedLevel));
    this.slider.addEventListener("input", () => {
      const level = this.state.levels[Number(this.slider.value)];
      if (level !== undefined) void this.state.setLevel(level);
    });
    controls.appendChild(this.slider);

    this.sliderLabel = el(doc, "span", "slider-label");
    this.sliderLabel.id = "level-label";
    controls.appendChild(this.sliderLabel);

    this.modeSelect = el(doc, "select") as HTMLSelectElement;
    this.modeSelect.id = "mode";
    for (const mode of ["pair", "four-panel", "level-grid"] as const) {
      const opt = el(doc, "option", undefined, mode) as HTMLOptionElement;
      opt.value = mode;
      this.modeSelect.appendChild(opt);
    }
    this.modeSelect.value = this.state.mode;
    this.modeSelect.addEventListener("change", () => {
      void this.state.setMode(this.modeSelect.value as typeof this.state.mode);
    });
    controls.appendChild(this.modeSelect);

    this.exportBtn = el(doc, "button", undefined, "Export protected image") as HTMLButtonElement;
    this.exportBtn.id = "export";
    this.exportBtn.addEventListener("click", () => this.exportProtected());
    controls.appendChild(this.exportBtn);

    this.root.appendChild(controls);

    this.panels = el(doc, "div", "panels");
    this.panels.id = "panels";
    this.root.appendChild(this.panels);
  }

  private async handleUpload(file: File): Promise<void> {
    if (file.size > MAX_UPLOAD_BYTES) {
      this.showError(
        `“${file.name}” is larger than the 8 MB upload cap`,
        () => {},
      );
      return;
    }
    const bytes = new Uint8Array(await file.arrayBuffer());
    await this.state.setImage(file.name, bytes);
  }

  private showError(message: string, retry: () => void): void {
    this.banner.textContent = "";
    this.banner.hidden = false;
    this.banner.appendChild(el(this.doc, "span", undefined, message));
    const btn = el(this.doc, "button", undefined, "Retry") as HTMLButtonElement;
    btn.addEventListener("click", () => {
      this.banner.hidden = true;
      retry();
    });
    this.banner.appendChild(btn);
  }

  private metricChips(psnr: number, ssim: number): HTMLElement {
    const chips = el(this.doc, "div", "chips");
    chips.appendChild(el(this.doc, "span", "chip", `PSNR ${psnr.toFixed(2)} dB`));
    chips.appendChild(el(this.doc, "span", "chip", `SSIM ${ssim.toFixed(3)}`));
    return chips;
  }

  private panel(spec: PanelSpec, chips?: HTMLElement): HTMLElement {
    const box = el(this.doc, "figure", "panel");
    const img = el(this.doc, "img") as HTMLImageElement;
    if (spec.b64) {
      img.src = pngUrl(spec.b64);
    } else {
      box.classList.add("panel-empty");
    }
    img.alt = spec.title;
    box.appendChild(img);
    box.appendChild(el(this.doc, "figcaption", undefined, spec.title));
    if (chips) box.appendChild(chips);
    return box;
  }

  private renderRow(level: number, container: HTMLElement, fourPanel: boolean): void {
    const resp = this.state.response(level);
    const image = this.state.image;
    if (!image) return;
    const row = el(this.doc, "div", "panel-row");
    row.dataset["level"] = String(level);
    const inputB64 = image.base64;
    if (!resp) {
      row.appendChild(el(this.doc, "p", "loading", `level ${level}: protecting…`));
      container.appendChild(row);
      return;
    }
    row.appendChild(this.panel({ title: "Your artwork", b64: inputB64 }));
    row.appendChild(
      this.panel(
        { title: `Protected (level ${level})`, b64: resp.protected },
        this.metricChips(resp.metrics.p1.psnr, resp.metrics.p1.ssim),
      ),
    );
    if (fourPanel) {
      row.appendChild(
        this.panel({
          title: "What an AI model would produce from your art",
          b64: resp.preview_input_diffused,
        }),
      );
      const p2 = resp.metrics.p2;
      row.appendChild(
        this.panel(
          {
            title: "What an AI model would produce from your protected art",
            b64: resp.preview_protected_diffused,
          },
          p2 ? this.metricChips(p2.psnr, p2.ssim) : undefined,
        ),
      );
    }
    container.appendChild(row);
  }

  private render(): void {
    if (!this.panels) return;
    this.sliderLabel.textContent = `protection level ${this.state.selectedLevel}`;
    this.slider.value = String(this.state.levels.indexOf(this.state.selectedLevel));
    this.exportBtn.disabled = !this.state.exportEnabled;
    this.panels.textContent = "";
    if (!this.state.image) {
      this.panels.appendChild(
        el(this.doc, "p", "placeholder", "Upload artwork to begin."),
      );
      return;
    }
    if (this.state.mode === "level-grid") {
      for (const level of this.state.levels) {
        this.renderRow(level, this.panels, true);
      }
    } else {
      this.renderRow(this.state.selectedLevel, this.panels, this.state.mode === "four-panel");
    }
  }

  private exportProtected(): void {
    const resp = this.state.response();
    const image = this.state.image;
    if (!resp || !image) return; // button is disabled in this case
    const a = el(this.doc, "a") as HTMLAnchorElement;
    a.href = pngUrl(resp.protected);
    a.download = exportFilename(image.name, this.state.selectedLevel);
    a.click();
    URL.revokeObjectURL(a.href);
  }
}

export async function boot(doc: Document, baseUrl: string): Promise<StudioApp> {
  const root = doc.getElementById("app");
  if (!root) throw new Error("missing #app root element");
  const app = new StudioApp(root, new ServiceClient({ baseUrl }));
  await app.start();
  return app;
}
