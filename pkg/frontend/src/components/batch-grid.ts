import { LitElement, css, html, nothing } from "lit";

import type { LabelValue, PendingItem } from "../api.js";

/**
 * One card per queried sample: image, uncertainty score, and two mutually
 * exclusive class buttons. Keyboard: 0/1 label the focused card and advance,
 * arrow keys move between cards. Submit stays disabled until every card
 * carries exactly one label. A failed image load shows a per-card retry
 * control and never blocks the rest of the batch.
 */
export class BatchGrid extends LitElement {
  static properties = {
    items: { attribute: false },
    classNames: { attribute: false },
    imageBase: { type: String, attribute: "image-base" },
    submitting: { type: Boolean },
    missingIds: { attribute: false },
    labels: { state: true },
    cursor: { state: true },
    failed: { state: true },
    retryNonce: { state: true },
  };

  declare items: PendingItem[];
  declare classNames: string[];
  declare imageBase: string;
  declare submitting: boolean;
  declare missingIds: string[];
  declare labels: Map<string, LabelValue>;
  declare cursor: number;
  declare failed: Set<string>;
  declare retryNonce: number;

  constructor() {
    super();
    this.items = [];
    this.classNames = ["class 0", "class 1"];
    this.imageBase = "";
    this.submitting = false;
    this.missingIds = [];
    this.labels = new Map();
    this.cursor = 0;
    this.failed = new Set();
    this.retryNonce = 0;
    this.tabIndex = 0;
    this.addEventListener("keydown", this.onKeydown);
  }

  static styles = css`
    :host {
      display: block;
      outline: none;
    }
    .toolbar {
      display: flex;
      align-items: center;
      gap: 1rem;
      margin-bottom: 0.75rem;
    }
    .progress {
      font-variant-numeric: tabular-nums;
      color: #374151;
    }
    .grid {
      display: grid;
      grid-template-columns: repeat(auto-fill, minmax(180px, 1fr));
      gap: 0.75rem;
    }
    .card {
      border: 2px solid #d1d5db;
      border-radius: 8px;
      padding: 0.5rem;
      background: #fff;
    }
    .card.current {
      border-color: #2563eb;
    }
    .card.missing {
      border-color: #dc2626;
      background: #fef2f2;
    }
    .frame {
      position: relative;
      aspect-ratio: 1;
      background: #f3f4f6;
      display: flex;
      align-items: center;
      justify-content: center;
    }
    img {
      max-width: 100%;
      max-height: 100%;
      image-rendering: pixelated;
    }
    .retry {
      position: absolute;
      inset: 0;
      display: flex;
      flex-direction: column;
      align-items: center;
      justify-content: center;
      gap: 0.4rem;
      background: #fef2f2;
      font-size: 0.8rem;
    }
    .meta {
      display: flex;
      justify-content: space-between;
      font-size: 0.75rem;
      color: #6b7280;
      margin: 0.3rem 0;
      word-break: break-all;
    }
    .choices {
      display: flex;
      gap: 0.4rem;
    }
    .choices button {
      flex: 1;
      padding: 0.35rem 0;
      border: 1px solid #9ca3af;
      border-radius: 5px;
      background: #f9fafb;
      cursor: pointer;
    }
    .choices button[aria-pressed="true"] {
      background: #2563eb;
      border-color: #1d4ed8;
      color: #fff;
    }
    .submit {
      padding: 0.5rem 1.4rem;
      border-radius: 6px;
      border: 1px solid #047857;
      background: #059669;
      color: #fff;
      cursor: pointer;
    }
    .submit:disabled {
      background: #d1d5db;
      border-color: #9ca3af;
      color: #6b7280;
      cursor: not-allowed;
    }
    .hint {
      font-size: 0.75rem;
      color: #6b7280;
    }
  `;

  private onKeydown = (event: KeyboardEvent) => {
    if (this.items.length === 0) return;
    if (event.key === "0" || event.key === "1") {
      const item = this.items[this.cursor];
      if (item) {
        this.setLabel(item.sample_id, Number(event.key) as LabelValue);
        this.cursor = Math.min(this.cursor + 1, this.items.length - 1);
      }
      event.preventDefault();
    } else if (event.key === "ArrowRight" || event.key === "n") {
      this.cursor = Math.min(this.cursor + 1, this.items.length - 1);
      event.preventDefault();
    } else if (event.key === "ArrowLeft" || event.key === "p") {
      this.cursor = Math.max(this.cursor - 1, 0);
      event.preventDefault();
    }
  };

  willUpdate(changed: Map<string, unknown>) {
    if (changed.has("items")) {
      // a new batch invalidates any selections made for the previous one
      this.labels = new Map();
      this.cursor = 0;
      this.failed = new Set();
    }
  }

  setLabel(sampleId: string, value: LabelValue) {
    const next = new Map(this.labels);
    next.set(sampleId, value);
    this.labels = next;
  }

  get complete(): boolean {
    return (
      this.items.length > 0 &&
      this.items.every((i) => this.labels.has(i.sample_id))
    );
  }

  private retry(sampleId: string) {
    const next = new Set(this.failed);
    next.delete(sampleId);
    this.failed = next;
    this.retryNonce += 1;
  }

  private markFailed(sampleId: string) {
    const next = new Set(this.failed);
    next.add(sampleId);
    this.failed = next;
  }

  private submit() {
    if (!this.complete || this.submitting) return;
    this.dispatchEvent(
      new CustomEvent("submit-batch", {
        detail: { labels: Object.fromEntries(this.labels) },
        bubbles: true,
        composed: true,
      }),
    );
  }

  render() {
    const n = this.items.length;
    return html`
      <div class="toolbar">
        <span class="progress" data-role="progress">
          ${this.labels.size} of ${n} labeled
        </span>
        <button
          class="submit"
          data-role="submit"
          ?disabled=${!this.complete || this.submitting}
          @click=${this.submit}
        >
          ${this.submitting ? "Submitting…" : "Submit batch"}
        </button>
        <span class="hint">keys: 0 / 1 label, arrows move</span>
      </div>
      <div class="grid">
        ${this.items.map((item, index) => this.renderCard(item, index))}
      </div>
    `;
  }

  private renderCard(item: PendingItem, index: number) {
    const selected = this.labels.get(item.sample_id);
    const classes = [
      "card",
      index === this.cursor ? "current" : "",
      this.missingIds.includes(item.sample_id) ? "missing" : "",
    ]
      .filter(Boolean)
      .join(" ");
    const src = `${this.imageBase}${item.image_url}${
      this.retryNonce ? `?r=${this.retryNonce}` : ""
    }`;
    return html`
      <div class=${classes} data-sample-id=${item.sample_id}>
        <div class="frame">
          ${this.failed.has(item.sample_id)
            ? html`
                <div class="retry">
                  <span>image failed to load</span>
                  <button
                    data-role="retry"
                    @click=${() => this.retry(item.sample_id)}
                  >
                    Retry
                  </button>
                </div>
              `
            : html`
                <img
                  src=${src}
                  alt=${item.sample_id}
                  @error=${() => this.markFailed(item.sample_id)}
                  @click=${() => (this.cursor = index)}
                />
              `}
        </div>
        <div class="meta">
          <span>${item.sample_id}</span>
          ${item.score === null
            ? nothing
            : html`<span>u=${item.score.toFixed(3)}</span>`}
        </div>
        <div class="choices">
          ${([0, 1] as const).map(
            (value) => html`
              <button
                data-role="label-${value}"
                aria-pressed=${selected === value ? "true" : "false"}
                @click=${() => this.setLabel(item.sample_id, value)}
              >
                ${this.classNames[value] ?? `class ${value}`}
              </button>
            `,
          )}
        </div>
      </div>
    `;
  }
}

customElements.define("dl-batch-grid", BatchGrid);

declare global {
  interface HTMLElementTagNameMap {
    "dl-batch-grid": BatchGrid;
  }
}
