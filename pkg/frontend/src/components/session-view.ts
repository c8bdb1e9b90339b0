import { LitElement, css, html, nothing } from "lit";

import {
  ApiClient,
  ApiError,
  isTerminal,
  type HistoryRow,
  type LabelValue,
  type PendingPayload,
  type SessionSummary,
} from "../api.js";
import "./batch-grid.js";
import "./history-chart.js";
import "./stop-control.js";

/**
 * Root view for one annotation session. Everything rendered here derives
 * from the latest service fetch (summary, pending batch, history rows);
 * a hard refresh reconstructs the identical view from the service alone.
 */
export class SessionView extends LitElement {
  static properties = {
    sessionId: { type: String, attribute: "session-id" },
    apiBase: { type: String, attribute: "api-base" },
    pollInterval: { type: Number, attribute: "poll-interval" },
    summary: { state: true },
    pending: { state: true },
    history: { state: true },
    submitting: { state: true },
    missingIds: { state: true },
    error: { state: true },
    nextPollIn: { state: true },
  };

  declare sessionId: string;
  declare apiBase: string;
  declare pollInterval: number;
  declare summary: SessionSummary | null;
  declare pending: PendingPayload | null;
  declare history: HistoryRow[];
  declare submitting: boolean;
  declare missingIds: string[];
  declare error: string | null;
  declare nextPollIn: number;

  client: ApiClient | null = null;

  private pollTimer: ReturnType<typeof setTimeout> | null = null;
  private countdownTimer: ReturnType<typeof setInterval> | null = null;
  private refreshing = false;

  constructor() {
    super();
    this.sessionId = "";
    this.apiBase = "";
    this.pollInterval = 2000;
    this.summary = null;
    this.pending = null;
    this.history = [];
    this.submitting = false;
    this.missingIds = [];
    this.error = null;
    this.nextPollIn = 0;
  }

  static styles = css`
    :host {
      display: block;
      font-family: system-ui, sans-serif;
      color: #111827;
    }
    header {
      display: flex;
      align-items: baseline;
      gap: 1rem;
      flex-wrap: wrap;
      margin-bottom: 0.8rem;
    }
    h2 {
      margin: 0;
      font-size: 1.1rem;
    }
    .status {
      padding: 0.15rem 0.6rem;
      border-radius: 999px;
      font-size: 0.8rem;
      background: #e5e7eb;
    }
    .status.awaiting_labels {
      background: #dbeafe;
    }
    .status.training {
      background: #fef3c7;
    }
    .status.converged_stopped,
    .status.exhausted {
      background: #d1fae5;
    }
    .status.aborted {
      background: #fee2e2;
    }
    .counts {
      font-size: 0.85rem;
      color: #374151;
      font-variant-numeric: tabular-nums;
    }
    .banner {
      padding: 0.6rem 0.9rem;
      border-radius: 8px;
      margin: 0.6rem 0;
    }
    .banner.training {
      background: #fffbeb;
      border: 1px solid #f59e0b;
    }
    .banner.error {
      background: #fef2f2;
      border: 1px solid #dc2626;
    }
    .banner.terminal {
      background: #ecfdf5;
      border: 1px solid #059669;
    }
    .layout {
      display: grid;
      grid-template-columns: minmax(0, 1fr) auto;
      gap: 1.2rem;
      align-items: start;
    }
    @media (max-width: 900px) {
      .layout {
        grid-template-columns: 1fr;
      }
    }
    .side {
      display: flex;
      flex-direction: column;
      gap: 0.8rem;
    }
    button.reload {
      margin-left: 0.6rem;
    }
  `;

  connectedCallback() {
    super.connectedCallback();
    if (this.client === null) {
      this.client = new ApiClient(this.apiBase);
    }
    void this.refresh();
    this.scheduleNextPoll();
    this.countdownTimer = setInterval(() => {
      if (this.nextPollIn > 0) this.nextPollIn -= 1;
    }, 1000);
  }

  disconnectedCallback() {
    super.disconnectedCallback();
    if (this.pollTimer !== null) clearTimeout(this.pollTimer);
    if (this.countdownTimer !== null) clearInterval(this.countdownTimer);
  }

  private scheduleNextPoll() {
    if (this.pollTimer !== null) clearTimeout(this.pollTimer);
    this.nextPollIn = Math.round(this.pollInterval / 1000);
    this.pollTimer = setTimeout(() => {
      void this.refresh().finally(() => this.scheduleNextPoll());
    }, this.pollInterval);
  }

  async refresh(): Promise<void> {
    if (this.refreshing || this.client === null || !this.sessionId) return;
    this.refreshing = true;
    try {
      const summary = await this.client.getSession(this.sessionId);
      // history and labeled counts always come from the service, never from
      // client-side accumulation
      this.history = await this.client.getHistory(this.sessionId);
      if (summary.status === "awaiting_labels") {
        const pending = await this.client.getPending(this.sessionId);
        const newIteration =
          this.pending === null || this.pending.iteration !== pending.iteration;
        if (newIteration) {
          this.pending = pending;
          this.missingIds = [];
        }
      } else {
        this.pending = null;
      }
      this.summary = summary;
      this.error = null;
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
    } finally {
      this.refreshing = false;
    }
  }

  private async onSubmitBatch(event: CustomEvent<{ labels: Record<string, LabelValue> }>) {
    if (this.submitting || this.client === null) return;
    if (this.summary === null || this.pending === null) return;
    // deterministic per-batch key: a double click or a retry after a network
    // blip replays instead of double-applying
    const key = `${this.sessionId}:iter:${this.pending.iteration}`;
    this.submitting = true;
    try {
      await this.client.submitLabels(this.sessionId, event.detail.labels, key);
      this.pending = null;
      this.missingIds = [];
      this.summary = { ...this.summary, status: "training" };
      await this.refresh();
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        this.missingIds = (err.details.missing as string[]) ?? [];
        this.error = `${err.message}`;
      } else if (err instanceof ApiError && err.status === 409) {
        this.error = `${err.message}`;
        await this.refresh();
      } else {
        this.error = err instanceof Error ? err.message : String(err);
      }
    } finally {
      this.submitting = false;
    }
  }

  private async onStopConfirmed() {
    if (this.client === null) return;
    try {
      await this.client.stopSession(this.sessionId);
    } catch (err) {
      if (!(err instanceof ApiError && err.status === 409)) {
        this.error = err instanceof Error ? err.message : String(err);
      }
      // 409: someone already stopped it; the refresh below shows the terminal view
    }
    await this.refresh();
  }

  render() {
    const s = this.summary;
    if (s === null) {
      return html`<p data-role="loading">
        loading session ${this.sessionId}…${this.error
          ? html` <span>(${this.error})</span>`
          : nothing}
      </p>`;
    }
    const poolSize = s.labeled_count + s.pool_remaining;
    return html`
      <header>
        <h2>session ${s.session_id}</h2>
        <span class="status ${s.status}" data-role="status">${s.status}</span>
        <span class="counts" data-role="labeled-count">
          ${s.labeled_count} / ${poolSize} labeled
        </span>
        <span class="counts" data-role="iteration">
          iteration ${s.iteration}
        </span>
      </header>
      ${this.error
        ? html`
            <div class="banner error" data-role="error-banner">
              ${this.error}
              <button class="reload" data-role="reload" @click=${() => this.refresh()}>
                Reload session
              </button>
            </div>
          `
        : nothing}
      ${this.renderBody(s)}
    `;
  }

  private renderBody(s: SessionSummary) {
    if (isTerminal(s.status)) {
      const poolSize = s.labeled_count + s.pool_remaining;
      const fraction = poolSize === 0 ? 0 : s.labeled_count / poolSize;
      return html`
        <div class="banner terminal" data-role="terminal-summary">
          <strong>Session ${s.status.replace("_", " ")}.</strong>
          Used ${s.labeled_count} of ${poolSize} labels
          (${(fraction * 100).toFixed(1)}% of the pool) over
          ${s.iteration} iterations; latest validation accuracy
          ${s.latest_val_accuracy === null
            ? "n/a"
            : s.latest_val_accuracy.toFixed(3)}.
        </div>
        <dl-history-chart .rows=${this.history}></dl-history-chart>
      `;
    }
    return html`
      <div class="layout">
        <div>
          ${s.status === "awaiting_labels" && this.pending !== null
            ? html`
                <dl-batch-grid
                  image-base=${this.apiBase}
                  .items=${this.pending.items}
                  .classNames=${this.pending.class_names ?? s.class_names}
                  .missingIds=${this.missingIds}
                  .submitting=${this.submitting}
                  @submit-batch=${this.onSubmitBatch}
                ></dl-batch-grid>
              `
            : html`
                <div class="banner training" data-role="training-banner">
                  Training on the latest batch — next poll in
                  <span data-role="poll-countdown">${this.nextPollIn}</span>s.
                </div>
              `}
        </div>
        <div class="side">
          <dl-history-chart .rows=${this.history}></dl-history-chart>
          <dl-stop-control
            .summary=${s}
            @stop-confirmed=${this.onStopConfirmed}
          ></dl-stop-control>
        </div>
      </div>
    `;
  }
}

customElements.define("dl-session-view", SessionView);

declare global {
  interface HTMLElementTagNameMap {
    "dl-session-view": SessionView;
  }
}
