import { LitElement, css, html, nothing } from "lit";

import { isTerminal, type SessionSummary } from "../api.js";

/**
 * The human stop decision. Opens a confirmation showing the latest validation
 * accuracy and labeled fraction before anything is sent; cancel makes no
 * network call.
 */
export class StopControl extends LitElement {
  static properties = {
    summary: { attribute: false },
    confirming: { state: true },
  };

  declare summary: SessionSummary | null;
  declare confirming: boolean;

  constructor() {
    super();
    this.summary = null;
    this.confirming = false;
  }

  static styles = css`
    .stop {
      padding: 0.45rem 1.1rem;
      border-radius: 6px;
      border: 1px solid #b91c1c;
      background: #dc2626;
      color: #fff;
      cursor: pointer;
    }
    .stop:disabled {
      background: #d1d5db;
      border-color: #9ca3af;
      color: #6b7280;
      cursor: not-allowed;
    }
    .dialog {
      margin-top: 0.6rem;
      border: 1px solid #f59e0b;
      background: #fffbeb;
      border-radius: 8px;
      padding: 0.8rem;
      max-width: 26rem;
    }
    .dialog p {
      margin: 0.2rem 0;
    }
    .actions {
      display: flex;
      gap: 0.6rem;
      margin-top: 0.6rem;
    }
  `;

  private confirm() {
    this.confirming = false;
    this.dispatchEvent(
      new CustomEvent("stop-confirmed", { bubbles: true, composed: true }),
    );
  }

  render() {
    const s = this.summary;
    const disabled = s === null || isTerminal(s.status);
    const poolSize = s === null ? 0 : s.labeled_count + s.pool_remaining;
    const fraction = s === null || poolSize === 0 ? 0 : s.labeled_count / poolSize;
    return html`
      <button
        class="stop"
        data-role="stop"
        ?disabled=${disabled}
        @click=${() => (this.confirming = true)}
      >
        Stop session
      </button>
      ${this.confirming && s !== null
        ? html`
            <div class="dialog" data-role="confirm-dialog">
              <p><strong>Finish training now?</strong></p>
              <p data-role="dialog-accuracy">
                Latest validation accuracy:
                ${s.latest_val_accuracy === null
                  ? "not measured yet"
                  : s.latest_val_accuracy.toFixed(3)}
              </p>
              <p data-role="dialog-fraction">
                Labels used: ${s.labeled_count} of ${poolSize}
                (${(fraction * 100).toFixed(1)}% of the pool)
              </p>
              <div class="actions">
                <button data-role="confirm-stop" @click=${this.confirm}>
                  Stop
                </button>
                <button
                  data-role="cancel-stop"
                  @click=${() => (this.confirming = false)}
                >
                  Cancel
                </button>
              </div>
            </div>
          `
        : nothing}
    `;
  }
}

customElements.define("dl-stop-control", StopControl);

declare global {
  interface HTMLElementTagNameMap {
    "dl-stop-control": StopControl;
  }
}
