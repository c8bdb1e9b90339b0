import { LitElement, css, html, nothing } from "lit";

import type { HistoryRow } from "../api.js";
import { clamp01, rangeStats } from "../stats.js";

const WIDTH = 480;
const HEIGHT = 260;
const MARGIN = { left: 44, right: 12, top: 12, bottom: 30 };

/**
 * SVG line chart of validation accuracy per query iteration, with a
 * selectable iteration range whose mean / std / peak are shown beneath.
 * Values are clamped so nothing ever plots outside [0, 1].
 */
export class HistoryChart extends LitElement {
  static properties = {
    rows: { attribute: false },
    rangeFrom: { state: true },
    rangeTo: { state: true },
    rangeTouched: { state: true },
  };

  declare rows: HistoryRow[];
  declare rangeFrom: number;
  declare rangeTo: number;
  declare rangeTouched: boolean;

  constructor() {
    super();
    this.rows = [];
    this.rangeFrom = 1;
    this.rangeTo = 1;
    this.rangeTouched = false;
  }

  static styles = css`
    :host {
      display: block;
    }
    svg {
      background: #fff;
      border: 1px solid #e5e7eb;
      border-radius: 8px;
    }
    .axis {
      stroke: #9ca3af;
      stroke-width: 1;
    }
    .gridline {
      stroke: #f3f4f6;
      stroke-width: 1;
    }
    .curve {
      fill: none;
      stroke: #2563eb;
      stroke-width: 2;
    }
    .pt {
      fill: #2563eb;
    }
    text {
      font-size: 10px;
      fill: #6b7280;
    }
    .controls {
      display: flex;
      gap: 0.6rem;
      align-items: center;
      margin-top: 0.5rem;
      font-size: 0.85rem;
      color: #374151;
    }
    .controls input {
      width: 4.5rem;
    }
    .stats {
      font-variant-numeric: tabular-nums;
    }
  `;

  willUpdate(changed: Map<string, unknown>) {
    if (changed.has("rows") && !this.rangeTouched) {
      this.rangeFrom = 1;
      this.rangeTo = Math.max(1, this.rows.length);
    }
  }

  private x(iteration: number): number {
    const maxIter = Math.max(1, ...this.rows.map((r) => r.iteration));
    const span = WIDTH - MARGIN.left - MARGIN.right;
    if (maxIter <= 1) return MARGIN.left + span / 2;
    return MARGIN.left + ((iteration - 1) / (maxIter - 1)) * span;
  }

  private y(accuracy: number): number {
    const span = HEIGHT - MARGIN.top - MARGIN.bottom;
    return MARGIN.top + (1 - clamp01(accuracy)) * span;
  }

  private setRange(from: number, to: number) {
    this.rangeTouched = true;
    this.rangeFrom = from;
    this.rangeTo = to;
  }

  render() {
    const points = this.rows.map(
      (r) => [this.x(r.iteration), this.y(r.val_accuracy)] as const,
    );
    const stats = rangeStats(this.rows, this.rangeFrom, this.rangeTo);
    const yTicks = [0, 0.25, 0.5, 0.75, 1.0];
    return html`
      <svg
        viewBox="0 0 ${WIDTH} ${HEIGHT}"
        width=${WIDTH}
        height=${HEIGHT}
        role="img"
        aria-label="validation accuracy per query iteration"
      >
        ${yTicks.map(
          (tick) => html`
            <line
              class="gridline"
              x1=${MARGIN.left}
              x2=${WIDTH - MARGIN.right}
              y1=${this.y(tick)}
              y2=${this.y(tick)}
            ></line>
            <text x="4" y=${this.y(tick) + 3}>${tick.toFixed(2)}</text>
          `,
        )}
        <line
          class="axis"
          x1=${MARGIN.left}
          x2=${MARGIN.left}
          y1=${MARGIN.top}
          y2=${HEIGHT - MARGIN.bottom}
        ></line>
        <line
          class="axis"
          x1=${MARGIN.left}
          x2=${WIDTH - MARGIN.right}
          y1=${HEIGHT - MARGIN.bottom}
          y2=${HEIGHT - MARGIN.bottom}
        ></line>
        <text x=${WIDTH / 2} y=${HEIGHT - 8}>query iteration</text>
        ${points.length > 1
          ? html`
              <polyline
                class="curve"
                points=${points.map(([px, py]) => `${px},${py}`).join(" ")}
              ></polyline>
            `
          : nothing}
        ${this.rows.map(
          (row) => html`
            <circle
              class="pt"
              data-iteration=${row.iteration}
              cx=${this.x(row.iteration)}
              cy=${this.y(row.val_accuracy)}
              r="3"
            >
              <title>
                iteration ${row.iteration}: ${row.val_accuracy.toFixed(3)}
                (${row.labeled_count} labels)
              </title>
            </circle>
          `,
        )}
      </svg>
      <div class="controls">
        <label>
          from
          <input
            type="number"
            data-role="range-from"
            min="1"
            .value=${String(this.rangeFrom)}
            @change=${(e: Event) =>
              this.setRange(
                Number((e.target as HTMLInputElement).value),
                this.rangeTo,
              )}
          />
        </label>
        <label>
          to
          <input
            type="number"
            data-role="range-to"
            min="1"
            .value=${String(this.rangeTo)}
            @change=${(e: Event) =>
              this.setRange(
                this.rangeFrom,
                Number((e.target as HTMLInputElement).value),
              )}
          />
        </label>
        <span class="stats" data-role="range-stats">
          ${stats === null
            ? "no iterations in range"
            : `mean ${stats.mean.toFixed(3)} · std ${stats.std.toFixed(4)} · peak ${stats.peak.toFixed(3)} (${stats.count} iterations)`}
        </span>
      </div>
    `;
  }
}

customElements.define("dl-history-chart", HistoryChart);

declare global {
  interface HTMLElementTagNameMap {
    "dl-history-chart": HistoryChart;
  }
}
