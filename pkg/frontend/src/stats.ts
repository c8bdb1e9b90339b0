import type { HistoryRow } from "./api.js";

export interface RangeStats {
  mean: number;
  std: number;
  peak: number;
  count: number;
}

/**
 * Mean, population standard deviation, and peak of validation accuracy over
 * an inclusive iteration range; null when the range selects nothing.
 */
export function rangeStats(
  rows: HistoryRow[],
  fromIteration: number,
  toIteration: number,
): RangeStats | null {
  const values = rows
    .filter((r) => r.iteration >= fromIteration && r.iteration <= toIteration)
    .map((r) => r.val_accuracy);
  if (values.length === 0 || fromIteration > toIteration) {
    return null;
  }
  const mean = values.reduce((a, b) => a + b, 0) / values.length;
  const variance =
    values.reduce((acc, v) => acc + (v - mean) ** 2, 0) / values.length;
  return {
    mean,
    std: Math.sqrt(variance),
    peak: Math.max(...values),
    count: values.length,
  };
}

export function clamp01(value: number): number {
  return Math.min(1, Math.max(0, value));
}
