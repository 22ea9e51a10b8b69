import { describe, expect, it } from "vitest";

import { confusion, metrics } from "./metrics";

function mask(values: number[]): Uint8Array {
  return Uint8Array.from(values);
}

describe("confusion", () => {
  it("counts each quadrant", () => {
    const pred = mask([1, 1, 0, 0]);
    const gt = mask([1, 0, 1, 0]);
    expect(confusion(pred, gt)).toEqual({ tp: 1, fp: 1, fn: 1, tn: 1 });
  });

  it("rejects mismatched lengths", () => {
    expect(() => confusion(mask([1]), mask([1, 0]))).toThrow(/mismatch/);
  });
});

describe("metrics", () => {
  it("matches the hand-computed case tp=6 fp=2 tn=10 fn=2", () => {
    const m = metrics({ tp: 6, fp: 2, tn: 10, fn: 2 });
    expect(m.jaccard).toBeCloseTo(0.6, 12);
    expect(m.sensitivity).toBeCloseTo(0.75, 12);
    expect(m.specificity).toBeCloseTo(10 / 12, 12);
    expect(m.accuracy).toBeCloseTo(0.8, 12);
  });

  it("treats 0/0 ratios as perfect, matching the server", () => {
    const m = metrics({ tp: 0, fp: 0, tn: 4, fn: 0 });
    expect(m.jaccard).toBe(1);
    expect(m.sensitivity).toBe(1);
  });

  it("identical masks give Jaccard 1", () => {
    const a = mask([1, 0, 1, 1, 0]);
    expect(metrics(confusion(a, a)).jaccard).toBe(1);
  });

  it("throws on empty counts", () => {
    expect(() => metrics({ tp: 0, fp: 0, tn: 0, fn: 0 })).toThrow(/empty/);
  });
});
