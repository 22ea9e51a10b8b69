/** Client-side segmentation metrics over binary masks.
 *
 * Masks are Uint8Array row-major buffers with 0/1 values. The 0/0 ratio
 * convention (vacuously perfect) matches the service so the displayed
 * numbers agree with server-side reports on the same pair.
 */

export interface Confusion {
  tp: number;
  fp: number;
  tn: number;
  fn: number;
}

export interface Metrics {
  jaccard: number;
  sensitivity: number;
  specificity: number;
  accuracy: number;
}

export function confusion(pred: Uint8Array, gt: Uint8Array): Confusion {
  if (pred.length !== gt.length) {
    throw new Error(`mask length mismatch: ${pred.length} vs ${gt.length}`);
  }
  let tp = 0;
  let fp = 0;
  let tn = 0;
  let fn = 0;
  for (let i = 0; i < pred.length; i++) {
    if (pred[i]) {
      if (gt[i]) tp++;
      else fp++;
    } else if (gt[i]) fn++;
    else tn++;
  }
  return { tp, fp, tn, fn };
}

function ratio(num: number, den: number): number {
  return den === 0 ? 1.0 : num / den;
}

export function metrics(c: Confusion): Metrics {
  const total = c.tp + c.fp + c.tn + c.fn;
  if (total === 0) {
    throw new Error("empty confusion counts");
  }
  return {
    jaccard: ratio(c.tp, c.tp + c.fp + c.fn),
    sensitivity: ratio(c.tp, c.tp + c.fn),
    specificity: ratio(c.tn, c.tn + c.fp),
    accuracy: (c.tp + c.tn) / total,
  };
}
