/** Session state reducer.
 *
 * The UI holds no segmentation logic: every mask in the history is the
 * base64 PNG exactly as returned by the service, and the click list mirrors
 * the server-side ordering. Undo pops locally only after the service
 * confirms, so the two stay in lockstep.
 */

export type ClickLabel = "fg" | "bg";

export interface ClickRecord {
  row: number;
  col: number;
  label: ClickLabel;
  producedMask: boolean;
}

export interface UiSessionState {
  sessionId: string;
  imageWidth: number;
  imageHeight: number;
  clicks: ClickRecord[];
  maskHistory: string[]; // base64 PNGs, newest last
  status: string;
}

export function initialState(
  sessionId: string,
  imageWidth: number,
  imageHeight: number,
): UiSessionState {
  return {
    sessionId,
    imageWidth,
    imageHeight,
    clicks: [],
    maskHistory: [],
    status: "awaiting foreground click",
  };
}

export interface ClickResponse {
  status: string;
  mask_png_b64: string | null;
}

export function applyClick(
  state: UiSessionState,
  row: number,
  col: number,
  label: ClickLabel,
  response: ClickResponse,
): UiSessionState {
  const producedMask = response.status === "ok" && response.mask_png_b64 !== null;
  return {
    ...state,
    clicks: [...state.clicks, { row, col, label, producedMask }],
    maskHistory: producedMask
      ? [...state.maskHistory, response.mask_png_b64 as string]
      : state.maskHistory,
    status: response.status,
  };
}

export function applyUndo(
  state: UiSessionState,
  response: ClickResponse,
): UiSessionState {
  if (state.clicks.length === 0) {
    throw new Error("no clicks to undo");
  }
  const undone = state.clicks[state.clicks.length - 1];
  return {
    ...state,
    clicks: state.clicks.slice(0, -1),
    maskHistory: undone.producedMask
      ? state.maskHistory.slice(0, -1)
      : state.maskHistory,
    status: response.status,
  };
}

export function latestMask(state: UiSessionState): string | null {
  return state.maskHistory.length > 0
    ? state.maskHistory[state.maskHistory.length - 1]
    : null;
}

export function canUndo(state: UiSessionState): boolean {
  return state.clicks.length > 0;
}

/** Click file in the canonical on-disk format, replayable via the CLI. */
export function exportClickFile(state: UiSessionState, imageName: string): string {
  return JSON.stringify(
    {
      image: imageName,
      foreground: state.clicks
        .filter((c) => c.label === "fg")
        .map((c) => [c.row, c.col]),
      background: state.clicks
        .filter((c) => c.label === "bg")
        .map((c) => [c.row, c.col]),
      seed: null,
    },
    null,
    2,
  );
}
