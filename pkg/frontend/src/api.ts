/** Thin wrappers over the service HTTP API. */

export interface SessionInfo {
  session_id: string;
  height: number;
  width: number;
}

export interface SegmentResponse {
  session_id: string;
  n_fg: number;
  n_bg: number;
  status: string;
  mask_png_b64: string | null;
  height?: number;
  width?: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    throw new ApiError(resp.status, (body as { detail?: string }).detail ?? resp.statusText);
  }
  return body as T;
}

export async function createSession(image: File): Promise<SessionInfo> {
  const form = new FormData();
  form.append("image", image);
  return asJson(await fetch("/api/v1/sessions", { method: "POST", body: form }));
}

export async function addClick(
  sessionId: string,
  row: number,
  col: number,
  label: "fg" | "bg",
): Promise<SegmentResponse> {
  return asJson(
    await fetch(`/api/v1/sessions/${sessionId}/clicks`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ row, col, label }),
    }),
  );
}

export async function undoClick(sessionId: string): Promise<SegmentResponse> {
  return asJson(
    await fetch(`/api/v1/sessions/${sessionId}/undo`, { method: "POST" }),
  );
}
