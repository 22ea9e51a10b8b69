/** DOM wiring: canvas rendering, click handling, undo, GT metrics, export. */

import { addClick, ApiError, createSession, undoClick } from "./api.js";
import {
  DisplayGeometry,
  imageToScreen,
  screenToImage,
} from "./coords.js";
import { confusion, metrics } from "./metrics.js";
import {
  applyClick,
  applyUndo,
  canUndo,
  ClickLabel,
  exportClickFile,
  initialState,
  latestMask,
  UiSessionState,
} from "./state.js";

const CANVAS_SIZE = 640;

type El<T extends HTMLElement> = T;

function byId<T extends HTMLElement>(id: string): El<T> {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

const canvas = byId<HTMLCanvasElement>("canvas");
const ctx = canvas.getContext("2d")!;
const imageInput = byId<HTMLInputElement>("image-input");
const gtInput = byId<HTMLInputElement>("gt-input");
const modeFg = byId<HTMLInputElement>("mode-fg");
const undoButton = byId<HTMLButtonElement>("undo");
const exportButton = byId<HTMLButtonElement>("export");
const alphaSlider = byId<HTMLInputElement>("alpha");
const statusLine = byId<HTMLElement>("status");
const errorBanner = byId<HTMLElement>("error");
const historyList = byId<HTMLElement>("history");
const metricsPanel = byId<HTMLElement>("metrics");

let state: UiSessionState | null = null;
let sessionImage: HTMLImageElement | null = null;
let imageName = "image";
let maskPixels: Uint8Array | null = null;
let maskImage: HTMLImageElement | null = null;
let gtPixels: Uint8Array | null = null;
// in-flight requests queued so responses apply in order
let pending: Promise<unknown> = Promise.resolve();

function geometry(): DisplayGeometry | null {
  if (!state) return null;
  return {
    imageWidth: state.imageWidth,
    imageHeight: state.imageHeight,
    canvasWidth: canvas.width,
    canvasHeight: canvas.height,
  };
}

function setStatus(text: string): void {
  statusLine.textContent = text;
}

function showError(text: string | null): void {
  errorBanner.textContent = text ?? "";
  errorBanner.hidden = text === null;
}

async function decodeMask(b64: string): Promise<{ img: HTMLImageElement; pixels: Uint8Array }> {
  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error("mask decode failed"));
    img.src = `data:image/png;base64,${b64}`;
  });
  const off = document.createElement("canvas");
  off.width = img.width;
  off.height = img.height;
  const octx = off.getContext("2d")!;
  octx.drawImage(img, 0, 0);
  const data = octx.getImageData(0, 0, img.width, img.height).data;
  const pixels = new Uint8Array(img.width * img.height);
  for (let i = 0; i < pixels.length; i++) {
    pixels[i] = data[i * 4] >= 128 ? 1 : 0;
  }
  return { img, pixels };
}

function renderMetrics(): void {
  if (!maskPixels || !gtPixels || !state) {
    metricsPanel.textContent = gtPixels ? "waiting for a mask" : "";
    return;
  }
  if (gtPixels.length !== maskPixels.length) {
    showError("ground truth dimensions do not match the session image; ignored");
    metricsPanel.textContent = "";
    return;
  }
  const m = metrics(confusion(maskPixels, gtPixels));
  metricsPanel.textContent =
    `Jaccard ${m.jaccard.toFixed(4)}  sensitivity ${m.sensitivity.toFixed(4)}  ` +
    `specificity ${m.specificity.toFixed(4)}  accuracy ${m.accuracy.toFixed(4)}`;
}

function render(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const geom = geometry();
  if (!geom || !sessionImage || !state) return;
  const scale = Math.min(
    geom.canvasWidth / geom.imageWidth,
    geom.canvasHeight / geom.imageHeight,
  );
  const w = geom.imageWidth * scale;
  const h = geom.imageHeight * scale;
  const ox = (geom.canvasWidth - w) / 2;
  const oy = (geom.canvasHeight - h) / 2;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(sessionImage, ox, oy, w, h);

  const alpha = Number(alphaSlider.value);
  if (maskImage && maskPixels) {
    if (gtPixels && gtPixels.length === maskPixels.length) {
      // color key: TP red, FP green, FN yellow
      const off = document.createElement("canvas");
      off.width = geom.imageWidth;
      off.height = geom.imageHeight;
      const octx = off.getContext("2d")!;
      const overlay = octx.createImageData(off.width, off.height);
      for (let i = 0; i < maskPixels.length; i++) {
        const p = maskPixels[i];
        const g = gtPixels[i];
        let rgba: [number, number, number, number] | null = null;
        if (p && g) rgba = [220, 40, 40, 255];
        else if (p && !g) rgba = [40, 200, 40, 255];
        else if (!p && g) rgba = [230, 220, 40, 255];
        if (rgba) {
          overlay.data.set(rgba, i * 4);
        }
      }
      octx.putImageData(overlay, 0, 0);
      ctx.globalAlpha = alpha;
      ctx.drawImage(off, ox, oy, w, h);
      ctx.globalAlpha = 1;
    } else {
      ctx.globalAlpha = alpha;
      ctx.drawImage(maskImage, ox, oy, w, h);
      ctx.globalAlpha = 1;
    }
  }

  for (const click of state.clicks) {
    const pos = imageToScreen(geom, click.row, click.col);
    ctx.beginPath();
    ctx.arc(pos.x, pos.y, 5, 0, 2 * Math.PI);
    ctx.fillStyle = click.label === "fg" ? "#2e7d32" : "#c62828";
    ctx.fill();
    ctx.strokeStyle = "white";
    ctx.stroke();
  }

  historyList.innerHTML = "";
  state.clicks.forEach((click, i) => {
    const li = document.createElement("li");
    li.textContent = `${i + 1}. ${click.label} (${click.row}, ${click.col})`;
    historyList.appendChild(li);
  });
  undoButton.disabled = !canUndo(state);
  exportButton.disabled = latestMask(state) === null;
  renderMetrics();
}

async function refreshMask(): Promise<void> {
  const b64 = state ? latestMask(state) : null;
  if (!b64) {
    maskImage = null;
    maskPixels = null;
    return;
  }
  const decoded = await decodeMask(b64);
  maskImage = decoded.img;
  maskPixels = decoded.pixels;
}

function enqueue(task: () => Promise<void>): void {
  pending = pending.then(task).catch((err) => {
    showError(err instanceof ApiError ? err.detail : String(err));
  });
}

imageInput.addEventListener("change", () => {
  const file = imageInput.files?.[0];
  if (!file) return;
  imageName = file.name;
  enqueue(async () => {
    showError(null);
    const info = await createSession(file);
    state = initialState(info.session_id, info.width, info.height);
    sessionImage = new Image();
    await new Promise<void>((resolve) => {
      sessionImage!.onload = () => resolve();
      sessionImage!.src = URL.createObjectURL(file);
    });
    gtPixels = null;
    await refreshMask();
    setStatus(state.status);
    render();
  });
});

gtInput.addEventListener("change", () => {
  const file = gtInput.files?.[0];
  if (!file || !state) return;
  enqueue(async () => {
    const url = URL.createObjectURL(file);
    const img = new Image();
    await new Promise<void>((resolve, reject) => {
      img.onload = () => resolve();
      img.onerror = () => reject(new Error("cannot decode ground truth"));
      img.src = url;
    });
    if (img.width !== state!.imageWidth || img.height !== state!.imageHeight) {
      showError("ground truth dimensions do not match the session image; ignored");
      gtPixels = null;
    } else {
      showError(null);
      const off = document.createElement("canvas");
      off.width = img.width;
      off.height = img.height;
      const octx = off.getContext("2d")!;
      octx.drawImage(img, 0, 0);
      const data = octx.getImageData(0, 0, img.width, img.height).data;
      gtPixels = new Uint8Array(img.width * img.height);
      for (let i = 0; i < gtPixels.length; i++) {
        gtPixels[i] = data[i * 4] >= 128 ? 1 : 0;
      }
    }
    render();
  });
});

canvas.addEventListener("mousedown", (ev) => {
  if (!state) return;
  const geom = geometry()!;
  const rect = canvas.getBoundingClientRect();
  const pixel = screenToImage(
    geom,
    ((ev.clientX - rect.left) * canvas.width) / rect.width,
    ((ev.clientY - rect.top) * canvas.height) / rect.height,
  );
  if (!pixel) {
    setStatus("click inside the image");
    return;
  }
  const label: ClickLabel =
    ev.button === 2 || ev.ctrlKey || !modeFg.checked ? "bg" : "fg";
  enqueue(async () => {
    showError(null);
    const resp = await addClick(state!.sessionId, pixel.row, pixel.col, label);
    state = applyClick(state!, pixel.row, pixel.col, label, resp);
    await refreshMask();
    setStatus(state.status);
    render();
  });
});
canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());

undoButton.addEventListener("click", () => {
  if (!state || !canUndo(state)) return;
  enqueue(async () => {
    showError(null);
    const resp = await undoClick(state!.sessionId);
    state = applyUndo(state!, resp);
    await refreshMask();
    setStatus(state.status);
    render();
  });
});

function download(name: string, href: string): void {
  const a = document.createElement("a");
  a.href = href;
  a.download = name;
  a.click();
}

exportButton.addEventListener("click", () => {
  if (!state) return;
  const b64 = latestMask(state);
  if (b64) {
    download("mask.png", `data:image/png;base64,${b64}`);
  }
  const blob = new Blob([exportClickFile(state, imageName)], {
    type: "application/json",
  });
  download("clicks.json", URL.createObjectURL(blob));
});

alphaSlider.addEventListener("input", () => render());

canvas.width = CANVAS_SIZE;
canvas.height = CANVAS_SIZE;
setStatus("load an image to start");
