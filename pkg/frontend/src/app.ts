/**
 * Browser glue: wires the console client to the DOM and paints at display
 * refresh. All state lives in the client's ring buffer; this file only reads
 * it inside requestAnimationFrame and pushes slider moves down.
 */

import { ConsoleClient } from "./client.js";
import { dotPosition, mouthPolyline, statsRows, syncGauge } from "./render.js";
import { WS_PATH } from "./protocol.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const urlInput = el<HTMLInputElement>("url");
const seedInput = el<HTMLInputElement>("seed");
const identityInput = el<HTMLInputElement>("identity");
const fpsInput = el<HTMLInputElement>("fps");
const connectBtn = el<HTMLButtonElement>("connect");
const startBtn = el<HTMLButtonElement>("start");
const stopBtn = el<HTMLButtonElement>("stop");
const slider = el<HTMLInputElement>("slider");
const sliderOut = el<HTMLSpanElement>("slider-value");
const scriptBox = el<HTMLTextAreaElement>("script");
const playBtn = el<HTMLButtonElement>("play-script");
const statusEl = el<HTMLSpanElement>("status");
const errorEl = el<HTMLDivElement>("last-error");
const statsEl = el<HTMLTableSectionElement>("stats-body");
const gaugeEl = el<HTMLSpanElement>("gauge");
const frameEl = el<HTMLSpanElement>("frame-cursor");
const traceCanvas = el<HTMLCanvasElement>("trace");
const dotCanvas = el<HTMLCanvasElement>("dot");

urlInput.value = `ws://${location.hostname || "127.0.0.1"}:8787${WS_PATH}`;

let client: ConsoleClient | null = null;
const recentDrives: number[] = []; // slider values, one per sent drive tick

function setControls(): void {
  const status = client?.status ?? "idle";
  statusEl.textContent = status;
  statusEl.dataset.state = status;
  connectBtn.disabled = !(status === "idle" || status === "closed");
  startBtn.disabled = status !== "open";
  stopBtn.disabled = status !== "streaming";
}

connectBtn.addEventListener("click", () => {
  client?.close();
  recentDrives.length = 0;
  client = new ConsoleClient({ url: urlInput.value });
  client.onStatus = setControls;
  client.onError = (message) => {
    errorEl.textContent = message;
  };
  client.onFrame = () => {
    frameEl.textContent = String(client!.ring.latestIndex);
  };
  client.onStats = (snapshot) => {
    statsEl.replaceChildren(
      ...statsRows(snapshot.fields).map(([label, rawText]) => {
        const tr = document.createElement("tr");
        const name = document.createElement("td");
        name.textContent = label;
        const value = document.createElement("td");
        value.textContent = rawText; // server bytes, verbatim
        tr.append(name, value);
        return tr;
      }),
    );
  };
  errorEl.textContent = "";
  client.connect();
  setControls();
});

startBtn.addEventListener("click", () => {
  if (!client) return;
  const identity = identityInput.value
    .split(",")
    .map((s) => Number.parseFloat(s.trim()));
  try {
    client.start(Number(seedInput.value), identity, Number(fpsInput.value));
  } catch (exc) {
    errorEl.textContent = String(exc instanceof Error ? exc.message : exc);
  }
  setControls();
});

stopBtn.addEventListener("click", () => {
  client?.stop();
  setControls();
});

slider.addEventListener("input", () => {
  const v = Number(slider.value);
  sliderOut.textContent = v.toFixed(2);
  client?.setSlider(v);
});

playBtn.addEventListener("click", () => {
  const values = scriptBox.value
    .split(/[\s,]+/)
    .filter((s) => s.length)
    .map((s) => Number.parseFloat(s));
  try {
    client?.playScript(values);
  } catch (exc) {
    errorEl.textContent = String(exc instanceof Error ? exc.message : exc);
  }
});

function paint(): void {
  if (client) {
    const trace = traceCanvas.getContext("2d")!;
    trace.clearRect(0, 0, traceCanvas.width, traceCanvas.height);
    const frames = client.ring.last(250);
    const pts = mouthPolyline(frames, traceCanvas.width, traceCanvas.height);
    if (pts.length > 1) {
      trace.strokeStyle = "#4cc2ff";
      trace.lineWidth = 1.5;
      trace.beginPath();
      trace.moveTo(pts[0].x, pts[0].y);
      for (const p of pts.slice(1)) trace.lineTo(p.x, p.y);
      trace.stroke();
    }

    const dot = dotCanvas.getContext("2d")!;
    dot.clearRect(0, 0, dotCanvas.width, dotCanvas.height);
    const latest = client.ring.latest();
    if (latest) {
      const p = dotPosition(latest, dotCanvas.width, dotCanvas.height);
      const mouthGap = Math.min(12, Math.max(1, (latest.mouth + 2) * 3));
      dot.fillStyle = "#ffd166";
      dot.beginPath();
      dot.arc(p.x, p.y, 14, 0, Math.PI * 2);
      dot.fill();
      dot.fillStyle = "#1b1e24";
      dot.beginPath();
      dot.ellipse(p.x, p.y + 4, 8, mouthGap / 2, 0, 0, Math.PI * 2);
      dot.fill();
    }

    if (client.streaming) {
      recentDrives.push(client.slider);
      if (recentDrives.length > 250) recentDrives.shift();
      const mouths = frames.map((f) => f.mouth);
      gaugeEl.textContent = syncGauge(mouths, recentDrives).toFixed(3);
    }
  }
  requestAnimationFrame(paint);
}

setControls();
requestAnimationFrame(paint);
