// DOM wiring for the front panel. Single event loop: the socket fills the
// state, a render timer repaints from it, and every control change emits
// exactly one protocol command.

import {
  frequencyCommand,
  inputGainCommand,
  lowestHarmonicCommand,
  outputGainCommand,
  queryFrequencyCommand,
  timeConstantCommand,
  toggleReferenceCommand,
  toggleSyncCommand,
  ProtocolError,
} from "./protocol.js";
import { PanelSession, webSocketTransport } from "./connection.js";
import { PanelState } from "./state.js";
import { drawTraces, ManualRange } from "./plot.js";

const state = new PanelState();
const session = new PanelSession(webSocketTransport, state);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const urlInput = el<HTMLInputElement>("url");
const connectBtn = el<HTMLButtonElement>("connect");
const messages = el<HTMLTextAreaElement>("messages");
const statusBox = el<HTMLSpanElement>("status");

const freqInput = el<HTMLInputElement>("frequency");
const gainSelect = el<HTMLSelectElement>("gain");
const tauInput = el<HTMLInputElement>("tau");
const harmonicInput = el<HTMLInputElement>("harmonic");
const outGainInput = el<HTMLInputElement>("outgain");
const externalBox = el<HTMLInputElement>("external");
const syncBox = el<HTMLInputElement>("sync");
const queryBtn = el<HTMLButtonElement>("query");

const modeSelect = el<HTMLSelectElement>("mode");
const windowInput = el<HTMLInputElement>("window");
const recordBox = el<HTMLInputElement>("record");
const fileInput = el<HTMLInputElement>("filename");
const saveBtn = el<HTMLButtonElement>("save");
const manualBox = el<HTMLInputElement>("manualrange");
const yMinInput = el<HTMLInputElement>("ymin");
const yMaxInput = el<HTMLInputElement>("ymax");

const readout = {
  r: el<HTMLSpanElement>("read-r"),
  phi: el<HTMLSpanElement>("read-phi"),
  x: el<HTMLSpanElement>("read-x"),
  y: el<HTMLSpanElement>("read-y"),
  s: el<HTMLSpanElement>("read-s"),
};

const canvas = el<HTMLCanvasElement>("plot");
const ctx = canvas.getContext("2d")!;

function defaultUrl(): string {
  const proto = location.protocol === "https:" ? "wss" : "ws";
  const host = location.host || "127.0.0.1:8000";
  return `${proto}://${host}/bridge`;
}
urlInput.value = defaultUrl();

connectBtn.addEventListener("click", () => {
  if (state.status === "disconnected") {
    session.connect(urlInput.value);
    connectBtn.textContent = "Disconnect";
  } else {
    session.disconnect();
    connectBtn.textContent = "Connect";
  }
});

function sendChecked(build: () => string): void {
  try {
    session.send(build());
  } catch (err) {
    if (err instanceof ProtocolError) state.message(`rejected: ${err.message}`);
    else throw err;
  }
}

freqInput.addEventListener("change", () =>
  sendChecked(() => frequencyCommand(Number(freqInput.value))),
);
gainSelect.addEventListener("change", () =>
  sendChecked(() => inputGainCommand(Number(gainSelect.value))),
);
tauInput.addEventListener("change", () =>
  sendChecked(() => timeConstantCommand(Number(tauInput.value))),
);
harmonicInput.addEventListener("change", () =>
  sendChecked(() => lowestHarmonicCommand(Number(harmonicInput.value))),
);
outGainInput.addEventListener("change", () =>
  sendChecked(() => outputGainCommand(Number(outGainInput.value))),
);
externalBox.addEventListener("change", () =>
  sendChecked(() => toggleReferenceCommand()),
);
syncBox.addEventListener("change", () => sendChecked(() => toggleSyncCommand()));
queryBtn.addEventListener("click", () =>
  sendChecked(() => queryFrequencyCommand()),
);

modeSelect.addEventListener("change", () => {
  state.displayMode = modeSelect.value === "xy" ? "xy" : "rphi";
});
windowInput.addEventListener("change", () => {
  state.setWindowSeconds(Number(windowInput.value) || 10);
});
recordBox.addEventListener("change", () => {
  if (recordBox.checked) state.recorder.start(fileInput.value || undefined);
  else state.recorder.stop();
});
saveBtn.addEventListener("click", () => {
  const blob = new Blob([state.recorder.toCsv()], { type: "text/csv" });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = state.recorder.fileName;
  link.click();
  URL.revokeObjectURL(link.href);
});

function render(): void {
  statusBox.textContent = state.status;
  statusBox.className = `status ${state.status}`;
  messages.value = state.log
    .map((entry) => `[${entry.t.toFixed(1)}s] ${entry.text}`)
    .join("\n");
  messages.scrollTop = messages.scrollHeight;

  const frame = state.latest;
  if (frame) {
    readout.r.textContent = `${frame.r1.toFixed(5)} mV`;
    readout.phi.textContent = `${((frame.phi1 * 180) / Math.PI).toFixed(3)} deg`;
    readout.x.textContent = `${frame.x1.toFixed(5)} mV`;
    readout.y.textContent = `${frame.y1.toFixed(5)} mV`;
    readout.s.textContent = `${frame.s1.toFixed(5)} mV`;
    // mirror the device's settings; controls never assume their own echo
    externalBox.checked = frame.externalOn;
    syncBox.checked = frame.syncOn;
  }

  const manual: ManualRange | null = manualBox.checked
    ? { min: Number(yMinInput.value), max: Number(yMaxInput.value) }
    : null;
  const traces =
    state.displayMode === "rphi"
      ? [
          { label: "R (mV)", color: "#53b0f8", pick: (p: any) => p.r1 },
          {
            label: "phi (deg)",
            color: "#f8a953",
            pick: (p: any) => (p.phi1 * 180) / Math.PI,
          },
        ]
      : [
          { label: "X (mV)", color: "#53f89a", pick: (p: any) => p.x1 },
          { label: "Y (mV)", color: "#f853a9", pick: (p: any) => p.y1 },
        ];
  drawTraces(ctx, canvas.width, canvas.height, state.trace, traces, manual);
}

setInterval(render, 100);
