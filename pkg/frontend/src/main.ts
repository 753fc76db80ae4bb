import { SegmentationClient, ServiceError } from "./client.js";
import { colorbarGradientCss, colorbarTicks } from "./colorbar.js";
import { formatReadout, overlayMask, UiSession } from "./session.js";
import type { DistanceGrid, ViewsInfo } from "./types.js";

const OVERLAY_SCALE = 6; // distance maps are small; draw them enlarged

interface ViewPanel {
  viewId: string;
  grid: DistanceGrid;
  overlay: HTMLCanvasElement;
  figure: HTMLElement;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function serviceBaseUrl(): string {
  const fromQuery = new URLSearchParams(location.search).get("service");
  return fromQuery ?? location.origin;
}

function drawOverlay(panel: ViewPanel, threshold: number | null): void {
  const { grid, overlay } = panel;
  const ctx = overlay.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, overlay.width, overlay.height);
  if (threshold === null) return;
  const mask = overlayMask(grid, threshold);
  const sx = overlay.width / grid.width;
  const sy = overlay.height / grid.height;
  ctx.fillStyle = "rgba(0, 0, 0, 0.55)";
  const us = grid.u_coords;
  const vs = grid.v_coords;
  for (let row = 0; row < vs.length; row++) {
    const v0 = row === 0 ? 0 : (vs[row - 1] + vs[row] + 1) / 2;
    const v1 = row === vs.length - 1 ? grid.height : (vs[row] + vs[row + 1] + 1) / 2;
    for (let col = 0; col < us.length; col++) {
      if (!mask[row][col]) continue; // foreground stays bright
      const u0 = col === 0 ? 0 : (us[col - 1] + us[col] + 1) / 2;
      const u1 = col === us.length - 1 ? grid.width : (us[col] + us[col + 1] + 1) / 2;
      ctx.fillRect(u0 * sx, v0 * sy, (u1 - u0) * sx, (v1 - v0) * sy);
    }
  }
}

function buildColorbar(clipMax: number): HTMLElement {
  const wrap = el("div", "colorbar");
  const bar = el("div", "colorbar-bar");
  bar.style.background = colorbarGradientCss();
  const labels = el("div", "colorbar-ticks");
  for (const tick of colorbarTicks(clipMax)) {
    labels.appendChild(el("span", undefined, tick));
  }
  wrap.appendChild(bar);
  wrap.appendChild(labels);
  wrap.appendChild(el("div", "colorbar-caption", `metric distance, clipped at ${clipMax}`));
  return wrap;
}

async function buildPanel(
  client: SegmentationClient,
  info: ViewsInfo,
  viewId: string,
  session: UiSession,
  readout: HTMLElement,
  candidateInput: HTMLInputElement,
  repaintAll: () => void,
): Promise<ViewPanel> {
  const grid = await client.distanceGrid(viewId);
  const figure = el("figure", "view-panel");
  const stack = el("div", "canvas-stack");
  stack.style.width = `${info.width * OVERLAY_SCALE}px`;
  stack.style.height = `${info.height * OVERLAY_SCALE}px`;

  const img = new Image();
  img.src = client.colorizedUrl(viewId, session.rOuter);
  img.width = info.width * OVERLAY_SCALE;
  img.height = info.height * OVERLAY_SCALE;
  img.className = "distance-image";

  const overlay = el("canvas", "preview-overlay");
  overlay.width = info.width * OVERLAY_SCALE;
  overlay.height = info.height * OVERLAY_SCALE;

  stack.appendChild(img);
  stack.appendChild(overlay);
  figure.appendChild(stack);
  figure.appendChild(el("figcaption", undefined, viewId));

  const panel: ViewPanel = { viewId, grid, overlay, figure };

  let hoverBusy = false;
  let lastShown: { u: number; v: number } | null = null;
  overlay.addEventListener("mousemove", async (event) => {
    const rect = overlay.getBoundingClientRect();
    const u = Math.floor(((event.clientX - rect.left) / rect.width) * info.width);
    const v = Math.floor(((event.clientY - rect.top) / rect.height) * info.height);
    if (u < 0 || v < 0 || u >= info.width || v >= info.height) return;
    if (hoverBusy || (lastShown && lastShown.u === u && lastShown.v === v)) return;
    hoverBusy = true;
    try {
      const value = await client.distance(viewId, u, v);
      lastShown = { u, v };
      readout.textContent = `${viewId} (${u}, ${v}): ${formatReadout(value)}`;
      overlay.dataset.lastDistance =
        value.distance === null ? "inf" : String(value.distance);
    } catch {
      /* transient hover errors are not worth a banner */
    } finally {
      hoverBusy = false;
    }
  });
  overlay.addEventListener("mouseleave", () => {
    lastShown = null;
  });

  // Clicking commits the hovered value as the candidate threshold.
  overlay.addEventListener("click", () => {
    const last = overlay.dataset.lastDistance;
    if (!last || last === "inf") return;
    const check = session.setCandidateText(last);
    if (check.ok) {
      candidateInput.value = last;
      repaintAll();
    }
  });

  return panel;
}

async function init(): Promise<void> {
  const app = document.getElementById("app");
  if (!app) return;
  const client = new SegmentationClient(serviceBaseUrl());

  let info: ViewsInfo;
  try {
    info = await client.views();
  } catch (error) {
    const banner = el("div", "error-banner");
    banner.appendChild(
      el("p", undefined, `segmentation service unreachable: ${String(error)}`),
    );
    const retry = el("button", undefined, "retry");
    retry.addEventListener("click", () => {
      banner.remove();
      void init();
    });
    banner.appendChild(retry);
    app.appendChild(banner);
    return;
  }

  const session = new UiSession(info.r_outer);
  app.textContent = "";
  app.appendChild(el("h1", undefined, "choose the inner radius"));
  app.appendChild(
    el(
      "p",
      "hint",
      "hover to read metric distances; click to take the hovered value as the " +
        "threshold; darkened pixels preview as background (strictly beyond the threshold)",
    ),
  );

  const readout = el("div", "readout", "hover over a view to read distances");
  const controls = el("div", "controls");
  const candidateInput = el("input") as HTMLInputElement;
  candidateInput.type = "number";
  candidateInput.step = "any";
  candidateInput.placeholder = `0 < R_i < ${info.r_outer}`;
  const confirmButton = el("button", undefined, "confirm threshold");
  confirmButton.disabled = true;
  const status = el("div", "status");

  const panels: ViewPanel[] = [];
  const repaintAll = () => {
    confirmButton.disabled = !session.canConfirm();
    status.textContent = session.lastError ?? "";
    for (const panel of panels) drawOverlay(panel, session.candidate);
  };

  candidateInput.addEventListener("input", () => {
    session.setCandidateText(candidateInput.value);
    repaintAll();
  });

  confirmButton.addEventListener("click", async () => {
    if (!session.canConfirm() || session.candidate === null) return;
    confirmButton.disabled = true;
    try {
      const ack = await client.confirm(session.candidate);
      session.markConfirmed(ack.r_inner);
      status.textContent = `saved r_inner = ${ack.r_inner} (confirmation #${ack.confirmations})`;
    } catch (error) {
      status.textContent =
        error instanceof ServiceError ? error.message : String(error);
    } finally {
      confirmButton.disabled = !session.canConfirm();
    }
  });

  const row = el("div", "view-row");
  app.appendChild(row);
  app.appendChild(buildColorbar(info.r_outer));
  app.appendChild(readout);
  controls.appendChild(candidateInput);
  controls.appendChild(confirmButton);
  app.appendChild(controls);
  app.appendChild(status);

  for (const viewId of info.view_ids) {
    const panel = await buildPanel(
      client, info, viewId, session, readout, candidateInput, repaintAll,
    );
    panels.push(panel);
    row.appendChild(panel.figure);
  }
  repaintAll();
}

document.addEventListener("DOMContentLoaded", () => {
  void init();
});
