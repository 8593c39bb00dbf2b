/** DOM rendering. Pure view of ChatViewState; no service calls here. */

import type { HealthInfo } from "./api.js";
import { canSend, type ChatViewState } from "./state.js";

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing #${id} in the page`);
  }
  return node;
}

export function renderConfig(health: HealthInfo): void {
  const cfg = health.config;
  byId("config").textContent =
    `lambda=${cfg.lambda} mu=${cfg.mu} variant=${cfg.variant} ` +
    `strategy=${cfg.strategy} beam=${cfg.beam}`;
}

export function render(state: ChatViewState): void {
  const messages = byId("messages");
  messages.replaceChildren();
  for (const message of state.messages) {
    messages.appendChild(el("div", `bubble ${message.role}`, message.text));
  }
  if (state.pending) {
    messages.appendChild(el("div", "bubble recommender pending", "..."));
  }
  messages.scrollTop = messages.scrollHeight;

  const panel = byId("panel");
  panel.replaceChildren();
  for (const item of state.rankedItems) {
    const row = el("li", "item");
    row.appendChild(el("span", "name", item.name));
    row.appendChild(el("span", "prob", `${(100 * item.prob).toFixed(1)}%`));
    panel.appendChild(row);
  }

  const timeline = byId("timeline");
  timeline.replaceChildren();
  for (const bar of state.timeline) {
    const row = el("div", "bar-row");
    row.appendChild(el("span", "bar-label", bar.name));
    const bucket = el("div", "bar-bucket");
    const fill = el("div", "bar-fill", `${bar.weight.toFixed(1)}%`);
    fill.style.width = `${bar.weight}%`;
    bucket.appendChild(fill);
    row.appendChild(bucket);
    timeline.appendChild(row);
  }

  const input = byId("input") as HTMLInputElement;
  const send = byId("send") as HTMLButtonElement;
  send.disabled = !canSend(state, input.value);

  const error = byId("error");
  error.replaceChildren();
  if (state.error !== null) {
    error.appendChild(el("span", "error-text", state.error));
    const retry = el("button", "retry", "retry") as HTMLButtonElement;
    retry.id = "retry";
    error.appendChild(retry);
  }
}
