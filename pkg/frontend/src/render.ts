// Pure HTML renderers for the prediction view. Kept DOM-free so they are
// testable against recorded service responses without a browser.
//
// Contract: confidences are rendered exactly in the order the service sent
// them, never reordered or renormalized; the first entry is the top-1.

import type { ClassifyResponse, SpeciesInfo } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function formatLatency(latencyMs: number): string {
  return `${latencyMs.toFixed(2)} ms`;
}

export function formatPercent(probability: number): string {
  return `${(probability * 100).toFixed(1)}%`;
}

export function renderPrediction(response: ClassifyResponse): string {
  const rows = response.top_k
    .map((entry, i) => {
      const width = Math.max(0, Math.min(100, entry.probability * 100));
      const top = i === 0 ? " top-1" : "";
      return (
        `<div class="pred-row${top}" data-rank="${i + 1}">` +
        `<span class="pred-name">${escapeHtml(entry.class_name)}</span>` +
        `<span class="pred-bar-track">` +
        `<span class="pred-bar" style="width: ${width.toFixed(1)}%"></span>` +
        `</span>` +
        `<span class="pred-value">${formatPercent(entry.probability)}</span>` +
        `</div>`
      );
    })
    .join("");
  return (
    `<div class="prediction">` +
    rows +
    `<div class="pred-meta">` +
    `<span class="pred-model">${escapeHtml(response.model)}</span>` +
    `<span class="pred-latency">${formatLatency(response.latency_ms)}</span>` +
    `</div>` +
    `</div>`
  );
}

export function renderSpeciesCard(info: SpeciesInfo): string {
  return (
    `<div class="species-card">` +
    `<h2 class="species-name">${escapeHtml(info.name)}</h2>` +
    `<p class="species-description">${escapeHtml(info.description)}</p>` +
    `</div>`
  );
}

/** Service errors are shown verbatim; network failures get a retry hint. */
export function renderError(message: string, retryable = false): string {
  const retry = retryable
    ? `<button class="retry-button" type="button">Try again</button>`
    : "";
  return (
    `<div class="error-box" role="alert">` +
    `<span class="error-message">${escapeHtml(message)}</span>` +
    retry +
    `</div>`
  );
}

export function renderBusy(): string {
  return `<div class="busy">classifying…</div>`;
}
