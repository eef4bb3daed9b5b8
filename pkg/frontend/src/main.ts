/** Browser bootstrap: wires the store to the page. */

import { ApiClient } from "./api.js";
import { SessionStore } from "./store.js";
import { CATEGORIES } from "./types.js";
import {
  renderAnnotatedText,
  renderComparisons,
  renderDag,
  renderGauge,
  renderQueryTable,
  renderTranscript,
} from "./view.js";

const api = new ApiClient("");
const store = new SessionStore(api);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function init() {
  const textInput = el<HTMLTextAreaElement>("document-text");
  const categorySelect = el<HTMLSelectElement>("category");
  const annotateButton = el<HTMLButtonElement>("annotate");
  const runButton = el<HTMLButtonElement>("run");
  const annotatedView = el<HTMLDivElement>("annotated");
  const resultPanel = el<HTMLDivElement>("result");
  const comparisonsPanel = el<HTMLDivElement>("comparisons");
  const errorPanel = el<HTMLDivElement>("error");

  for (const category of CATEGORIES) {
    const option = document.createElement("option");
    option.value = category;
    option.textContent = category.replaceAll("_", " ");
    categorySelect.appendChild(option);
  }

  textInput.addEventListener("change", () => store.setText(textInput.value));

  annotateButton.addEventListener("click", () => {
    // Selection offsets come from the textarea's own selection range.
    const start = textInput.selectionStart ?? 0;
    const end = textInput.selectionEnd ?? 0;
    if (store.getState().text !== textInput.value) store.setText(textInput.value);
    store.annotate(start, end, categorySelect.value);
  });

  runButton.addEventListener("click", () => {
    store.run().catch((err) => {
      errorPanel.textContent = String(err);
    });
  });

  comparisonsPanel.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const id = target.dataset.toggle;
    if (id) {
      store.whatifToggle(id).catch((err) => {
        errorPanel.textContent = String(err);
      });
    }
  });

  store.subscribe((state) => {
    runButton.disabled = !store.canRun;
    annotatedView.innerHTML = renderAnnotatedText(state.text, state.annotations);
    errorPanel.textContent = state.error ?? "";

    const snapshot = state.lastSnapshot;
    if (snapshot && snapshot.state === "failed") {
      resultPanel.innerHTML = renderTranscript(snapshot);
    } else if (state.baseline) {
      const result = state.baseline.result;
      resultPanel.innerHTML =
        renderGauge(result.k_hat) + renderDag(result) + renderQueryTable(result.queries);
    } else if (snapshot) {
      resultPanel.innerHTML = renderTranscript(snapshot);
    }

    const toggles = state.annotations
      .map((a) => {
        const off = state.excluded.has(a.id) ? " off" : "";
        return `<button class="toggle${off}" data-toggle="${a.id}">${a.id}: ${a.span}</button>`;
      })
      .join(" ");
    comparisonsPanel.innerHTML =
      (state.baseline ? `<div class="toggles">${toggles}</div>` : "") +
      renderComparisons(state.comparisons);
  });

  store.setText(textInput.value);
}

document.addEventListener("DOMContentLoaded", init);
