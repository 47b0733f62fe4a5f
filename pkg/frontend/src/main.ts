// Bootstrap: wire the form, the store, and the render functions together.

import { ApiClient } from "./api.js";
import { clearView, loadView, saveView } from "./persist.js";
import { renderError, renderEvidence, renderRanking, SortKey } from "./render.js";
import { AuditStore } from "./state.js";

export function mountApp(root: HTMLElement, baseUrl = ""): AuditStore {
  root.innerHTML = `
    <header>
      <h1>evidence audit console</h1>
      <div id="corpus-stats" class="stats"></div>
    </header>
    <form id="query-form">
      <input id="query" type="text" placeholder="cloze query with [MASK]" size="60" />
      <label>k <input id="k" type="number" min="1" value="" placeholder="64" /></label>
      <label>correction c
        <input id="c" type="range" min="0" max="1" step="0.05" value="0.5" />
        <span id="c-value">0.50</span>
      </label>
      <button type="submit">rank</button>
    </form>
    <div id="error"></div>
    <main>
      <section id="ranking-panel"></section>
      <section id="evidence-panel">
        <label class="sort-toggle">sort by
          <select id="sort-key">
            <option value="shapley">attribution</option>
            <option value="similarity">similarity</option>
          </select>
        </label>
        <div id="evidence"></div>
      </section>
    </main>`;

  const api = new ApiClient(baseUrl);
  const store = new AuditStore(api);

  const query = root.querySelector<HTMLInputElement>("#query")!;
  const kInput = root.querySelector<HTMLInputElement>("#k")!;
  const cInput = root.querySelector<HTMLInputElement>("#c")!;
  const cValue = root.querySelector<HTMLElement>("#c-value")!;
  const sortKey = root.querySelector<HTMLSelectElement>("#sort-key")!;
  const rankingPanel = root.querySelector<HTMLElement>("#ranking-panel")!;
  const evidencePanel = root.querySelector<HTMLElement>("#evidence")!;
  const errorPanel = root.querySelector<HTMLElement>("#error")!;
  const statsPanel = root.querySelector<HTMLElement>("#corpus-stats")!;

  cInput.addEventListener("input", () => {
    cValue.textContent = Number(cInput.value).toFixed(2);
  });

  root.querySelector<HTMLFormElement>("#query-form")!.addEventListener(
    "submit", (event) => {
      event.preventDefault();
      const k = kInput.value ? Number(kInput.value) : undefined;
      void store.submitQuery(query.value, k, Number(cInput.value));
    });

  sortKey.addEventListener("change", () => {
    renderEvidence(evidencePanel, store, sortKey.value as SortKey);
  });

  store.subscribe(() => {
    renderRanking(rankingPanel, store);
    renderEvidence(evidencePanel, store, sortKey.value as SortKey);
    renderError(errorPanel, store);
    if (store.session) {
      saveView({
        rank: store.session.rank,
        selectedAnswer: store.session.selectedAnswer,
        indexChecksum: statsPanel.dataset.checksum ?? "",
      });
    }
  });

  void api.stats().then((stats) => {
    statsPanel.textContent =
      `${stats.answer_set_size} answers / ${stats.n_passages} passages / ` +
      `index ${stats.index_checksum.slice(0, 8)}`;
    statsPanel.dataset.checksum = stats.index_checksum;
    const persisted = loadView();
    if (persisted) {
      if (persisted.indexChecksum && persisted.indexChecksum !== stats.index_checksum) {
        clearView(); // the corpus changed; a replayed view would be stale
      } else {
        query.value = persisted.rank.query;
        store.restore(persisted.rank, persisted.selectedAnswer);
        if (persisted.selectedAnswer) void store.refreshExplanation();
      }
    }
  }).catch(() => {
    statsPanel.textContent = "service unreachable";
  });

  return store;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mountApp(document.getElementById("app")!);
}
