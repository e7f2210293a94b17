/** DOM rendering: a thin projection of UiState onto the page. */

import type { ApiClient, PatchPage } from "./api.js";
import type { UiState } from "./state.js";

export interface Handlers {
  onToggle: (clusterId: number) => void;
  onMerge: () => void;
  onUndo: () => void;
  onExport: () => void;
  onDrill: (clusterId: number) => void;
  onBack: () => void;
  onPage: (delta: number) => void;
}

export function render(
  root: HTMLElement,
  state: UiState,
  client: ApiClient,
  handlers: Handlers,
  drillPage: PatchPage | null,
): void {
  root.textContent = "";

  if (state.banner) {
    const banner = el("div", "banner", state.banner);
    root.appendChild(banner);
  }
  if (state.toast) {
    root.appendChild(el("div", "toast", state.toast));
  }

  if (state.view.kind === "drill" && drillPage) {
    renderDrill(root, client, handlers, drillPage);
    return;
  }
  renderGallery(root, state, client, handlers);
}

function renderGallery(
  root: HTMLElement,
  state: UiState,
  client: ApiClient,
  handlers: Handlers,
): void {
  const bar = el("div", "toolbar");
  const mergeBtn = el("button", "merge", `Merge ${state.selection.length} clusters`) as HTMLButtonElement;
  mergeBtn.disabled = state.selection.length < 2 || state.pending;
  mergeBtn.onclick = handlers.onMerge;
  const undoBtn = el("button", "undo", "Undo") as HTMLButtonElement;
  undoBtn.disabled = state.pending;
  undoBtn.onclick = handlers.onUndo;
  const exportBtn = el("button", "export", "Export") as HTMLButtonElement;
  exportBtn.disabled = state.pending;
  exportBtn.onclick = handlers.onExport;
  bar.append(mergeBtn, undoBtn, exportBtn,
             el("span", "count", `${state.clusters.length} clusters`));
  root.appendChild(bar);

  const grid = el("div", "grid");
  for (const cluster of state.clusters) {
    const card = el("div", "card");
    if (state.selection.includes(cluster.cluster_id)) {
      card.classList.add("selected");
    }
    card.appendChild(el("div", "card-title",
                        `#${cluster.cluster_id} (${cluster.member_count} patches)`));
    const thumbs = el("div", "thumbs");
    for (const path of cluster.thumbnails) {
      const img = document.createElement("img");
      img.src = client.fileUrl(path);
      img.loading = "lazy";
      thumbs.appendChild(img);
    }
    card.appendChild(thumbs);
    card.onclick = () => handlers.onToggle(cluster.cluster_id);
    card.ondblclick = (ev) => {
      ev.preventDefault();
      handlers.onDrill(cluster.cluster_id);
    };
    grid.appendChild(card);
  }
  root.appendChild(grid);
}

function renderDrill(
  root: HTMLElement,
  client: ApiClient,
  handlers: Handlers,
  page: PatchPage,
): void {
  const bar = el("div", "toolbar");
  const back = el("button", "back", "< Gallery") as HTMLButtonElement;
  back.onclick = handlers.onBack;
  const prev = el("button", "prev", "Prev") as HTMLButtonElement;
  prev.disabled = page.page === 0;
  prev.onclick = () => handlers.onPage(-1);
  const next = el("button", "next", "Next") as HTMLButtonElement;
  next.disabled = (page.page + 1) * page.page_size >= page.total;
  next.onclick = () => handlers.onPage(1);
  bar.append(back, prev, next,
             el("span", "count",
                `cluster #${page.cluster_id}: page ${page.page + 1}, ${page.total} patches`));
  root.appendChild(bar);

  const grid = el("div", "grid drill");
  for (const item of page.items) {
    const cell = el("div", "patch");
    const img = document.createElement("img");
    img.src = client.fileUrl(item.path);
    cell.appendChild(img);
    cell.appendChild(el("div", "label", `${item.seq_id} / ${item.frame_index}`));
    grid.appendChild(cell);
  }
  root.appendChild(grid);
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}
