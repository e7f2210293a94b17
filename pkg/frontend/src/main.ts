import { ApiClient, type PatchPage } from "./api.js";
import { UiController } from "./controller.js";
import { render, type Handlers } from "./render.js";

const client = new ApiClient("");
const controller = new UiController(client);
let drillPage: PatchPage | null = null;

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app container");
}

const handlers: Handlers = {
  onToggle: (id) => controller.toggle(id),
  onMerge: () => void controller.submitMerge(),
  onUndo: () => void controller.submitUndo(),
  onExport: () =>
    void controller.submitExport().then((path) => {
      if (path) {
        window.alert(`exported to ${path}`);
      }
    }),
  onDrill: (id) =>
    void controller.drillIn(id).then((page) => {
      drillPage = page;
      repaint();
    }),
  onBack: () => {
    drillPage = null;
    controller.backToGallery();
  },
  onPage: (delta) => {
    if (controller.state.view.kind !== "drill" || !drillPage) {
      return;
    }
    const target = Math.max(0, controller.state.view.page + delta);
    void controller.drillIn(controller.state.view.clusterId, target).then((page) => {
      if (page && page.items.length > 0) {
        drillPage = page;
      }
      repaint();
    });
  },
};

function repaint(): void {
  render(root as HTMLElement, controller.state, client, handlers, drillPage);
}

controller.onChange = repaint;

document.addEventListener("keydown", (ev) => {
  if (controller.state.view.kind !== "drill") {
    return;
  }
  if (ev.key === "ArrowRight") {
    handlers.onPage(1);
  } else if (ev.key === "ArrowLeft") {
    handlers.onPage(-1);
  } else if (ev.key === "Escape") {
    handlers.onBack();
  }
});

void controller.refresh();
