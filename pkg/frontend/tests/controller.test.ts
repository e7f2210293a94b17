import { describe, expect, it } from "vitest";

import { ApiClient, ApiError, NetworkError } from "../src/api.js";
import { UiController } from "../src/controller.js";

interface FakeOptions {
  failMergeWith?: Error;
  mergeDelayMs?: number;
}

function fakeClient(options: FakeOptions = {}) {
  const calls = { merge: 0, list: 0, undo: 0 };
  let clusters = [0, 3, 6, 9];
  const client = {
    async listClusters() {
      calls.list += 1;
      return clusters.map((id) => ({
        cluster_id: id,
        member_count: 4,
        sequence_count: 2,
        thumbnails: [],
      }));
    },
    async merge(ids: number[]) {
      calls.merge += 1;
      if (options.mergeDelayMs) {
        await new Promise((r) => setTimeout(r, options.mergeDelayMs));
      }
      if (options.failMergeWith) {
        throw options.failMergeWith;
      }
      const target = Math.min(...ids);
      clusters = clusters.filter((id) => id === target || !ids.includes(id));
      return { clusters: {}, lineage_length: 1 };
    },
    async undo() {
      calls.undo += 1;
      return { clusters: {}, lineage_length: 0, undone: true };
    },
    async exportStore() {
      return { path: "/tmp/export", snapshot: "", lineage: "" };
    },
    async getPatches() {
      throw new ApiError(404, "unknown cluster");
    },
    fileUrl: (p: string) => p,
  } as unknown as ApiClient;
  return { client, calls };
}

describe("merge flow", () => {
  it("issues one POST, clears selection, refreshes", async () => {
    const { client, calls } = fakeClient();
    const ui = new UiController(client);
    await ui.refresh();
    ui.toggle(3);
    ui.toggle(6);
    await ui.submitMerge();
    expect(calls.merge).toBe(1);
    expect(ui.state.selection).toEqual([]);
    expect(ui.state.clusters.map((c) => c.cluster_id)).toEqual([0, 3, 9]);
    expect(ui.state.pending).toBe(false);
  });

  it("suppresses a second submit while one is in flight", async () => {
    const { client, calls } = fakeClient({ mergeDelayMs: 20 });
    const ui = new UiController(client);
    await ui.refresh();
    ui.toggle(0);
    ui.toggle(3);
    const first = ui.submitMerge();
    const second = ui.submitMerge(); // double click
    await Promise.all([first, second]);
    expect(calls.merge).toBe(1);
  });

  it("does nothing with fewer than two selections", async () => {
    const { client, calls } = fakeClient();
    const ui = new UiController(client);
    await ui.refresh();
    ui.toggle(0);
    await ui.submitMerge();
    expect(calls.merge).toBe(0);
  });

  it("keeps the selection and shows a toast on a 4xx", async () => {
    const { client, calls } = fakeClient({ failMergeWith: new ApiError(404, "unknown id") });
    const ui = new UiController(client);
    await ui.refresh();
    ui.toggle(0);
    ui.toggle(3);
    await ui.submitMerge();
    expect(calls.merge).toBe(1);
    expect(ui.state.toast).toContain("unknown id");
    expect(ui.state.selection).toEqual([0, 3]);
    expect(ui.state.pending).toBe(false);
  });

  it("raises the banner and does not retry on network failure", async () => {
    const { client, calls } = fakeClient({
      failMergeWith: new NetworkError("connection refused"),
    });
    const ui = new UiController(client);
    await ui.refresh();
    ui.toggle(0);
    ui.toggle(3);
    await ui.submitMerge();
    expect(calls.merge).toBe(1); // exactly one attempt, no retry
    expect(ui.state.banner).toMatch(/unreachable/);
    expect(ui.state.pending).toBe(false);
  });
});

describe("undo and drill", () => {
  it("undo refreshes the gallery", async () => {
    const { client, calls } = fakeClient();
    const ui = new UiController(client);
    await ui.refresh();
    await ui.submitUndo();
    expect(calls.undo).toBe(1);
    expect(calls.list).toBe(2);
  });

  it("drill into a missing cluster returns to the gallery", async () => {
    const { client } = fakeClient();
    const ui = new UiController(client);
    await ui.refresh();
    const page = await ui.drillIn(42);
    expect(page).toBeNull();
    expect(ui.state.view.kind).toBe("gallery");
    expect(ui.state.toast).toMatch(/no longer exists/);
  });
});
