/** Round-trip acceptance against the real annotation service.
 *
 * A scripted session (two merges, one undo, one export) driven through the
 * UI controller must leave a cluster store byte-identical to the same
 * operations issued directly against the clustering library. With the
 * service stopped mid-session, the UI shows its banner and issues no
 * state-mutating retries.
 */

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { readFileSync } from "node:fs";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { UiController } from "../src/controller.js";

const PORT = 8741;
const BASE = `http://127.0.0.1:${PORT}`;
const HELPERS = join(__dirname, "helpers");

let work: string;
let server: ChildProcess | null = null;
let fetchCount = 0;

const countingFetch = (url: string, init?: RequestInit) => {
  fetchCount += 1;
  return fetch(url, init);
};

async function waitForServer(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/clusters`);
      if (resp.ok) {
        return;
      }
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("annotation service did not come up");
}

async function stopServer(): Promise<void> {
  if (server) {
    server.kill("SIGTERM");
    await new Promise((r) => setTimeout(r, 500));
    if (server.exitCode === null) {
      server.kill("SIGKILL");
    }
    server = null;
  }
}

beforeAll(async () => {
  work = mkdtempSync(join(tmpdir(), "reefsim-ui-"));
  execFileSync("python3", [join(HELPERS, "make_store.py"), join(work, "api")]);
  execFileSync("python3", [join(HELPERS, "make_store.py"), join(work, "lib")]);
  const code =
    "import sys; from reefsim.annotation import serve; " +
    `serve(sys.argv[1], port=${PORT}, patch_root=sys.argv[2])`;
  server = spawn("python3", ["-c", code, join(work, "api", "store"), join(work, "api")],
                 { stdio: "ignore" });
  await waitForServer();
}, 60000);

afterAll(async () => {
  await stopServer();
});

describe("scripted UI session vs direct library session", () => {
  it("leaves byte-identical stores after two merges, an undo, and an export", async () => {
    const ui = new UiController(new ApiClient(BASE, countingFetch));
    await ui.refresh();
    expect(ui.state.banner).toBeNull();
    const ids = ui.state.clusters.map((c) => c.cluster_id);
    expect(ids.length).toBe(4);

    ui.toggle(ids[0]);
    ui.toggle(ids[1]);
    expect(ui.canMerge()).toBe(true);
    await ui.submitMerge();
    expect(ui.state.toast).toBeNull();
    expect(ui.state.clusters.length).toBe(3);

    const after = ui.state.clusters.map((c) => c.cluster_id);
    ui.toggle(after[1]);
    ui.toggle(after[2]);
    await ui.submitMerge();
    expect(ui.state.clusters.length).toBe(2);

    await ui.submitUndo();
    expect(ui.state.clusters.length).toBe(3);

    const exported = await ui.submitExport();
    expect(exported).toContain("export");

    execFileSync("python3", [join(HELPERS, "library_session.py"), join(work, "lib", "store")]);

    for (const rel of ["clusters.json", "lineage.jsonl",
                       "export/clusters.json", "export/lineage.jsonl"]) {
      const viaApi = readFileSync(join(work, "api", "store", rel));
      const viaLib = readFileSync(join(work, "lib", "store", rel));
      expect(viaApi.equals(viaLib), `${rel} differs`).toBe(true);
    }
  }, 60000);

  it("service stopped mid-session: banner raised, no mutating retries", async () => {
    const ui = new UiController(new ApiClient(BASE, countingFetch));
    await ui.refresh();
    const ids = ui.state.clusters.map((c) => c.cluster_id);
    ui.toggle(ids[0]);
    ui.toggle(ids[1]);

    const storeBytes = readFileSync(join(work, "api", "store", "clusters.json"));
    await stopServer();

    const before = fetchCount;
    await ui.submitMerge();
    expect(fetchCount - before).toBe(1); // one attempt, zero retries
    expect(ui.state.banner).toMatch(/unreachable/);
    expect(ui.state.pending).toBe(false);
    expect(ui.state.selection).toEqual([ids[0], ids[1]]);

    // another click is a fresh, deliberate attempt, still exactly one call
    await ui.submitMerge();
    expect(fetchCount - before).toBe(2);

    const unchanged = readFileSync(join(work, "api", "store", "clusters.json"));
    expect(unchanged.equals(storeBytes)).toBe(true);
  }, 30000);
});
