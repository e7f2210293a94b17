/** Coordinates the API client and UI state. Mutations are strictly one at
 * a time (the pending flag suppresses double submits) and nothing retries
 * on failure; a network error raises the banner and leaves the store
 * untouched until the operator acts again. */

import { ApiClient, ApiError, NetworkError, type PatchPage } from "./api.js";
import * as st from "./state.js";
import type { UiState } from "./state.js";

export class UiController {
  state: UiState = st.initialState();
  onChange: (state: UiState) => void = () => {};

  constructor(private client: ApiClient) {}

  private update(next: UiState): void {
    this.state = next;
    this.onChange(next);
  }

  async refresh(): Promise<void> {
    try {
      const clusters = await this.client.listClusters();
      this.update(st.applyClusters(this.state, clusters));
    } catch (err) {
      this.update(st.setBanner(this.state, describeFailure(err)));
    }
  }

  toggle(clusterId: number): void {
    this.update(st.toggleSelection(this.state, clusterId));
  }

  canMerge(): boolean {
    return st.canMerge(this.state);
  }

  async submitMerge(): Promise<void> {
    if (!st.canMerge(this.state)) {
      return;
    }
    const ids = [...this.state.selection];
    await this.mutate(
      () => this.client.merge(ids),
      () => st.clearSelection(this.state),
    );
  }

  async submitUndo(): Promise<void> {
    if (this.state.pending) {
      return;
    }
    await this.mutate(() => this.client.undo());
  }

  async submitExport(): Promise<string | null> {
    if (this.state.pending) {
      return null;
    }
    let path: string | null = null;
    await this.mutate(async () => {
      const result = await this.client.exportStore();
      path = result.path;
      return result;
    });
    return path;
  }

  /** Shared mutation path: mark pending, issue exactly one request, then
   * re-fetch the gallery on success (no optimistic state). */
  private async mutate(
    request: () => Promise<unknown>,
    onSuccess?: () => UiState,
  ): Promise<void> {
    this.update(st.beginRequest(this.state));
    try {
      await request();
      if (onSuccess) {
        this.update(onSuccess());
      }
      const clusters = await this.client.listClusters();
      this.update(st.applyClusters(this.state, clusters));
    } catch (err) {
      if (err instanceof ApiError) {
        this.update(st.setToast(this.state, err.message)); // selection kept
      } else {
        this.update(st.setBanner(this.state, describeFailure(err)));
      }
    } finally {
      this.update(st.endRequest(this.state));
    }
  }

  async drillIn(clusterId: number, page = 0): Promise<PatchPage | null> {
    try {
      const result = await this.client.getPatches(clusterId, page, 50);
      this.update(st.showDrill(this.state, clusterId, page));
      return result;
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.update(st.setToast(st.showGallery(this.state), "cluster no longer exists"));
        return null;
      }
      this.update(st.setBanner(this.state, describeFailure(err)));
      return null;
    }
  }

  backToGallery(): void {
    this.update(st.showGallery(this.state));
  }
}

function describeFailure(err: unknown): string {
  if (err instanceof NetworkError) {
    return "annotation service unreachable; check the server and reload";
  }
  return `unexpected error: ${String(err)}`;
}
