/** UI state and its pure transitions. Every view is a function of the last
 * server snapshot plus local selection; nothing here mutates the partition. */

import type { ClusterSummary } from "./api.js";

export type View =
  | { kind: "gallery" }
  | { kind: "drill"; clusterId: number; page: number };

export interface UiState {
  clusters: ClusterSummary[];
  selection: number[];   // ordered, unique cluster ids
  pending: boolean;      // a mutation is in flight
  banner: string | null; // connectivity failure banner
  toast: string | null;  // last rejected-request message
  view: View;
}

export function initialState(): UiState {
  return {
    clusters: [],
    selection: [],
    pending: false,
    banner: null,
    toast: null,
    view: { kind: "gallery" },
  };
}

export function toggleSelection(state: UiState, clusterId: number): UiState {
  const selection = state.selection.includes(clusterId)
    ? state.selection.filter((id) => id !== clusterId)
    : [...state.selection, clusterId];
  return { ...state, selection };
}

export function clearSelection(state: UiState): UiState {
  return { ...state, selection: [] };
}

/** Merge is allowed only for 2+ selected clusters with no request running. */
export function canMerge(state: UiState): boolean {
  return state.selection.length >= 2 && !state.pending;
}

export function beginRequest(state: UiState): UiState {
  return { ...state, pending: true, toast: null };
}

export function endRequest(state: UiState): UiState {
  return { ...state, pending: false };
}

/** A fresh server snapshot replaces the gallery; selection survives only
 * for clusters that still exist. */
export function applyClusters(state: UiState, clusters: ClusterSummary[]): UiState {
  const alive = new Set(clusters.map((c) => c.cluster_id));
  return {
    ...state,
    clusters,
    selection: state.selection.filter((id) => alive.has(id)),
    banner: null,
  };
}

export function setBanner(state: UiState, message: string): UiState {
  return { ...state, banner: message };
}

export function setToast(state: UiState, message: string | null): UiState {
  return { ...state, toast: message };
}

export function showGallery(state: UiState): UiState {
  return { ...state, view: { kind: "gallery" } };
}

export function showDrill(state: UiState, clusterId: number, page = 0): UiState {
  return { ...state, view: { kind: "drill", clusterId, page } };
}
