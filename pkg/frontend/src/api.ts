/** Typed client for the annotation service. One request per call, no
 * retries: failed mutations surface to the caller so the UI can decide. */

export interface ClusterSummary {
  cluster_id: number;
  member_count: number;
  sequence_count: number;
  thumbnails: string[];
}

export interface PatchRecord {
  seq_id: string;
  frame_index: number;
  path: string;
}

export interface PatchPage {
  cluster_id: number;
  page: number;
  page_size: number;
  total: number;
  items: PatchRecord[];
}

export interface Snapshot {
  clusters: Record<string, string[]>;
  lineage_length: number;
  status?: string;
  undone?: boolean;
}

export interface ExportResult {
  path: string;
  snapshot: string;
  lineage: string;
}

/** Non-2xx response; carries the server's message for the toast. */
export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** Fetch itself failed: service down or unreachable. */
export class NetworkError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "NetworkError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new NetworkError(`service unreachable: ${String(err)}`);
    }
    if (!resp.ok) {
      let detail = `${resp.status}`;
      try {
        const body = await resp.json();
        detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body);
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  listClusters(): Promise<ClusterSummary[]> {
    return this.request<ClusterSummary[]>("/clusters");
  }

  getPatches(clusterId: number, page: number, pageSize: number): Promise<PatchPage> {
    return this.request<PatchPage>(
      `/clusters/${clusterId}/patches?page=${page}&page_size=${pageSize}`,
    );
  }

  merge(ids: number[]): Promise<Snapshot> {
    return this.request<Snapshot>("/merge", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ ids }),
    });
  }

  undo(): Promise<Snapshot> {
    return this.request<Snapshot>("/undo", { method: "POST" });
  }

  exportStore(): Promise<ExportResult> {
    return this.request<ExportResult>("/export", { method: "POST" });
  }

  /** Patch images are served relative to the extract root. */
  fileUrl(path: string): string {
    return `${this.baseUrl}/files/${path}`;
  }
}
