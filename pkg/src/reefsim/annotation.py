"""HTTP service for the weak-supervision merge session.

Serves cluster summaries and patch galleries to the browser UI, and applies
merge/undo/export against the cluster store. All mutations go through one
lock and persist immediately, so reads always see the latest partition.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import clustering
from .clustering import ClusterStore
from .errors import NotFoundError, ParameterError

MAX_PAGE_SIZE = 200
THUMBNAILS = 9


class MergeRequest(BaseModel):
    ids: list[int]


def create_app(store_dir: str | Path, patch_root: str | Path | None = None,
               ui_dir: str | Path | None = None) -> FastAPI:
    """App over an existing cluster store; raises if the store is unusable."""
    store = ClusterStore(store_dir)
    cs = store.load()
    if not cs.seq_order:
        raise NotFoundError(f"cluster store at {store_dir} is empty")
    if patch_root is None:
        patch_root = cs.meta.get("patch_root", str(Path(store_dir).parent))

    app = FastAPI(title="reefsim annotation")
    app.state.store = store
    app.state.cs = cs
    app.state.lock = threading.Lock()

    def snapshot() -> dict:
        current = app.state.cs
        return {
            "clusters": {str(cid): sorted(seqs) for cid, seqs in sorted(current.clusters.items())},
            "lineage_length": len(current.lineage),
        }

    @app.get("/clusters")
    def list_clusters():
        current = app.state.cs
        out = []
        for cid in sorted(current.clusters):
            members = current.members(cid)
            out.append({
                "cluster_id": cid,
                "member_count": len(members),
                "sequence_count": len(current.clusters[cid]),
                "thumbnails": [m["path"] for m in members[:THUMBNAILS]],
            })
        return out

    @app.get("/clusters/{cluster_id}/patches")
    def get_cluster_patches(cluster_id: int, page: int = 0, page_size: int = 50):
        if page_size < 1 or page_size > MAX_PAGE_SIZE:
            raise HTTPException(422, f"page_size must be in [1, {MAX_PAGE_SIZE}]")
        if page < 0:
            raise HTTPException(422, "page must be >= 0")
        current = app.state.cs
        try:
            members = current.members(cluster_id)
        except NotFoundError as exc:
            raise HTTPException(404, str(exc))
        start = page * page_size
        return {
            "cluster_id": cluster_id,
            "page": page,
            "page_size": page_size,
            "total": len(members),
            "items": members[start:start + page_size],
        }

    @app.post("/merge")
    def post_merge(req: MergeRequest):
        with app.state.lock:
            try:
                clustering.merge(app.state.cs, req.ids, clustering.HUMAN)
            except NotFoundError as exc:
                raise HTTPException(404, str(exc))
            except ParameterError as exc:
                raise HTTPException(400, str(exc))
            app.state.store.save(app.state.cs)
            return snapshot()

    @app.post("/undo")
    def post_undo():
        with app.state.lock:
            rebuilt, applied = clustering.undo(app.state.cs)
            if applied:
                app.state.cs = rebuilt
                app.state.store.save(app.state.cs)
            body = snapshot()
            body["status"] = "ok" if applied else "nothing to undo"
            body["undone"] = applied
            return body

    @app.post("/export")
    def post_export():
        with app.state.lock:
            export_dir = store.root / "export"
            ClusterStore(export_dir).save(app.state.cs)
            return {
                "path": str(export_dir),
                "snapshot": str(export_dir / ClusterStore.SNAPSHOT),
                "lineage": str(export_dir / ClusterStore.LINEAGE),
            }

    # patch record paths are relative to the extract root; the UI requests
    # them as /files/<record.path>
    patch_root = Path(patch_root)
    if patch_root.exists():
        app.mount("/files", StaticFiles(directory=patch_root), name="files")

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(store_dir: str | Path, port: int = 8008, patch_root=None, ui_dir=None) -> None:
    import uvicorn

    app = create_app(store_dir, patch_root, ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
