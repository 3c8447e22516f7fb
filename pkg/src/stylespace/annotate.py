"""HTTP service that serves unlabeled triplets to human annotators and
persists their style-similarity choices.

State model: one triplet per anchor, issued to at most one session at a
time under a lease (default 10 minutes).  Expired leases are reissued with
a fresh task id; the stale id then answers 410.  Labels append to the data
module's label file, one whole JSON line per record, serialized through a
single lock so concurrent submissions never interleave bytes.  A duplicate
submission that exactly matches the stored record is acknowledged without
writing a second line.

Endpoints (default port 8377):
    GET  /api/task      200 {"task_id","anchor","left","right"} | 204 done
    POST /api/label     {"task_id","choice":"left"|"right","annotator"}
                        -> 201 stored record | 400 | 410
    GET  /api/progress  200 {"labeled","total"}
    GET  /images/{id}   200 image/png | 404
    GET  /              static annotation UI assets
Errors carry {"error": string}.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from dataclasses import asdict, dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .data import DatasetManifest, TripletLabel, UnlabeledTriplet, append_label, load_labels
from .errors import ContractError

log = logging.getLogger("stylespace.annotate")

DEFAULT_PORT = 8377
DEFAULT_LEASE_SECONDS = 600.0
STATIC_DIR = Path(__file__).parent / "static" / "annotate"

_CONTENT_TYPES = {".html": "text/html; charset=utf-8", ".js": "text/javascript; charset=utf-8",
                  ".css": "text/css; charset=utf-8", ".png": "image/png", ".svg": "image/svg+xml"}


class TaskGone(Exception):
    """Unknown, expired, or conflictingly resubmitted task id."""


class BadChoice(Exception):
    """Submission payload is malformed."""


@dataclass
class AnnotationTask:
    task_id: str
    anchor_id: str
    left_id: str
    right_id: str
    issued_at: float


class AnnotationService:
    """Triplet queue, lease bookkeeping, and label persistence."""

    def __init__(
        self,
        manifest: DatasetManifest,
        triplets: list[UnlabeledTriplet],
        label_path,
        seed: int = 0,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        clock=time.time,
    ):
        if not triplets:
            raise ContractError("annotation service needs a non-empty triplet queue")
        known = set(manifest.ids())
        for t in triplets:
            ids = {t.anchor, t.option_a, t.option_b}
            if len(ids) != 3 or not ids <= known:
                raise ContractError(f"triplet {t} references ids outside the manifest")
        anchors = [t.anchor for t in triplets]
        if len(set(anchors)) != len(anchors):
            raise ContractError("each anchor may appear in exactly one triplet")

        self._manifest = manifest
        self._records = manifest.by_id()
        self._queue = list(triplets)
        self._label_path = Path(label_path)
        self._lease = float(lease_seconds)
        self._clock = clock
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self._counter = 0
        self._issued: dict[str, AnnotationTask] = {}
        self._issued_by_anchor: dict[str, str] = {}
        # completed task id -> (choice, annotator, stored label)
        self._completed: dict[str, tuple[str, str, TripletLabel]] = {}

        self._labeled_anchors: set[str] = set()
        if self._label_path.exists():
            for lab in load_labels(self._label_path, manifest=manifest):
                self._labeled_anchors.add(lab.anchor)

    def next_task(self) -> AnnotationTask | None:
        """First unlabeled triplet not currently leased; None when exhausted."""
        with self._lock:
            now = self._clock()
            for triplet in self._queue:
                anchor = triplet.anchor
                if anchor in self._labeled_anchors:
                    continue
                held = self._issued_by_anchor.get(anchor)
                if held is not None:
                    if now - self._issued[held].issued_at < self._lease:
                        continue
                    del self._issued[held]
                    del self._issued_by_anchor[anchor]
                self._counter += 1
                task_id = f"task-{self._counter:06d}"
                options = [triplet.option_a, triplet.option_b]
                self._rng.shuffle(options)
                task = AnnotationTask(task_id, anchor, options[0], options[1], now)
                self._issued[task_id] = task
                self._issued_by_anchor[anchor] = task_id
                return task
            return None

    def submit_label(self, task_id: str, choice: str, annotator: str) -> TripletLabel:
        if choice not in ("left", "right"):
            raise BadChoice(f"choice must be 'left' or 'right', got {choice!r}")
        if not isinstance(annotator, str) or not annotator.strip():
            raise BadChoice("annotator must be a non-empty string")
        with self._lock:
            task = self._issued.get(task_id)
            if task is None:
                prior = self._completed.get(task_id)
                if prior is not None and prior[0] == choice and prior[1] == annotator:
                    return prior[2]  # idempotent duplicate: single stored record
                raise TaskGone(f"task {task_id!r} is unknown or expired")
            if self._clock() - task.issued_at >= self._lease:
                del self._issued[task_id]
                del self._issued_by_anchor[task.anchor_id]
                raise TaskGone(f"task {task_id!r} lease expired")

            positive = task.left_id if choice == "left" else task.right_id
            negative = task.right_id if choice == "left" else task.left_id
            label = TripletLabel(anchor=task.anchor_id, positive=positive, negative=negative,
                                 annotator=annotator, labeled_at=int(self._clock()))
            append_label(label, self._label_path)
            self._labeled_anchors.add(task.anchor_id)
            self._completed[task_id] = (choice, annotator, label)
            del self._issued[task_id]
            del self._issued_by_anchor[task.anchor_id]
            return label

    def progress(self) -> dict:
        with self._lock:
            return {"labeled": len(self._labeled_anchors), "total": len(self._queue)}

    def image_path(self, image_id: str) -> Path | None:
        rec = self._records.get(image_id)
        if rec is None:
            return None
        path = self._manifest.resolve_path(rec)
        return path if path.exists() else None


# ---------------------------------------------------------------------------
# HTTP layer


def _make_handler(service: AnnotationService | None, static_dir: Path):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

        def _send_json(self, status: int, payload: dict | None) -> None:
            body = b"" if payload is None else json.dumps(payload).encode("utf-8")
            self.send_response(status)
            if body:
                self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            if body:
                self.wfile.write(body)

        def _send_error_json(self, status: int, message: str) -> None:
            self._send_json(status, {"error": message})

        def _send_file(self, path: Path) -> None:
            body = path.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type",
                             _CONTENT_TYPES.get(path.suffix, "application/octet-stream"))
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            path = self.path.split("?", 1)[0]
            if path.startswith("/api/"):
                if service is None:
                    self._send_error_json(409, "no corpus loaded")
                    return
                if path == "/api/task":
                    task = service.next_task()
                    if task is None:
                        self._send_json(204, None)
                    else:
                        self._send_json(200, {"task_id": task.task_id, "anchor": task.anchor_id,
                                              "left": task.left_id, "right": task.right_id})
                elif path == "/api/progress":
                    self._send_json(200, service.progress())
                else:
                    self._send_error_json(404, f"unknown endpoint {path}")
                return
            if path.startswith("/images/"):
                if service is None:
                    self._send_error_json(409, "no corpus loaded")
                    return
                image_id = path[len("/images/"):]
                file_path = service.image_path(image_id)
                if file_path is None:
                    self._send_error_json(404, f"no image {image_id!r}")
                else:
                    self._send_file(file_path)
                return
            # static assets
            name = "index.html" if path in ("/", "") else path.lstrip("/")
            asset = (static_dir / name).resolve()
            if not str(asset).startswith(str(static_dir.resolve())) or not asset.is_file():
                self._send_error_json(404, f"no asset {path}")
                return
            self._send_file(asset)

        def do_POST(self):
            path = self.path.split("?", 1)[0]
            if path != "/api/label":
                self._send_error_json(404, f"unknown endpoint {path}")
                return
            if service is None:
                self._send_error_json(409, "no corpus loaded")
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
                task_id = payload["task_id"]
                choice = payload["choice"]
                annotator = payload.get("annotator", "")
            except (ValueError, KeyError, json.JSONDecodeError):
                self._send_error_json(400, "body must be JSON with task_id, choice, annotator")
                return
            try:
                label = service.submit_label(task_id, choice, annotator)
            except BadChoice as e:
                self._send_error_json(400, str(e))
                return
            except TaskGone as e:
                self._send_error_json(410, str(e))
                return
            self._send_json(201, asdict(label))

    return Handler


def make_server(
    service: AnnotationService | None,
    port: int = DEFAULT_PORT,
    host: str = "127.0.0.1",
    static_dir: Path | None = None,
) -> ThreadingHTTPServer:
    handler = _make_handler(service, static_dir or STATIC_DIR)
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(server: ThreadingHTTPServer) -> None:
    host, port = server.server_address[:2]
    log.info("annotation service listening on http://%s:%s/", host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
