#!/usr/bin/env python3
"""Run the triplet-annotation service and label a few tasks over HTTP.

A human would use the browser UI at the printed URL (anchor on top, two
candidates below, arrow keys to choose); here a scripted client plays the
annotator for three tasks, then the service is shut down.
"""

import json
import threading
import urllib.request
from pathlib import Path

from stylespace import annotate, data

out = Path("demo_output/annotate")
out.mkdir(parents=True, exist_ok=True)

manifest, params = data.gen_synthetic(n_images=12, n_style_classes=3, seed=9, out_dir=out)
triplets = data.make_triplets(manifest, seed=9)
service = annotate.AnnotationService(manifest, triplets, out / "labels.jsonl", seed=9)
server = annotate.make_server(service, port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{server.server_address[1]}"
print(f"annotation service at {base}/ (queue of {len(triplets)} triplets)")


def get(path):
    with urllib.request.urlopen(base + path) as r:
        return r.status, json.loads(r.read() or b"null")


def post(path, payload):
    req = urllib.request.Request(base + path, data=json.dumps(payload).encode(),
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as r:
        return r.status, json.loads(r.read())


for _ in range(3):
    status, task = get("/api/task")
    print(f"task {task['task_id']}: anchor {task['anchor']}, "
          f"left {task['left']} vs right {task['right']}")
    status, label = post("/api/label", {"task_id": task["task_id"], "choice": "left",
                                        "annotator": "demo"})
    print(f"  stored: positive={label['positive']} negative={label['negative']}")

print("progress:", get("/api/progress")[1])
print(f"labels persisted to {out / 'labels.jsonl'} (data-module format)")
loaded = data.load_labels(out / "labels.jsonl", manifest=manifest)
print(f"reloaded {len(loaded)} labels through the data module")
server.shutdown()
server.server_close()
