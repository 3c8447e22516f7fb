/** UI flow against the real annotation service over HTTP.
 *
 * Spawns the Python service on a synthetic corpus, then drives the actual
 * UI module with keyboard events only (double presses included) and checks
 * the service-side progress and the POST count.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { Window } from "happy-dom";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { createApp } from "../src/app";

const BOOTSTRAP = `
import sys, threading
from pathlib import Path
from stylespace import annotate, data

out = Path(sys.argv[1])
manifest, params = data.gen_synthetic(24, 3, seed=21, out_dir=out)
triplets = data.make_triplets(manifest, seed=21)
service = annotate.AnnotationService(manifest, triplets, out / "labels.jsonl", seed=21)
server = annotate.make_server(service, port=0)
print(f"PORT={server.server_address[1]}", flush=True)
server.serve_forever()
`;

let proc: ChildProcess;
let base = "";

beforeAll(async () => {
  const workdir = mkdtempSync(join(tmpdir(), "annotate-ui-"));
  proc = spawn("python3", ["-u", "-c", BOOTSTRAP, workdir], {
    cwd: join(__dirname, "..", ".."),
    stdio: ["ignore", "pipe", "pipe"],
  });
  base = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("service did not start")), 30000);
    proc.stdout?.on("data", (chunk: Buffer) => {
      const match = /PORT=(\d+)/.exec(chunk.toString());
      if (match) {
        clearTimeout(timer);
        resolve(`http://127.0.0.1:${match[1]}`);
      }
    });
    proc.stderr?.on("data", (chunk: Buffer) => process.stderr.write(chunk));
    proc.on("exit", (code) => reject(new Error(`service exited early (${code})`)));
  });
});

afterAll(() => {
  proc?.kill();
});

async function waitFor(predicate: () => boolean, what: string, ms = 10000): Promise<void> {
  const deadline = Date.now() + ms;
  while (!predicate()) {
    if (Date.now() > deadline) {
      throw new Error(`timed out waiting for ${what}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 10));
  }
}

describe("ui against the live service", () => {
  it("labels 10 triplets with keyboard only, one POST each", async () => {
    let postCount = 0;
    const countingFetch = (async (url: RequestInfo | URL, init?: RequestInit) => {
      if (init?.method === "POST") {
        postCount += 1;
      }
      return fetch(url, init);
    }) as typeof fetch;

    const win = new Window();
    const doc = win.document;
    doc.body.innerHTML = `<main id="app"></main>`;
    const root = doc.getElementById("app") as unknown as Element;
    const app = createApp(root, {
      baseUrl: base,
      fetchFn: countingFetch,
      doc: doc as unknown as Document,
      storage: { getItem: () => "keyboard-only", setItem: () => undefined },
    });
    await app.start();
    await waitFor(() => app.state === "task", "first task");

    for (let i = 0; i < 10; i++) {
      const key = i % 2 === 0 ? "ArrowLeft" : "ArrowRight";
      const before = app.task?.task_id;
      // double key press: the second must be swallowed by the state machine
      doc.dispatchEvent(new win.KeyboardEvent("keydown", { key }));
      doc.dispatchEvent(new win.KeyboardEvent("keydown", { key }));
      await waitFor(
        () => app.state === "task" && app.task?.task_id !== before,
        `task ${i + 1} resolved`,
      );
    }

    expect(postCount).toBe(10);
    const progress = (await (await fetch(`${base}/api/progress`)).json()) as {
      labeled: number;
      total: number;
    };
    expect(progress).toEqual({ labeled: 10, total: 24 });

    // the rendered progress bar mirrors the service's counts
    expect(app.progress.labeled).toBe(10);
    const fill = root.querySelector(".progress-fill") as HTMLElement;
    expect(fill.style.width).toBe(`${((10 / 24) * 100).toFixed(1)}%`);
  });
});
