/**
 * Triplet annotation UI.
 *
 * Shows the anchor image above two candidates; the annotator clicks a
 * candidate (or presses ArrowLeft / ArrowRight, or tabs to a button and
 * presses Enter) to mark which one is stylistically closer to the anchor.
 * The service is the single source of truth: this client only ever posts
 * {task_id, choice, annotator} and re-fetches.
 *
 * State machine: loading -> task -> submitting -> (task | done | error),
 * with a single in-flight request at any time.
 */

export type UiState = "loading" | "task" | "submitting" | "done" | "error";

export interface UiTask {
  task_id: string;
  anchor: string;
  left: string;
  right: string;
}

export interface Progress {
  labeled: number;
  total: number;
}

export interface AppOptions {
  baseUrl?: string;
  fetchFn?: typeof fetch;
  storage?: Pick<Storage, "getItem" | "setItem">;
  promptFn?: (message: string) => string | null;
  doc?: Document;
}

const ANNOTATOR_KEY = "stylespace.annotator";

export class AnnotationApp {
  state: UiState = "loading";
  task: UiTask | null = null;
  progress: Progress = { labeled: 0, total: 0 };
  toast = "";
  errorMessage = "";
  annotator = "anonymous";

  private root: Element;
  private base: string;
  private fetchFn: typeof fetch;
  private storage: Pick<Storage, "getItem" | "setItem"> | null;
  private promptFn: (message: string) => string | null;
  private doc: Document;

  constructor(root: Element, opts: AppOptions = {}) {
    this.root = root;
    this.base = opts.baseUrl ?? "";
    this.fetchFn = opts.fetchFn ?? fetch.bind(globalThis);
    this.storage = opts.storage ?? null;
    this.promptFn = opts.promptFn ?? (() => null);
    this.doc = opts.doc ?? root.ownerDocument;
  }

  /** Resolve the annotator name once per session and fetch the first task. */
  async start(): Promise<void> {
    const stored = this.storage?.getItem(ANNOTATOR_KEY);
    if (stored) {
      this.annotator = stored;
    } else {
      const entered = this.promptFn("Your name (stored with each label):");
      if (entered && entered.trim()) {
        this.annotator = entered.trim();
        this.storage?.setItem(ANNOTATOR_KEY, this.annotator);
      }
    }
    this.doc.addEventListener("keydown", (event) => this.handleKey(event as KeyboardEvent));
    await this.fetchAndRender();
  }

  /** GET the next task (or the done screen); network failures show a retry banner. */
  async fetchAndRender(): Promise<void> {
    this.state = "loading";
    this.task = null;
    this.render();
    try {
      const progressResp = await this.fetchFn(`${this.base}/api/progress`);
      if (progressResp.ok) {
        this.progress = (await progressResp.json()) as Progress;
      }
      const resp = await this.fetchFn(`${this.base}/api/task`);
      if (resp.status === 204) {
        this.state = "done";
      } else if (resp.ok) {
        this.task = (await resp.json()) as UiTask;
        this.state = "task";
      } else {
        this.state = "error";
        this.errorMessage = `service answered ${resp.status}`;
      }
    } catch (err) {
      this.state = "error";
      this.errorMessage = `network failure: ${String(err)}`;
    }
    this.render();
  }

  /** POST the choice; duplicate triggers while in flight are ignored. */
  async submitChoice(side: "left" | "right"): Promise<void> {
    if (this.state !== "task" || this.task === null) {
      return;
    }
    const task = this.task;
    this.state = "submitting";
    this.render();
    try {
      const resp = await this.fetchFn(`${this.base}/api/label`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ task_id: task.task_id, choice: side, annotator: this.annotator }),
      });
      if (resp.status === 201) {
        this.toast = "";
      } else if (resp.status === 410) {
        this.toast = "task expired, fetching a fresh one";
      } else {
        this.state = "error";
        this.errorMessage = `label rejected with status ${resp.status}`;
        this.render();
        return;
      }
    } catch (err) {
      this.state = "error";
      this.errorMessage = `network failure: ${String(err)}`;
      this.render();
      return;
    }
    await this.fetchAndRender();
  }

  handleKey(event: KeyboardEvent): void {
    if (event.key === "ArrowLeft") {
      event.preventDefault();
      void this.submitChoice("left");
    } else if (event.key === "ArrowRight") {
      event.preventDefault();
      void this.submitChoice("right");
    }
  }

  imageUrl(id: string): string {
    return `${this.base}/images/${id}`;
  }

  render(): void {
    if (this.state === "loading" || this.state === "submitting") {
      this.root.innerHTML = `<p class="status" data-state="${this.state}">…</p>`;
      return;
    }
    if (this.state === "done") {
      this.root.innerHTML = `
        <div class="done" data-state="done">
          <h1>All triplets labeled</h1>
          <p>${this.progress.labeled} of ${this.progress.total} — thank you.</p>
        </div>`;
      return;
    }
    if (this.state === "error") {
      this.root.innerHTML = `
        <div class="error-banner" data-state="error">
          <p>${escapeHtml(this.errorMessage)}</p>
          <button id="retry">Retry</button>
        </div>`;
      this.root.querySelector("#retry")?.addEventListener("click", () => {
        void this.fetchAndRender();
      });
      return;
    }

    const task = this.task as UiTask;
    const fraction = this.progress.total > 0 ? this.progress.labeled / this.progress.total : 0;
    const percent = (100 * fraction).toFixed(1);
    this.root.innerHTML = `
      <div class="annotate" data-state="task" data-task-id="${task.task_id}">
        <div class="progress" role="progressbar" aria-valuenow="${this.progress.labeled}"
             aria-valuemax="${this.progress.total}">
          <div class="progress-fill" style="width: ${percent}%"></div>
          <span class="progress-text">${this.progress.labeled} / ${this.progress.total}</span>
        </div>
        ${this.toast ? `<p class="toast">${escapeHtml(this.toast)}</p>` : ""}
        <p class="question">Which candidate is closer in style to the anchor?</p>
        <figure class="anchor">
          <img src="${this.imageUrl(task.anchor)}" alt="anchor portrait">
          <figcaption>anchor</figcaption>
        </figure>
        <div class="candidates">
          <button id="choose-left" class="candidate" aria-keyshortcuts="ArrowLeft">
            <img src="${this.imageUrl(task.left)}" alt="left candidate">
            <span>← left</span>
          </button>
          <button id="choose-right" class="candidate" aria-keyshortcuts="ArrowRight">
            <img src="${this.imageUrl(task.right)}" alt="right candidate">
            <span>right →</span>
          </button>
        </div>
      </div>`;
    this.root.querySelector("#choose-left")?.addEventListener("click", () => {
      void this.submitChoice("left");
    });
    this.root.querySelector("#choose-right")?.addEventListener("click", () => {
      void this.submitChoice("right");
    });
  }
}

function escapeHtml(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function createApp(root: Element, opts: AppOptions = {}): AnnotationApp {
  return new AnnotationApp(root, opts);
}

// Browser bootstrap: only when served as a page (tests construct apps themselves).
declare const document: Document | undefined;
if (typeof document !== "undefined" && document?.getElementById("app")) {
  const root = document.getElementById("app") as Element;
  const app = createApp(root, {
    storage: window.localStorage,
    promptFn: (message) => window.prompt(message),
    doc: document,
  });
  void app.start();
}
