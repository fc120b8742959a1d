/** DOM layer: session list, token tagging board, metrics and diagnostics.
 *
 * Tagging is keyboard-first: digit keys pick an entity class for the active
 * token (or drag-selected span), `o` tags outside, `s` confirms the model
 * suggestion, arrows move the cursor. All interaction is local; the server
 * is only hit on submit.
 */

import {
  AnnotationApi,
  batchIdempotencyKey,
  type CurvePoint,
  type DiagnosticsResponse,
  type QueryBatch,
  type SessionView,
} from "./api.js";
import { BatchDraft } from "./state.js";

const CLUSTER_COLORS = [
  "#4c78a8", "#f58518", "#54a24b", "#b279a2", "#e45756",
  "#72b7b2", "#eeca3b", "#ff9da6", "#9d755d",
];

export class AnnotatorApp {
  private root: HTMLElement;
  private api: AnnotationApi;
  private session: SessionView | null = null;
  private draft: BatchDraft | null = null;
  private batch: QueryBatch | null = null;
  private cursor: { sentence: number; position: number } | null = null;
  private dragAnchor: { sentence: number; position: number } | null = null;
  private statusLine = "";

  constructor(root: HTMLElement, api: AnnotationApi) {
    this.root = root;
    this.api = api;
    document.addEventListener("keydown", (ev) => this.onKey(ev));
  }

  async start(): Promise<void> {
    await this.renderSessionList();
  }

  private setStatus(text: string): void {
    this.statusLine = text;
    const el = this.root.querySelector("#status");
    if (el) el.textContent = text;
  }

  // ------------------------------------------------------------ session list

  private async renderSessionList(): Promise<void> {
    let sessions: SessionView[] = [];
    let offline = false;
    try {
      sessions = await this.api.listSessions();
    } catch {
      offline = true;
    }
    this.root.innerHTML = `
      <h1>Sequence labeling sessions</h1>
      ${offline ? '<div class="banner error">Service unreachable — retry below.</div>' : ""}
      <div id="sessions"></div>
      <div class="row">
        <button id="new-session">New session</button>
        <button id="refresh">Refresh</button>
      </div>
      <div id="status">${this.statusLine}</div>`;
    const list = this.root.querySelector("#sessions")!;
    for (const s of sessions) {
      const item = document.createElement("div");
      item.className = "session-item";
      const f1 = s.latest_metrics ? s.latest_metrics.f1.toFixed(3) : "–";
      item.innerHTML = `<code>${s.session_id}</code> iter ${s.iteration} · ${s.status}
        · ${s.cost.sentences} sents / ${s.cost.tokens} tokens · F1 ${f1}
        <button data-id="${s.session_id}">open</button>`;
      item.querySelector("button")!.addEventListener("click", () =>
        this.openSession(s.session_id),
      );
      list.appendChild(item);
    }
    this.root.querySelector("#refresh")!.addEventListener("click", () =>
      this.renderSessionList(),
    );
    this.root.querySelector("#new-session")!.addEventListener("click", async () => {
      try {
        const created = await this.api.createSession("default");
        await this.openSession(created.session_id);
      } catch (err) {
        this.setStatus(`could not create session: ${err}`);
      }
    });
  }

  // --------------------------------------------------------------- labeling

  async openSession(sessionId: string): Promise<void> {
    this.session = await this.api.getSession(sessionId);
    await this.refreshQuery();
  }

  private async refreshQuery(): Promise<void> {
    if (!this.session) return;
    const sid = this.session.session_id;
    this.session = await this.api.getSession(sid);
    this.batch = await this.api.getQuery(sid);
    if (this.batch.status === "awaiting_annotation") {
      this.draft = new BatchDraft(this.session.label_scheme, this.batch.batch);
      const first = this.batch.batch[0];
      this.cursor = first
        ? { sentence: first.sentence_id, position: 0 }
        : null;
    } else {
      this.draft = null;
      this.cursor = null;
    }
    this.renderSession();
    if (this.batch.status === "training") {
      setTimeout(() => this.refreshQuery(), 600);
    }
  }

  private renderSession(): void {
    if (!this.session || !this.batch) return;
    const s = this.session;
    const classes = this.draft ? this.draft.entityClasses : [];
    const hotkeys = classes
      .map((c, i) => `<span class="hotkey">${i + 1}=${c}</span>`)
      .join(" ");
    this.root.innerHTML = `
      <div class="row">
        <button id="back">← sessions</button>
        <h2>${s.session_id}</h2>
      </div>
      <div class="row meta">
        status <b id="session-status">${this.batch.status}</b>
        · iteration ${s.iteration}
        · cost ${s.cost.sentences} sentences / ${s.cost.tokens} tokens
      </div>
      <div class="row hotkeys">${hotkeys}
        <span class="hotkey">o=outside</span>
        <span class="hotkey">s=confirm suggestion</span>
        <span class="hotkey">drag=span</span>
      </div>
      <div id="board"></div>
      <div class="row">
        <button id="confirm-all" ${this.draft ? "" : "disabled"}>Confirm all suggestions</button>
        <button id="submit" disabled>Submit batch</button>
        <span id="remaining"></span>
      </div>
      <div id="metrics-panel"></div>
      <div id="diagnostics-panel"></div>
      <div id="status">${this.statusLine}</div>`;
    this.root.querySelector("#back")!.addEventListener("click", () =>
      this.renderSessionList(),
    );
    this.root.querySelector("#confirm-all")!.addEventListener("click", () => {
      if (!this.draft) return;
      for (const item of this.batch!.batch) {
        if (item.suggested_tags) this.draft.confirmAllSuggestions(item.sentence_id);
      }
      this.repaintAllTokens();
    });
    this.root.querySelector("#submit")!.addEventListener("click", () => this.submit());
    this.renderBoard();
    void this.renderMetrics();
    void this.renderDiagnostics();
    this.updateSubmitState();
  }

  private renderBoard(): void {
    const board = this.root.querySelector("#board")!;
    board.innerHTML = "";
    if (!this.batch || this.batch.status !== "awaiting_annotation") {
      board.innerHTML = `<div class="banner">${
        this.batch?.status === "training"
          ? "Retraining on the freshly labeled batch…"
          : "Session completed — no pending batch."
      }</div>`;
      return;
    }
    for (const item of this.batch.batch) {
      const row = document.createElement("div");
      row.className = "sentence";
      row.dataset.sentence = String(item.sentence_id);
      const header = document.createElement("div");
      header.className = "sentence-header";
      header.textContent = `#${item.sentence_id} (${item.tokens.length} tokens)`;
      row.appendChild(header);
      const tokens = document.createElement("div");
      tokens.className = "tokens";
      item.tokens.forEach((tok, i) => {
        const chip = document.createElement("span");
        chip.className = "token";
        chip.dataset.sentence = String(item.sentence_id);
        chip.dataset.position = String(i);
        chip.addEventListener("mousedown", () => {
          this.cursor = { sentence: item.sentence_id, position: i };
          this.dragAnchor = this.cursor;
          this.repaintAllTokens();
        });
        chip.addEventListener("mouseenter", (ev) => {
          if (this.dragAnchor && (ev as MouseEvent).buttons === 1
              && this.dragAnchor.sentence === item.sentence_id) {
            this.cursor = { sentence: item.sentence_id, position: i };
            this.repaintAllTokens();
          }
        });
        tokens.appendChild(chip);
      });
      row.appendChild(tokens);
      board.appendChild(row);
    }
    document.addEventListener("mouseup", () => {
      // Drag selections persist via cursor+anchor until the next action.
    });
    this.repaintAllTokens();
  }

  private repaintAllTokens(): void {
    if (!this.draft || !this.batch) return;
    for (const chip of this.root.querySelectorAll<HTMLElement>(".token")) {
      const sid = Number(chip.dataset.sentence);
      const pos = Number(chip.dataset.position);
      const draft = this.draft.sentences.get(sid)!;
      const confirmed = draft.tags[pos];
      const suggestion = draft.suggestions ? draft.suggestions[pos] : null;
      const shown = confirmed ?? suggestion ?? "·";
      chip.textContent = `${draft.surfaces[pos]} [${shown}]`;
      chip.classList.toggle("confirmed", confirmed !== null);
      chip.classList.toggle("suggested", confirmed === null && suggestion !== null);
      chip.classList.toggle("untagged", confirmed === null && suggestion === null);
      chip.classList.toggle(
        "cursor",
        this.cursor?.sentence === sid && this.cursor.position === pos,
      );
      chip.classList.toggle("in-span", this.inDragSpan(sid, pos));
    }
    this.updateSubmitState();
  }

  private inDragSpan(sid: number, pos: number): boolean {
    if (!this.dragAnchor || !this.cursor) return false;
    if (this.dragAnchor.sentence !== sid || this.cursor.sentence !== sid) return false;
    const lo = Math.min(this.dragAnchor.position, this.cursor.position);
    const hi = Math.max(this.dragAnchor.position, this.cursor.position);
    return pos >= lo && pos <= hi;
  }

  private updateSubmitState(): void {
    const submit = this.root.querySelector<HTMLButtonElement>("#submit");
    const remaining = this.root.querySelector("#remaining");
    if (!submit || !remaining) return;
    if (!this.draft) {
      submit.disabled = true;
      remaining.textContent = "";
      return;
    }
    const missing = this.draft.missingCount();
    submit.disabled = missing > 0;
    remaining.textContent = missing > 0 ? `${missing} tokens left` : "ready";
  }

  private onKey(ev: KeyboardEvent): void {
    if (!this.draft || !this.cursor) return;
    const { sentence, position } = this.cursor;
    const draft = this.draft.sentences.get(sentence)!;
    const classes = this.draft.entityClasses;
    const digit = Number(ev.key);
    if (!Number.isNaN(digit) && digit >= 1 && digit <= classes.length) {
      const cls = classes[digit - 1];
      if (this.dragAnchor && this.dragAnchor.sentence === sentence
          && this.dragAnchor.position !== position) {
        this.draft.tagSpan(sentence, this.dragAnchor.position, position, cls);
      } else {
        this.draft.setTag(sentence, position, `B-${cls}`);
      }
      this.advanceCursor();
    } else if (ev.key === "o" || ev.key === "O") {
      if (this.dragAnchor && this.dragAnchor.sentence === sentence) {
        const lo = Math.min(this.dragAnchor.position, position);
        const hi = Math.max(this.dragAnchor.position, position);
        for (let i = lo; i <= hi; i++) this.draft.setTag(sentence, i, "O");
      } else {
        this.draft.setTag(sentence, position, "O");
      }
      this.advanceCursor();
    } else if (ev.key === "s" || ev.key === "S") {
      if (draft.suggestions) {
        this.draft.confirmSuggestion(sentence, position);
        this.advanceCursor();
      }
    } else if (ev.key === "ArrowRight") {
      this.moveCursor(1);
    } else if (ev.key === "ArrowLeft") {
      this.moveCursor(-1);
    } else if (ev.key === "Backspace") {
      this.draft.clearTag(sentence, position);
    } else {
      return;
    }
    this.dragAnchor = null;
    ev.preventDefault();
    this.repaintAllTokens();
  }

  private moveCursor(delta: number): void {
    if (!this.draft || !this.cursor || !this.batch) return;
    const order = this.batch.batch.map((b) => b.sentence_id);
    let { sentence, position } = this.cursor;
    const len = (sid: number) => this.draft!.sentences.get(sid)!.surfaces.length;
    position += delta;
    while (position < 0 || position >= len(sentence)) {
      const idx = order.indexOf(sentence) + (position < 0 ? -1 : 1);
      if (idx < 0 || idx >= order.length) return;
      const next = order[idx];
      position = position < 0 ? len(next) - 1 : 0;
      sentence = next;
    }
    this.cursor = { sentence, position };
  }

  private advanceCursor(): void {
    this.moveCursor(1);
  }

  private async submit(): Promise<void> {
    if (!this.draft || !this.session) return;
    let annotations;
    try {
      annotations = this.draft.toAnnotations();
    } catch (err) {
      this.setStatus(String(err));
      return;
    }
    const key = batchIdempotencyKey(this.session.session_id, this.session.iteration);
    try {
      await this.api.submitAnnotations(this.session.session_id, {
        idempotency_key: key,
        annotations,
      });
      this.setStatus("batch submitted; retraining…");
      await this.api.waitUntilReady(this.session.session_id);
      await this.refreshQuery();
    } catch (err) {
      this.setStatus(`submission failed (will not double-count on retry): ${err}`);
    }
  }

  // ---------------------------------------------------------------- panels

  private async renderMetrics(): Promise<void> {
    if (!this.session) return;
    const panel = this.root.querySelector("#metrics-panel");
    if (!panel) return;
    const metrics = await this.api.getMetrics(this.session.session_id);
    panel.innerHTML = `<h3>Learning curve</h3>${renderCurveSvg(metrics.curve)}
      <table class="curve"><tr><th>iter</th><th>sentences</th><th>tokens</th><th>F1</th></tr>
      ${metrics.curve
        .map(
          (p) =>
            `<tr><td>${p.iteration}</td><td>${p.sentences}</td><td>${p.tokens}</td><td>${p.f1.toFixed(3)}</td></tr>`,
        )
        .join("")}</table>`;
  }

  private async renderDiagnostics(): Promise<void> {
    if (!this.session) return;
    const panel = this.root.querySelector("#diagnostics-panel");
    if (!panel) return;
    const diag = await this.api.getDiagnostics(this.session.session_id);
    if (!diag.available || !diag.points) {
      panel.innerHTML = "";
      return;
    }
    panel.innerHTML = `<h3>Predicted-positive diagnostics (read-only)</h3>
      <div class="meta">${diag.n_clusters} clusters · positive set ${diag.positive_set_size}
      (core ${diag.core_size} + outliers ${diag.outlier_size})</div>
      ${renderScatterSvg(diag)}`;
  }
}

export function renderCurveSvg(curve: CurvePoint[], width = 420, height = 120): string {
  if (curve.length === 0) return "<svg></svg>";
  const maxTokens = Math.max(...curve.map((p) => p.tokens), 1);
  const pad = 24;
  const x = (tokens: number) => pad + ((width - 2 * pad) * tokens) / maxTokens;
  const y = (f1: number) => height - pad - (height - 2 * pad) * f1;
  const path = curve
    .map((p, i) => `${i === 0 ? "M" : "L"}${x(p.tokens).toFixed(1)},${y(p.f1).toFixed(1)}`)
    .join(" ");
  const dots = curve
    .map(
      (p) =>
        `<circle cx="${x(p.tokens).toFixed(1)}" cy="${y(p.f1).toFixed(1)}" r="3"><title>iter ${p.iteration}: F1 ${p.f1.toFixed(3)} @ ${p.tokens} tokens</title></circle>`,
    )
    .join("");
  return `<svg viewBox="0 0 ${width} ${height}" class="curve-svg" role="img" aria-label="F1 vs annotated tokens">
    <line x1="${pad}" y1="${height - pad}" x2="${width - pad}" y2="${height - pad}" class="axis"/>
    <line x1="${pad}" y1="${pad}" x2="${pad}" y2="${height - pad}" class="axis"/>
    <path d="${path}" class="curve-line"/>
    ${dots}
  </svg>`;
}

export function renderScatterSvg(diag: DiagnosticsResponse, size = 360): string {
  const points = diag.points ?? [];
  if (points.length === 0) return "<svg></svg>";
  const xs = points.map((p) => p.x);
  const ys = points.map((p) => p.y);
  const [minX, maxX] = [Math.min(...xs), Math.max(...xs)];
  const [minY, maxY] = [Math.min(...ys), Math.max(...ys)];
  const span = Math.max(maxX - minX, maxY - minY, 1e-9);
  const scale = (v: number, lo: number) => 8 + ((size - 16) * (v - lo)) / span;
  const circles = points
    .map((p) => {
      const color =
        p.cluster < 0 ? "#bbbbbb" : CLUSTER_COLORS[p.cluster % CLUSTER_COLORS.length];
      const ring = p.in_positive_set ? ' stroke="#111" stroke-width="1"' : "";
      return `<circle cx="${scale(p.x, minX).toFixed(1)}" cy="${scale(p.y, minY).toFixed(1)}" r="2.4" fill="${color}"${ring}/>`;
    })
    .join("");
  return `<svg viewBox="0 0 ${size} ${size}" class="scatter-svg" role="img" aria-label="token map">${circles}</svg>`;
}
