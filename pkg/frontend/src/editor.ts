/**
 * Editor model: one buffer bound to one document node on the server.
 *
 * Local edits apply to the buffer immediately and are flushed to the server
 * in ~50 ms batches, so typing never waits on checking. Incoming reports
 * stay anchored to the version they were computed against; decorations are
 * positioned by transposing through every edit made since (journaled sent
 * batches plus the unsent queue), so their offsets never exceed the current
 * buffer and vanish when their anchor text is edited away.
 *
 * Markup named "active" carries a replacement payload (offsets relative to
 * the annotation's own start); applying it edits the buffer through the
 * normal edit path and a consumed-guard makes rapid double clicks apply
 * once.
 */

import { SessionClient, NodeId } from "./client.js";
import {
  DiagnosticMessage,
  MarkupReport,
  ReportEvent,
  formatPretty,
  unbroken,
} from "./protocol.js";
import { Edit, applyEdit, transposeRange } from "./transpose.js";

export interface Decoration {
  start: number;
  end: number;
  kind: string;           // markup name or message severity
  title?: string;         // tooltip text (formatted message body)
  active?: { start: number; end: number; text: string; title: string; key: string };
}

export interface EditorOptions {
  flushMs?: number;        // edit batch delay
  perspectiveMs?: number;  // scroll settle delay
  margin?: number;         // tooltip layout margin
}

interface ExecRecord {
  node: string;
  events: ReportEvent[];
}

export class EditorModel {
  text = "";
  private pending: Edit[] = [];
  private flushTimer: ReturnType<typeof setTimeout> | null = null;
  private perspectiveTimer: ReturnType<typeof setTimeout> | null = null;
  private pendingPerspective: Edit | null = null;
  private execs = new Map<number, ExecRecord>();
  private statuses = new Map<number, string>();
  private liveExecs = new Set<number>();
  private consumedActives = new Set<string>();
  private listeners = new Set<() => void>();
  notices: string[] = [];
  readonly flushMs: number;
  readonly perspectiveMs: number;
  readonly margin: number;

  constructor(readonly client: SessionClient, readonly node: NodeId,
              options: EditorOptions = {}) {
    this.flushMs = options.flushMs ?? 50;
    this.perspectiveMs = options.perspectiveMs ?? 200;
    this.margin = options.margin ?? 60;
  }

  onChange(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  // -- server events (wire these to the SessionClient) ----------------------

  handleAssigned(_version: number, spanExecs: Map<number, number>): void {
    this.liveExecs = new Set(spanExecs.values());
    for (const execId of [...this.execs.keys()]) {
      if (!this.liveExecs.has(execId)) {
        this.execs.delete(execId);
        this.statuses.delete(execId);
      }
    }
    this.notify();
  }

  handleStatus(execId: number, state: string): void {
    this.statuses.set(execId, state);
    if (state === "cancelled") this.execs.delete(execId);
    this.notify();
  }

  handleReport(execId: number, node: string, events: ReportEvent[]): void {
    if (node !== this.node.path) return;
    const record = this.execs.get(execId) ?? { node, events: [] };
    record.events.push(...events);
    this.execs.set(execId, record);
    this.notify();
  }

  handleOffline(): void {
    this.notices.push("connection lost, edits queued locally");
    this.notify();
  }

  // -- local editing -----------------------------------------------------------

  insert(offset: number, text: string): void {
    this.applyLocal({ kind: "insert", offset, text });
  }

  remove(offset: number, length: number): void {
    this.applyLocal({ kind: "remove", offset, text: this.text.slice(offset, offset + length) });
  }

  setText(text: string): void {
    this.applyLocal({ kind: "set", text });
  }

  applyLocal(edit: Edit): void {
    this.text = applyEdit(this.text, edit);
    this.pending.push(edit);
    this.scheduleFlush();
    this.notify();
  }

  private scheduleFlush(): void {
    if (this.flushTimer) return;
    this.flushTimer = setTimeout(() => {
      this.flushTimer = null;
      this.flush();
    }, this.flushMs);
  }

  /** Send the queued batch now (test hooks call this directly). */
  flush(): void {
    if (this.flushTimer) {
      clearTimeout(this.flushTimer);
      this.flushTimer = null;
    }
    const batch = this.pending;
    this.pending = [];
    const entries = batch.map((edit) => ({ node: this.node, edit }));
    if (this.pendingPerspective) {
      entries.push({ node: this.node, edit: this.pendingPerspective });
      this.pendingPerspective = null;
    }
    if (entries.length) this.client.sendEdits(entries);
  }

  // -- perspective --------------------------------------------------------------

  /** Declare the visible character range; sent after scroll settles. */
  setViewport(start: number, end: number, required = false): void {
    const lo = Math.max(0, Math.min(start, this.text.length));
    const hi = Math.max(lo, Math.min(end, this.text.length));
    this.pendingPerspective = {
      kind: "perspective",
      ranges: lo === hi ? [] : [[lo, hi]],
      required,
    };
    if (this.perspectiveTimer) clearTimeout(this.perspectiveTimer);
    this.perspectiveTimer = setTimeout(() => {
      this.perspectiveTimer = null;
      this.flush();
    }, this.perspectiveMs);
  }

  // -- decorations ----------------------------------------------------------------

  /** Report ranges transposed onto the current buffer. */
  decorations(): Decoration[] {
    const out: Decoration[] = [];
    for (const [execId, record] of this.execs) {
      if (!this.liveExecs.has(execId)) continue;
      const anchor = this.client.execVersion.get(execId) ?? 0;
      const edits = [
        ...this.client.editsSince(anchor, this.node.path),
        ...this.pending,
      ];
      for (const event of record.events) {
        const mapped = transposeRange(edits, event.start, event.end);
        if (!mapped) continue;
        const [start, end] = mapped;
        if (end > this.text.length) continue;
        if (event.type === "markup") {
          out.push(this.markupDecoration(execId, event, start, end));
        } else if (event.severity === "error" || event.severity === "warning") {
          out.push({
            start, end, kind: event.severity,
            title: formatPretty(event.body, this.margin).join("\n"),
          });
        }
      }
    }
    out.sort((a, b) => a.start - b.start || b.end - a.end);
    return out;
  }

  private markupDecoration(execId: number, event: MarkupReport,
                           start: number, end: number): Decoration {
    const deco: Decoration = { start, end, kind: event.name };
    const prop = (key: string) =>
      event.props.find(([k]) => k === key)?.[1];
    if (event.name === "active" && prop("kind") === "replace") {
      deco.active = {
        start: parseInt(prop("start") ?? "0", 10),
        end: parseInt(prop("end") ?? "0", 10),
        text: prop("text") ?? "",
        title: prop("title") ?? "apply fix",
        key: `${execId}:${event.start}:${event.end}:${prop("text")}`,
      };
      deco.title = deco.active.title;
    }
    return deco;
  }

  /** Messages for a buffer offset, for tooltips. */
  messagesAt(offset: number): Decoration[] {
    return this.decorations().filter(
      (d) => d.title !== undefined &&
        (d.start === d.end ? d.start === offset : d.start <= offset && offset < d.end));
  }

  /**
   * Click on active markup: apply its replacement to the buffer exactly
   * once. A stale payload (anchor edited away, or already applied) is a
   * no-op with a notice.
   */
  applyActive(deco: Decoration): boolean {
    if (!deco.active) return false;
    if (this.consumedActives.has(deco.active.key)) {
      this.notices.push("fix already applied");
      return false;
    }
    const lo = deco.start + deco.active.start;
    const hi = deco.start + deco.active.end;
    if (lo > this.text.length || hi > this.text.length || lo > hi) {
      this.notices.push("fix is stale, not applied");
      return false;
    }
    // re-check against the live decoration set: the payload may be stale
    const live = this.decorations().some(
      (d) => d.active?.key === deco.active!.key && d.start === deco.start);
    if (!live) {
      this.notices.push("fix is stale, not applied");
      return false;
    }
    this.consumedActives.add(deco.active.key);
    this.remove(lo, hi - lo);
    this.insert(lo, deco.active.text);
    return true;
  }

  /** True when every live exec unit reached a terminal state. */
  quiet(): boolean {
    for (const execId of this.liveExecs) {
      const s = this.statuses.get(execId);
      if (s !== "finished" && s !== "failed" && s !== "cancelled") return false;
    }
    return this.liveExecs.size > 0;
  }

  severityCounts(): Record<string, number> {
    const counts: Record<string, number> = {};
    for (const d of this.decorations()) counts[d.kind] = (counts[d.kind] ?? 0) + 1;
    return counts;
  }

  bodyText(message: DiagnosticMessage): string {
    return unbroken(message.body);
  }
}
