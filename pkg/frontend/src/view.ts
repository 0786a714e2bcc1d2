/**
 * DOM view: a monospace textarea with a decoration overlay.
 *
 * Squiggles, highlights and clickable fix suggestions render as absolutely
 * positioned spans behind the text; hovering a decorated range shows the
 * formatted message in a tooltip; scrolling (after settling) updates the
 * perspective so the server focuses checking on what is on screen, one
 * screenful of slack in each direction.
 */

import { Decoration, EditorModel } from "./editor.js";
import { diffEdits } from "./transpose.js";

const STYLE = `
.dm-editor { position: relative; font: 14px/18px monospace; }
.dm-banner { background: #b33; color: #fff; padding: 2px 6px; display: none; }
.dm-banner.dm-visible { display: block; }
.dm-scroll { position: relative; }
.dm-input {
  font: inherit; width: 100%; height: 16em; box-sizing: border-box;
  background: transparent; position: relative; z-index: 2; border: 1px solid #999;
  margin: 0; padding: 0; resize: none; white-space: pre; overflow-wrap: normal;
}
.dm-overlay { position: absolute; inset: 1px; z-index: 1; pointer-events: none; }
.dm-deco { position: absolute; pointer-events: none; }
.dm-deco.dm-error { border-bottom: 2px dotted #d22; background: rgba(221,34,34,.08); }
.dm-deco.dm-warning { border-bottom: 2px dotted #c90; }
.dm-deco.dm-checked, .dm-deco.dm-accepted { background: rgba(40,160,60,.12); }
.dm-deco.dm-keyword, .dm-deco.dm-keyword1 { background: rgba(60,60,220,.10); }
.dm-deco.dm-active { pointer-events: auto; z-index: 3; cursor: pointer;
  outline: 1px solid #28c; background: rgba(34,136,204,.15); }
.dm-tooltip { position: absolute; z-index: 4; background: #222; color: #eee;
  padding: 4px 6px; white-space: pre; display: none; max-width: 60em; }
.dm-tooltip.dm-visible { display: block; }
`;

export interface ViewMetrics {
  charWidth: number;
  lineHeight: number;
}

export class EditorView {
  readonly root: HTMLElement;
  readonly textarea: HTMLTextAreaElement;
  readonly overlay: HTMLElement;
  readonly banner: HTMLElement;
  readonly tooltip: HTMLElement;
  private lastValue = "";

  constructor(readonly model: EditorModel, container: HTMLElement,
              readonly metrics: ViewMetrics = { charWidth: 8, lineHeight: 18 }) {
    const doc = container.ownerDocument;
    if (!doc.getElementById("dm-style")) {
      const style = doc.createElement("style");
      style.id = "dm-style";
      style.textContent = STYLE;
      doc.head.appendChild(style);
    }
    this.root = doc.createElement("div");
    this.root.className = "dm-editor";
    this.banner = doc.createElement("div");
    this.banner.className = "dm-banner";
    this.banner.textContent = "offline: edits are queued locally";
    const scroll = doc.createElement("div");
    scroll.className = "dm-scroll";
    this.overlay = doc.createElement("div");
    this.overlay.className = "dm-overlay";
    this.textarea = doc.createElement("textarea");
    this.textarea.className = "dm-input";
    this.textarea.setAttribute("spellcheck", "false");
    this.tooltip = doc.createElement("div");
    this.tooltip.className = "dm-tooltip";
    scroll.append(this.overlay, this.textarea);
    this.root.append(this.banner, scroll, this.tooltip);
    container.appendChild(this.root);

    this.textarea.addEventListener("input", () => this.onInput());
    this.textarea.addEventListener("scroll", () => this.onScroll());
    this.textarea.addEventListener("mousemove", (ev) => this.onHover(ev as MouseEvent));
    this.textarea.addEventListener("mouseleave", () => this.hideTooltip());
    model.onChange(() => this.refresh());
    this.refresh();
  }

  // -- edits ------------------------------------------------------------

  private onInput(): void {
    const value = this.textarea.value;
    for (const edit of diffEdits(this.lastValue, value)) {
      this.model.applyLocal(edit);
    }
    this.lastValue = value;
  }

  /** Programmatic typing helper (used by tests and demos). */
  type(text: string): void {
    this.textarea.value = this.textarea.value + text;
    this.textarea.dispatchEvent(new (this.root.ownerDocument.defaultView as any).Event("input"));
  }

  // -- perspective --------------------------------------------------------

  private onScroll(): void {
    const lh = this.metrics.lineHeight;
    const topLine = Math.floor(this.textarea.scrollTop / lh);
    const screenLines = Math.max(1, Math.floor((this.textarea.clientHeight || 0) / lh));
    if (!this.textarea.clientHeight) {
      // no layout information (headless): keep the whole node visible
      this.model.setViewport(0, this.model.text.length);
      return;
    }
    const lines = this.model.text.split("\n");
    const fromLine = Math.max(0, topLine - screenLines);
    const toLine = Math.min(lines.length, topLine + 2 * screenLines);
    let offset = 0;
    let start = 0;
    let end = this.model.text.length;
    for (let i = 0; i < lines.length; i++) {
      if (i === fromLine) start = offset;
      offset += lines[i].length + 1;
      if (i === toLine - 1) end = Math.min(offset, this.model.text.length);
    }
    this.model.setViewport(start, end);
  }

  // -- decorations -----------------------------------------------------------

  private lineColOf(offset: number): { line: number; col: number } {
    const upto = this.model.text.slice(0, offset);
    const line = (upto.match(/\n/g) ?? []).length;
    const col = offset - (upto.lastIndexOf("\n") + 1);
    return { line, col };
  }

  refresh(): void {
    if (this.textarea.value !== this.model.text) {
      this.textarea.value = this.model.text;
      this.lastValue = this.model.text;
    }
    this.banner.classList.toggle("dm-visible", this.model.client.offline);
    const doc = this.root.ownerDocument;
    this.overlay.textContent = "";
    for (const deco of this.model.decorations()) {
      const { line, col } = this.lineColOf(deco.start);
      const endCol = this.lineColOf(deco.end);
      const span = doc.createElement("span");
      span.className = `dm-deco dm-${deco.kind}`;
      span.dataset.kind = deco.kind;
      span.dataset.start = String(deco.start);
      span.dataset.end = String(deco.end);
      if (deco.title) span.dataset.title = deco.title;
      const width = (endCol.line === line ? endCol.col - col : 60) || 1;
      span.style.left = `${col * this.metrics.charWidth}px`;
      span.style.top = `${line * this.metrics.lineHeight}px`;
      span.style.width = `${width * this.metrics.charWidth}px`;
      span.style.height = `${this.metrics.lineHeight}px`;
      if (deco.active) {
        span.title = deco.active.title;
        span.addEventListener("click", () => {
          this.model.applyActive(deco);
          this.model.flush();
        });
      }
      this.overlay.appendChild(span);
    }
  }

  // -- tooltips ------------------------------------------------------------------

  private onHover(ev: MouseEvent): void {
    const col = Math.floor((ev.offsetX ?? 0) / this.metrics.charWidth);
    const line = Math.floor((ev.offsetY ?? 0) / this.metrics.lineHeight);
    const lines = this.model.text.split("\n");
    if (line >= lines.length) {
      this.hideTooltip();
      return;
    }
    let offset = 0;
    for (let i = 0; i < line; i++) offset += lines[i].length + 1;
    offset += Math.min(col, lines[line].length);
    this.showTooltipAt(offset);
  }

  showTooltipAt(offset: number): void {
    const hits = this.model.messagesAt(offset);
    if (!hits.length) {
      this.hideTooltip();
      return;
    }
    this.tooltip.textContent = hits.map((h) => h.title).join("\n--\n");
    this.tooltip.classList.add("dm-visible");
    const { line, col } = this.lineColOf(offset);
    this.tooltip.style.left = `${col * this.metrics.charWidth}px`;
    this.tooltip.style.top = `${(line + 1) * this.metrics.lineHeight}px`;
  }

  hideTooltip(): void {
    this.tooltip.classList.remove("dm-visible");
  }
}
