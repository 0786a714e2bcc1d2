/**
 * Wire protocol codec: length-prefixed frames and structured tree payloads.
 *
 * A message is a nonempty list of byte chunks framed as the ASCII decimal
 * chunk lengths joined by commas, a newline, then the raw chunk bytes.
 * Structured payloads use two reserved control bytes inside one chunk
 * (0x05 brackets an element header, 0x06 separates fields); see
 * docs/wire-protocol.md in the repository root.
 */

const encoder = new TextEncoder();
const decoder = new TextDecoder();

export const X = "\x05";
export const Y = "\x06";

export function encodeChunks(chunks: Uint8Array[]): Uint8Array {
  if (chunks.length === 0) throw new Error("a message needs at least one chunk");
  const header = encoder.encode(chunks.map((c) => String(c.length)).join(",") + "\n");
  const total = header.length + chunks.reduce((n, c) => n + c.length, 0);
  const out = new Uint8Array(total);
  out.set(header, 0);
  let pos = header.length;
  for (const c of chunks) {
    out.set(c, pos);
    pos += c.length;
  }
  return out;
}

export function encodeMessage(name: string, ...args: (string | Uint8Array)[]): Uint8Array {
  const chunks: Uint8Array[] = [encoder.encode(name)];
  for (const a of args) chunks.push(typeof a === "string" ? encoder.encode(a) : a);
  return encodeChunks(chunks);
}

/** Incremental frame parser, indifferent to read boundaries. */
export class FrameDecoder {
  private buf = new Uint8Array(0);
  private lengths: number[] | null = null;

  feed(data: Uint8Array): Uint8Array[][] {
    const joined = new Uint8Array(this.buf.length + data.length);
    joined.set(this.buf, 0);
    joined.set(data, this.buf.length);
    this.buf = joined;

    const out: Uint8Array[][] = [];
    for (;;) {
      if (this.lengths === null) {
        const nl = this.buf.indexOf(0x0a);
        if (nl < 0) return out;
        const header = decoder.decode(this.buf.subarray(0, nl));
        this.buf = this.buf.subarray(nl + 1);
        if (!/^\d+(,\d+)*$/.test(header)) {
          throw new Error(`malformed frame header: ${header.slice(0, 40)}`);
        }
        this.lengths = header.split(",").map((s) => parseInt(s, 10));
      }
      const total = this.lengths.reduce((a, b) => a + b, 0);
      if (this.buf.length < total) return out;
      const chunks: Uint8Array[] = [];
      let pos = 0;
      for (const len of this.lengths) {
        chunks.push(this.buf.slice(pos, pos + len));
        pos += len;
      }
      this.buf = this.buf.subarray(total);
      this.lengths = null;
      out.push(chunks);
    }
  }
}

export interface WireMessage {
  name: string;
  args: string[];
}

export function parseMessage(chunks: Uint8Array[]): WireMessage {
  if (chunks.length === 0) throw new Error("empty message");
  return {
    name: decoder.decode(chunks[0]),
    args: chunks.slice(1).map((c) => decoder.decode(c)),
  };
}

// -- structured payload trees ------------------------------------------------

export interface TreeElem {
  name: string;
  props: [string, string][];
  children: TreeItem[];
}

export type TreeItem = string | TreeElem;

export function elemProp(elem: TreeElem, key: string): string | undefined {
  for (const [k, v] of elem.props) if (k === key) return v;
  return undefined;
}

function checkText(text: string): string {
  if (text.includes(X) || text.includes(Y)) {
    throw new Error("payload text contains reserved control bytes");
  }
  return text;
}

export function encodeTree(items: TreeItem[]): string {
  const out: string[] = [];
  const walk = (item: TreeItem): void => {
    if (typeof item === "string") {
      out.push(checkText(item));
      return;
    }
    let head = Y + checkText(item.name);
    for (const [k, v] of item.props) head += Y + checkText(k) + "=" + checkText(v);
    out.push(X + head + X);
    for (const child of item.children) walk(child);
    out.push(X + Y + X);
  };
  items.forEach(walk);
  return out.join("");
}

export function decodeTree(data: string): TreeItem[] {
  const stack: TreeItem[][] = [[]];
  const pending: { name: string; props: [string, string][] }[] = [];
  const parts = data.split(X);
  for (let idx = 0; idx < parts.length; idx++) {
    const part = parts[idx];
    if (idx % 2 === 0) {
      if (part) stack[stack.length - 1].push(part);
      continue;
    }
    if (!part.startsWith(Y)) throw new Error("malformed tree payload");
    const fields = part.split(Y).slice(1);
    if (fields.length === 1 && fields[0] === "") {
      const open = pending.pop();
      if (!open) throw new Error("unbalanced tree payload (extra close)");
      const children = stack.pop()!;
      stack[stack.length - 1].push({ name: open.name, props: open.props, children });
      continue;
    }
    const name = fields[0];
    if (!name) throw new Error("tree element with empty name");
    const props: [string, string][] = [];
    for (const f of fields.slice(1)) {
      const eq = f.indexOf("=");
      if (eq < 0) throw new Error(`malformed property ${f}`);
      props.push([f.slice(0, eq), f.slice(eq + 1)]);
    }
    pending.push({ name, props });
    stack.push([]);
  }
  if (pending.length) throw new Error("unbalanced tree payload (unclosed element)");
  return stack[0];
}

// -- pretty trees (message bodies) --------------------------------------------

export type PrettyTree =
  | { kind: "str"; text: string }
  | { kind: "break"; spaces: number; indent: number }
  | { kind: "block"; indent: number; consistent: boolean; body: PrettyTree[] };

export function treeToPretty(item: TreeItem): PrettyTree {
  if (typeof item === "string") return { kind: "str", text: item };
  if (item.name === "break") {
    return {
      kind: "break",
      spaces: parseInt(elemProp(item, "spaces") ?? "1", 10),
      indent: parseInt(elemProp(item, "indent") ?? "0", 10),
    };
  }
  if (item.name === "block") {
    return {
      kind: "block",
      indent: parseInt(elemProp(item, "indent") ?? "0", 10),
      consistent: elemProp(item, "consistent") === "1",
      body: item.children.map(treeToPretty),
    };
  }
  throw new Error(`unknown pretty-tree element ${item.name}`);
}

export function unbroken(tree: PrettyTree): string {
  switch (tree.kind) {
    case "str":
      return tree.text;
    case "break":
      return " ".repeat(tree.spaces);
    case "block":
      return tree.body.map(unbroken).join("");
  }
}

function width(tree: PrettyTree): number {
  switch (tree.kind) {
    case "str":
      return tree.text.length;
    case "break":
      return tree.spaces;
    case "block":
      return tree.body.reduce((n, t) => n + width(t), 0);
  }
}

/** Margin-aware layout of a message body, for tooltips. */
export function formatPretty(tree: PrettyTree, margin: number): string[] {
  const lines: string[] = [];
  let cur = "";

  const breakdist = (items: PrettyTree[], i: number, after: number): number => {
    let total = 0;
    for (const it of items.slice(i)) {
      if (it.kind === "break") return total;
      total += width(it);
    }
    return total + after;
  };

  const emit = (it: PrettyTree, base: number, force: boolean, after: number): void => {
    if (it.kind === "str") {
      cur += it.text;
    } else if (it.kind === "break") {
      if (!force && cur.length + it.spaces + after <= margin) {
        cur += " ".repeat(it.spaces);
      } else {
        lines.push(cur);
        cur = " ".repeat(base + it.indent);
      }
    } else {
      const subBase = cur.length + it.indent;
      const subForce = it.consistent && cur.length + width(it) + after > margin;
      it.body.forEach((child, idx) =>
        emit(child, subBase, subForce, breakdist(it.body, idx + 1, after)));
    }
  };

  emit(tree, 0, false, 0);
  lines.push(cur);
  return lines;
}

// -- report payloads -----------------------------------------------------------

export interface DiagnosticMessage {
  type: "message";
  severity: "status" | "writeln" | "warning" | "error";
  start: number;
  end: number;
  phase: "syntax" | "semantics";
  body: PrettyTree;
}

export interface MarkupReport {
  type: "markup";
  start: number;
  end: number;
  name: string;
  props: [string, string][];
}

export type ReportEvent = DiagnosticMessage | MarkupReport;

export function parseReportPayload(payload: string): ReportEvent[] {
  const out: ReportEvent[] = [];
  for (const item of decodeTree(payload)) {
    if (typeof item === "string") continue;
    if (item.name === "message") {
      const body = item.children.length === 1
        ? treeToPretty(item.children[0])
        : { kind: "block" as const, indent: 0, consistent: false,
            body: item.children.map(treeToPretty) };
      out.push({
        type: "message",
        severity: (elemProp(item, "severity") ?? "status") as DiagnosticMessage["severity"],
        start: parseInt(elemProp(item, "start") ?? "0", 10),
        end: parseInt(elemProp(item, "end") ?? "0", 10),
        phase: (elemProp(item, "phase") ?? "semantics") as DiagnosticMessage["phase"],
        body,
      });
    } else if (item.name === "markup") {
      const inner = item.children.find((c): c is TreeElem => typeof c !== "string");
      if (!inner) continue;
      out.push({
        type: "markup",
        start: parseInt(elemProp(item, "start") ?? "0", 10),
        end: parseInt(elemProp(item, "end") ?? "0", 10),
        name: inner.name === "elem" ? (elemProp(inner, "name") ?? "") : inner.name,
        props: inner.name === "elem"
          ? inner.props.filter(([k]) => k !== "name")
          : inner.props,
      });
    }
  }
  return out;
}

export function parseAssigned(payload: string): Map<number, number> {
  const out = new Map<number, number>();
  for (const item of decodeTree(payload)) {
    if (typeof item !== "string" && item.name === "span") {
      out.set(parseInt(elemProp(item, "id") ?? "0", 10),
              parseInt(elemProp(item, "exec") ?? "0", 10));
    }
  }
  return out;
}
