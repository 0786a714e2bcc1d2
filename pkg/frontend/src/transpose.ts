/**
 * Offset transposition through edits, mirroring the server's convention:
 * inserts at or before an offset shift it right, offsets strictly inside a
 * removed region become undefined (null).
 */

export type Edit =
  | { kind: "insert"; offset: number; text: string }
  | { kind: "remove"; offset: number; text: string }
  | { kind: "perspective"; ranges: [number, number][]; required: boolean }
  | { kind: "set"; text: string };

export function applyEdit(text: string, edit: Edit): string {
  switch (edit.kind) {
    case "insert":
      return text.slice(0, edit.offset) + edit.text + text.slice(edit.offset);
    case "remove":
      return text.slice(0, edit.offset) + text.slice(edit.offset + edit.text.length);
    case "set":
      return edit.text;
    case "perspective":
      return text;
  }
}

export function transposeOffset(edits: Edit[], offset: number): number | null {
  let pos: number | null = offset;
  for (const edit of edits) {
    if (pos === null) return null;
    if (edit.kind === "insert") {
      if (pos >= edit.offset) pos += edit.text.length;
    } else if (edit.kind === "remove") {
      const lo = edit.offset;
      const hi = edit.offset + edit.text.length;
      if (pos <= lo) {
        // unchanged
      } else if (pos < hi) {
        return null;
      } else {
        pos -= edit.text.length;
      }
    } else if (edit.kind === "set") {
      return null; // full replacement invalidates anchors
    }
  }
  return pos;
}

export function transposeRange(
  edits: Edit[], start: number, end: number): [number, number] | null {
  const lo = transposeOffset(edits, start);
  const hi = transposeOffset(edits, end);
  if (lo === null || hi === null) return null;
  if (start < end && lo >= hi) return null;
  return [lo, hi];
}

/**
 * Minimal single-range diff between two buffer states, as one remove plus
 * one insert (either may be empty).
 */
export function diffEdits(before: string, after: string): Edit[] {
  if (before === after) return [];
  let prefix = 0;
  const maxPrefix = Math.min(before.length, after.length);
  while (prefix < maxPrefix && before[prefix] === after[prefix]) prefix++;
  let suffix = 0;
  while (
    suffix < maxPrefix - prefix &&
    before[before.length - 1 - suffix] === after[after.length - 1 - suffix]
  ) {
    suffix++;
  }
  const removed = before.slice(prefix, before.length - suffix);
  const inserted = after.slice(prefix, after.length - suffix);
  const out: Edit[] = [];
  if (removed) out.push({ kind: "remove", offset: prefix, text: removed });
  if (inserted) out.push({ kind: "insert", offset: prefix, text: inserted });
  return out;
}
