import { describe, expect, it } from "vitest";
import { applyEdit, diffEdits, transposeOffset, transposeRange } from "../src/transpose.js";

describe("transposeOffset", () => {
  it("shifts across inserts", () => {
    expect(transposeOffset([{ kind: "insert", offset: 0, text: "ab" }], 5)).toBe(7);
  });

  it("drops offsets strictly inside removals", () => {
    const edits = [{ kind: "remove", offset: 3, text: "xyz" } as const];
    expect(transposeOffset(edits, 4)).toBeNull();
    expect(transposeOffset(edits, 3)).toBe(3);
    expect(transposeOffset(edits, 6)).toBe(3);
  });

  it("is monotone over defined offsets", () => {
    const edits = [
      { kind: "insert", offset: 2, text: "Q" } as const,
      { kind: "remove", offset: 5, text: "ab" } as const,
      { kind: "insert", offset: 0, text: "zz" } as const,
    ];
    let prev = -1;
    for (let off = 0; off <= 12; off++) {
      const mapped = transposeOffset(edits, off);
      if (mapped !== null) {
        expect(mapped).toBeGreaterThanOrEqual(prev);
        prev = mapped;
      }
    }
  });

  it("drops ranges collapsed by covering removals", () => {
    expect(transposeRange([{ kind: "remove", offset: 4, text: "xxxx" }], 5, 9)).toBeNull();
    expect(transposeRange([{ kind: "insert", offset: 0, text: "ab" }], 5, 9)).toEqual([7, 11]);
  });
});

describe("diffEdits", () => {
  it("reconstructs the after state", () => {
    const cases: [string, string][] = [
      ["abc", "abXc"], ["abc", "ac"], ["abc", "abc"], ["", "hi"],
      ["hello world", "hello brave world"], ["aaaa", "aba"],
    ];
    for (const [before, after] of cases) {
      let text = before;
      for (const edit of diffEdits(before, after)) text = applyEdit(text, edit);
      expect(text).toBe(after);
    }
  });

  it("produces a single minimal replacement", () => {
    const edits = diffEdits("Proposition. 2 + 2 = 5.", "Proposition. 2 + 2 = 4.");
    expect(edits).toEqual([
      { kind: "remove", offset: 21, text: "5" },
      { kind: "insert", offset: 21, text: "4" },
    ]);
  });
});
