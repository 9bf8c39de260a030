import { describe, expect, it } from "vitest";

import { parseSubsets, validateSplit } from "../src/split.js";

describe("validateSplit", () => {
  it("accepts an exact partition", () => {
    expect(validateSplit([1, 2, 3], [[1, 2], [3]]).ok).toBe(true);
  });

  it("rejects a single subset", () => {
    const v = validateSplit([1, 2], [[1, 2]]);
    expect(v.ok).toBe(false);
    expect(v.errors.join(" ")).toMatch(/at least two/);
  });

  it("rejects overlapping subsets", () => {
    const v = validateSplit([1, 2, 3], [
      [1, 2],
      [2, 3],
    ]);
    expect(v.ok).toBe(false);
    expect(v.errors.join(" ")).toMatch(/more than one subset/);
  });

  it("rejects missing members", () => {
    const v = validateSplit([1, 2, 3], [[1], [2]]);
    expect(v.ok).toBe(false);
    expect(v.errors.join(" ")).toMatch(/member 3 is missing/);
  });

  it("rejects foreign users", () => {
    const v = validateSplit([1, 2], [[1], [2, 99]]);
    expect(v.ok).toBe(false);
    expect(v.errors.join(" ")).toMatch(/user 99 is not a member/);
  });

  it("rejects empty subsets", () => {
    const v = validateSplit([1, 2], [[1, 2], []]);
    expect(v.ok).toBe(false);
  });
});

describe("parseSubsets", () => {
  it("parses pipe-separated groups", () => {
    expect(parseSubsets("1,2 | 3 4 | 5")).toEqual([[1, 2], [3, 4], [5]]);
  });

  it("ignores empty groups and extra whitespace", () => {
    expect(parseSubsets(" 1 , 2 ||")).toEqual([[1, 2]]);
  });
});
