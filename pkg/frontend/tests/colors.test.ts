import { describe, expect, it } from "vitest";

import { SCRIBBLE_COLOR, UNLABELED, labelColor, labelHue } from "../src/colors.js";

describe("label colors", () => {
  it("are deterministic", () => {
    expect(labelColor(17)).toEqual(labelColor(17));
    expect(labelHue(123456789)).toBe(labelHue(123456789));
  });

  it("map the background to the sentinel color", () => {
    expect(labelColor(0)).toEqual(UNLABELED);
  });

  it("spread hues over [0, 1)", () => {
    const hues = new Set<number>();
    for (let label = 1; label <= 200; label++) {
      const h = labelHue(label);
      expect(h).toBeGreaterThanOrEqual(0);
      expect(h).toBeLessThan(1);
      hues.add(Math.floor(h * 64));
    }
    // 200 consecutive ids should land in most of 64 hue buckets, not clump
    expect(hues.size).toBeGreaterThan(40);
  });

  it("give adjacent ids visibly different colors", () => {
    const a = labelColor(1);
    const b = labelColor(2);
    const dist = Math.abs(a.r - b.r) + Math.abs(a.g - b.g) + Math.abs(a.b - b.b);
    expect(dist).toBeGreaterThan(30);
  });
});

describe("scribble color", () => {
  it("is one fixed yellow for every scribble", () => {
    expect(SCRIBBLE_COLOR).toEqual({ r: 255, g: 221, b: 0 });
  });
});
