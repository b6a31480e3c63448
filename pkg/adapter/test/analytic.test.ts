import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";
import { boxMean3, createAnalyticPredictor } from "../src/analytic.js";

interface Case {
  name: string;
  patch_size: [number, number, number];
  num_classes: number;
  patch: number[];
  expected_logits: number[];
}

const here = dirname(fileURLToPath(import.meta.url));
const cases: Case[] = JSON.parse(readFileSync(join(here, "fixtures", "analytic_cases.json"), "utf8"));

describe("boxMean3", () => {
  it("averages the full neighborhood in the interior", () => {
    const patch = new Float32Array(27).fill(3);
    patch[13] = 30; // center of a 3x3x3 patch
    const mean = boxMean3(patch, { nx: 3, ny: 3, nz: 3 });
    expect(mean[13]).toBeCloseTo((26 * 3 + 30) / 27, 12);
  });

  it("replicates edges at the border", () => {
    const patch = new Float32Array(27).fill(0);
    patch[0] = 27;
    const mean = boxMean3(patch, { nx: 3, ny: 3, nz: 3 });
    // the corner window sees the corner voxel 8 times
    expect(mean[0]).toBeCloseTo(8, 12);
  });
});

describe("analytic predictor conformance", () => {
  for (const c of cases) {
    it(`matches the engine fixture ${c.name} within 1e-6`, () => {
      const [nx, ny, nz] = c.patch_size;
      const predictor = createAnalyticPredictor({ nx, ny, nz }, c.num_classes);
      const logits = predictor.predict(new Float32Array(c.patch));
      expect(logits.length).toBe(c.expected_logits.length);
      let worst = 0;
      for (let i = 0; i < logits.length; i++) {
        worst = Math.max(worst, Math.abs(logits[i] - c.expected_logits[i]));
      }
      expect(worst).toBeLessThanOrEqual(1e-6);
    });
  }

  it("is deterministic", () => {
    const predictor = createAnalyticPredictor({ nx: 4, ny: 4, nz: 4 }, 3);
    const patch = new Float32Array(64).map((_, i) => (i * 37) % 1000 - 500);
    expect(predictor.predict(patch)).toEqual(predictor.predict(patch));
  });

  it("rejects unsupported class counts", () => {
    expect(() => createAnalyticPredictor({ nx: 2, ny: 2, nz: 2 }, 5)).toThrow(/classes/);
  });

  it("rejects wrong patch lengths", () => {
    const predictor = createAnalyticPredictor({ nx: 2, ny: 2, nz: 2 }, 2);
    expect(() => predictor.predict(new Float32Array(7))).toThrow(/length/);
  });
});
