/**
 * Analytic patch predictor: per-class logits affine in the local 3x3x3 box
 * mean of the input, with edge replication at patch borders.
 *
 * This mirrors the engine's built-in synthetic predictor bit-for-bit at
 * float64 precision: the 27 neighborhood values are accumulated in the
 * same (dx, dy, dz) order before dividing by 27, and the affine map is a
 * single multiply-add, so both sides round to identical float32 logits.
 */

export interface PatchShape {
  nx: number;
  ny: number;
  nz: number;
}

/** Default affine coefficients by class count; keep in sync with the engine. */
export const PRESETS: Record<number, { slopes: number[]; offsets: number[] }> = {
  2: { slopes: [-0.002, 0.002], offsets: [0.5, -0.5] },
  3: { slopes: [-0.004, 0.001, 0.004], offsets: [0.0, 0.8, 0.0] },
};

const clamp = (v: number, lo: number, hi: number) => (v < lo ? lo : v > hi ? hi : v);

/** 3^3 box average with border clamping; x-fastest flat input, float64 output. */
export function boxMean3(patch: Float32Array, shape: PatchShape): Float64Array {
  const { nx, ny, nz } = shape;
  const out = new Float64Array(nx * ny * nz);
  for (let z = 0; z < nz; z++) {
    for (let y = 0; y < ny; y++) {
      for (let x = 0; x < nx; x++) {
        let acc = 0.0;
        for (let dx = 0; dx < 3; dx++) {
          const xx = clamp(x + dx - 1, 0, nx - 1);
          for (let dy = 0; dy < 3; dy++) {
            const yy = clamp(y + dy - 1, 0, ny - 1);
            for (let dz = 0; dz < 3; dz++) {
              const zz = clamp(z + dz - 1, 0, nz - 1);
              acc += patch[xx + nx * (yy + ny * zz)];
            }
          }
        }
        out[x + nx * (y + ny * z)] = acc / 27.0;
      }
    }
  }
  return out;
}

export interface Predictor {
  numClasses: number;
  /** x-fastest f32 intensities in, class-major x-fastest f32 logits out. */
  predict(patch: Float32Array): Float32Array;
}

export function createAnalyticPredictor(shape: PatchShape, numClasses: number): Predictor {
  const preset = PRESETS[numClasses];
  if (!preset) {
    throw new Error(
      `analytic backend supports ${Object.keys(PRESETS).join("/")} classes, got ${numClasses}`
    );
  }
  const { slopes, offsets } = preset;
  const nVox = shape.nx * shape.ny * shape.nz;
  return {
    numClasses,
    predict(patch: Float32Array): Float32Array {
      if (patch.length !== nVox) {
        throw new Error(`patch length ${patch.length} != ${nVox}`);
      }
      const mean = boxMean3(patch, shape);
      const logits = new Float32Array(numClasses * nVox);
      for (let c = 0; c < numClasses; c++) {
        const a = slopes[c];
        const d = offsets[c];
        const base = c * nVox;
        for (let i = 0; i < nVox; i++) {
          logits[base + i] = Math.fround(a * mean[i] + d);
        }
      }
      return logits;
    },
  };
}
