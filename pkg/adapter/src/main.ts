/**
 * voxshap predictor adapter: stdio server for voxshap-predictor/1.
 *
 * The engine launches this process with the patch shape and class count,
 * reads one hello frame, then alternates tensor request/response frames.
 * Backends: "analytic" (built-in affine model, used in CI) or
 * "model:<module>" (a user module default-exporting
 * createPredictor(shape, numClasses) for real networks).
 */

import os from "node:os";
import process from "node:process";
import { pathToFileURL } from "node:url";
import {
  decodeFrames,
  encodeJsonFrame,
  encodeTensorFrame,
  TAG_TENSOR,
} from "./framing.js";
import { createAnalyticPredictor, PatchShape, Predictor } from "./analytic.js";

const PROTOCOL = "voxshap-predictor/1";

interface Args {
  shape: PatchShape;
  numClasses: number;
  backend: string;
}

function parseArgs(argv: string[]): Args {
  let patch: string | undefined;
  let numClasses: number | undefined;
  let backend = "analytic";
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--patch":
        patch = argv[++i];
        break;
      case "--num-classes":
        numClasses = Number(argv[++i]);
        break;
      case "--backend":
        backend = argv[++i];
        break;
      default:
        throw new Error(`unknown argument ${argv[i]}`);
    }
  }
  if (!patch || !numClasses) {
    throw new Error("usage: adapter --patch PX,PY,PZ --num-classes C [--backend analytic|model:<module>]");
  }
  const parts = patch.split(",").map((p) => Number(p));
  if (parts.length !== 3 || parts.some((p) => !Number.isInteger(p) || p < 1)) {
    throw new Error(`bad --patch ${patch}`);
  }
  return { shape: { nx: parts[0], ny: parts[1], nz: parts[2] }, numClasses, backend };
}

async function createPredictor(args: Args): Promise<Predictor> {
  if (args.backend === "analytic") {
    return createAnalyticPredictor(args.shape, args.numClasses);
  }
  if (args.backend.startsWith("model:")) {
    const modulePath = args.backend.slice("model:".length);
    const mod = await import(pathToFileURL(modulePath).href);
    const factory = mod.createPredictor ?? mod.default;
    if (typeof factory !== "function") {
      throw new Error(`${modulePath} does not export createPredictor()`);
    }
    return factory(args.shape, args.numClasses) as Predictor;
  }
  throw new Error(`unknown backend ${args.backend}`);
}

function send(buffer: Buffer): void {
  process.stdout.write(buffer);
}

async function main(): Promise<void> {
  if (os.endianness() !== "LE") {
    throw new Error("adapter requires a little-endian host");
  }
  const args = parseArgs(process.argv.slice(2));
  const predictor = await createPredictor(args);
  const nVox = args.shape.nx * args.shape.ny * args.shape.nz;

  send(
    encodeJsonFrame({
      protocol: PROTOCOL,
      num_classes: args.numClasses,
      patch_size: [args.shape.nx, args.shape.ny, args.shape.nz],
      supports_concurrency: false,
    })
  );

  let pending: Buffer = Buffer.alloc(0);
  process.stdin.on("data", (chunk: Buffer) => {
    pending = Buffer.concat([pending, chunk]);
    let parsed;
    try {
      parsed = decodeFrames(pending);
    } catch (err) {
      send(encodeJsonFrame({ error: `bad frame: ${(err as Error).message}` }));
      process.exit(1);
    }
    pending = parsed.rest;
    for (const frame of parsed.frames) {
      if (frame.tag !== TAG_TENSOR) {
        send(encodeJsonFrame({ error: `expected tensor request, got tag ${frame.tag}` }));
        continue;
      }
      if (frame.data.length !== nVox * 4) {
        send(
          encodeJsonFrame({
            error: `request length ${frame.data.length} != expected ${nVox * 4} bytes`,
          })
        );
        continue;
      }
      const patch = new Float32Array(
        frame.data.buffer.slice(frame.data.byteOffset, frame.data.byteOffset + frame.data.byteLength)
      );
      try {
        send(encodeTensorFrame(predictor.predict(patch)));
      } catch (err) {
        send(encodeJsonFrame({ error: (err as Error).message }));
      }
    }
  });
  process.stdin.on("end", () => process.exit(0));
}

main().catch((err) => {
  process.stderr.write(`adapter: ${err instanceof Error ? err.message : String(err)}\n`);
  process.exit(1);
});
