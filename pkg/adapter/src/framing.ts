/**
 * Length-prefixed stdio frames for voxshap-predictor/1.
 *
 * Wire format: [4 bytes uint32 LE: payload length][payload]
 * Payload: [1 byte type tag][data], tag 0 = tensor, 1 = JSON.
 */

export const TAG_TENSOR = 0;
export const TAG_JSON = 1;
export const MAX_PAYLOAD = 256 * 1024 * 1024;

export function encodeFrame(tag: number, data: Buffer): Buffer {
  const body = Buffer.concat([Buffer.from([tag]), data]);
  if (body.length > MAX_PAYLOAD) {
    throw new Error(`frame payload ${body.length} exceeds ${MAX_PAYLOAD} bytes`);
  }
  const header = Buffer.alloc(4);
  header.writeUInt32LE(body.length, 0);
  return Buffer.concat([header, body]);
}

export interface Frame {
  tag: number;
  data: Buffer;
}

/**
 * Parse complete frames from a stream buffer; returns the frames plus the
 * unconsumed tail (a partial frame, kept for the next chunk).
 */
export function decodeFrames(pending: Buffer): { frames: Frame[]; rest: Buffer } {
  const frames: Frame[] = [];
  let offset = 0;
  while (pending.length - offset >= 4) {
    const length = pending.readUInt32LE(offset);
    if (length > MAX_PAYLOAD) {
      throw new Error(`frame length ${length} exceeds ${MAX_PAYLOAD} bytes`);
    }
    if (pending.length - offset - 4 < length) break;
    const body = pending.subarray(offset + 4, offset + 4 + length);
    if (body.length < 1) {
      throw new Error("empty frame payload (missing type tag)");
    }
    frames.push({ tag: body[0], data: Buffer.from(body.subarray(1)) });
    offset += 4 + length;
  }
  return { frames, rest: Buffer.from(pending.subarray(offset)) };
}

export function encodeJsonFrame(value: unknown): Buffer {
  return encodeFrame(TAG_JSON, Buffer.from(JSON.stringify(value), "utf8"));
}

export function encodeTensorFrame(values: Float32Array): Buffer {
  return encodeFrame(TAG_TENSOR, Buffer.from(values.buffer, values.byteOffset, values.byteLength));
}
