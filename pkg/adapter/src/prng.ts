import { createHash } from 'crypto'

/**
 * Deterministic uniform generator in [0, 1), keyed by an arbitrary string.
 *
 * The key is hashed with sha256 and the digest seeds an sfc32 stream, so the
 * same key yields the same sequence on every platform and run.  Used to
 * materialize encoder weights from a backbone name.
 */
export function seededRandom(key: string): () => number {
  let digest = createHash('sha256').update(key).digest()
  let a = digest.readUInt32LE(0)
  let b = digest.readUInt32LE(4)
  let c = digest.readUInt32LE(8)
  let d = digest.readUInt32LE(12)
  return sfc32(a, b, c, d)
}

/** The sfc32 stream cipher counter generator (public domain, PractRand). */
function sfc32(a: number, b: number, c: number, d: number): () => number {
  return () => {
    a >>>= 0
    b >>>= 0
    c >>>= 0
    d >>>= 0
    let t = (a + b) | 0
    a = b ^ (b >>> 9)
    b = (c + (c << 3)) | 0
    c = (c << 21) | (c >>> 11)
    d = (d + 1) | 0
    t = (t + d) | 0
    c = (c + t) | 0
    return (t >>> 0) / 4294967296
  }
}

/** Fill a float32 buffer with uniform values in (-limit, limit). */
export function uniformWeights(key: string, size: number, limit: number): Float32Array {
  let next = seededRandom(key)
  let out = new Float32Array(size)
  for (let i = 0; i < size; i++) {
    out[i] = Math.fround((next() * 2 - 1) * limit)
  }
  return out
}
