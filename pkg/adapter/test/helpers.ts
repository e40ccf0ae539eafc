import { spawnSync } from 'child_process'
import { mkdtempSync, writeFileSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import * as jpeg from 'jpeg-js'
import { PNG } from 'pngjs'
import { seededRandom } from '../src/prng'

export function tempDir(label: string): string {
  return mkdtempSync(join(tmpdir(), `${label}-`))
}

export interface PaintedRect {
  x: number
  y: number
  w: number
  h: number
  color: [number, number, number]
}

/**
 * Paint a deterministic test image: per-pixel noise around a base gray, with
 * solid rectangles on top.  The seed fixes the noise, so the same arguments
 * always produce the same pixels.
 */
export function paintImage(options: {
  width: number
  height: number
  rects?: PaintedRect[]
  base?: number
  noise?: number
  seed?: string
}): PNG {
  let { width, height, rects = [], base = 128, noise = 20, seed = 'image' } = options
  let next = seededRandom(seed)
  let png = new PNG({ width, height })
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      let at = (y * width + x) * 4
      let level = Math.round(base + (next() * 2 - 1) * noise)
      png.data[at] = level
      png.data[at + 1] = level
      png.data[at + 2] = level
      png.data[at + 3] = 255
    }
  }
  for (let rect of rects) {
    for (let y = rect.y; y < rect.y + rect.h; y++) {
      for (let x = rect.x; x < rect.x + rect.w; x++) {
        let at = (y * width + x) * 4
        png.data[at] = rect.color[0]
        png.data[at + 1] = rect.color[1]
        png.data[at + 2] = rect.color[2]
      }
    }
  }
  return png
}

export function writePng(file: string, png: PNG): void {
  writeFileSync(file, PNG.sync.write(png))
}

export function writeJpeg(file: string, png: PNG, quality = 90): void {
  let encoded = jpeg.encode(
    { width: png.width, height: png.height, data: png.data },
    quality,
  )
  writeFileSync(file, encoded.data)
}

/** Run a python snippet against the consumer package; returns its stdout. */
export function runPython(code: string): string {
  let result = spawnSync('python3', ['-c', code], { encoding: 'utf-8' })
  if (result.status !== 0) {
    throw new Error(`python exited ${result.status}:\n${result.stderr}`)
  }
  return result.stdout
}

/** Run the consumer CLI; returns its exit code plus captured output. */
export function runConsumer(args: string[]): {
  status: number
  stdout: string
  stderr: string
} {
  let result = spawnSync('python3', ['-m', 'regionrank', ...args], {
    encoding: 'utf-8',
  })
  return {
    status: result.status ?? -1,
    stdout: result.stdout,
    stderr: result.stderr,
  }
}
