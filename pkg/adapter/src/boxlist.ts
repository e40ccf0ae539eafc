import { readFileSync } from 'fs'
import { BoxListError } from './errors'

/** One proposal box for one image, in original pixel coordinates. */
export interface BoxEntry {
  imageId: string
  /** [xMin, yMin, xMax, yMax], already rounded to float32 precision. */
  box: [number, number, number, number]
  groupId: number
}

/**
 * Parse the plain-text box-list format: one `image_id, x_min, y_min, x_max,
 * y_max, group_id` record per line.  Blank lines and `#` comments are
 * ignored.  Coordinates are rounded to float32 (the stored precision) before
 * validation, so a box that only looks valid in float64 is rejected here
 * rather than downstream.  Returns entries grouped by image id, in file
 * order.
 */
export function parseBoxList(text: string, source = 'box list'): Map<string, BoxEntry[]> {
  let entries = new Map<string, BoxEntry[]>()
  let lines = text.split('\n')
  for (let i = 0; i < lines.length; i++) {
    let line = lines[i].trim()
    if (!line || line.startsWith('#')) {
      continue
    }
    let where = `${source}:${i + 1}`
    let fields = line.split(',').map(f => f.trim())
    if (fields.length !== 6) {
      throw new BoxListError(
        `${where}: expected 6 comma-separated fields, got ${fields.length}`,
      )
    }
    let imageId = fields[0]
    if (!imageId) {
      throw new BoxListError(`${where}: empty image id`)
    }
    let numbers = fields.slice(1).map(f => {
      let value = Number(f)
      if (f === '' || !Number.isFinite(value)) {
        throw new BoxListError(`${where}: '${f}' is not a finite number`)
      }
      return value
    })
    let box = numbers.slice(0, 4).map(Math.fround) as [number, number, number, number]
    let [xMin, yMin, xMax, yMax] = box
    if (xMin < 0 || yMin < 0) {
      throw new BoxListError(`${where}: box coordinates must be non-negative`)
    }
    if (xMax <= xMin || yMax <= yMin) {
      throw new BoxListError(
        `${where}: box (${box.join(', ')}) has no positive extent at stored precision`,
      )
    }
    let groupId = numbers[4]
    if (!Number.isInteger(groupId) || groupId < 0 || groupId > 0xffff) {
      throw new BoxListError(`${where}: group id must be an integer in [0, 65535]`)
    }
    let list = entries.get(imageId)
    if (!list) {
      list = []
      entries.set(imageId, list)
    }
    list.push({ imageId, box, groupId })
  }
  return entries
}

/** Read and parse one or more box-list files, concatenating per-image lists. */
export function readBoxLists(files: string | string[]): Map<string, BoxEntry[]> {
  let paths = typeof files === 'string' ? [files] : files
  if (paths.length === 0) {
    throw new BoxListError('no box-list files given')
  }
  let merged = new Map<string, BoxEntry[]>()
  for (let path of paths) {
    let text: string
    try {
      text = readFileSync(path, 'utf-8')
    } catch (e) {
      throw new BoxListError(`${path}: ${String(e)}`)
    }
    for (let [imageId, list] of parseBoxList(text, path)) {
      let existing = merged.get(imageId)
      if (existing) {
        existing.push(...list)
      } else {
        merged.set(imageId, list)
      }
    }
  }
  return merged
}
