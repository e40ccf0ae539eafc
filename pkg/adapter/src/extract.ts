import { mkdirSync, readdirSync, writeFileSync } from 'fs'
import { join } from 'path'
import { createEncoder, globalDescriptor, stageStride } from './backbone'
import { BoxEntry, readBoxLists } from './boxlist'
import { ExtractionConfig, featureDims, resolveConfig } from './config'
import { ExtractionError, ImageDecodeError } from './errors'
import { StoredProposal, writeImageFeatures, writeManifest, writeProposalFile } from './format'
import { decodeImageFile, toInputTensor } from './image'
import { poolRegions } from './roi'

export interface SkippedImage {
  imageId: string
  file: string
  reason: string
}

export interface ExtractionReport {
  manifestPath: string
  nImages: number
  nProposals: number
  featureDim: number
  imageFeatureDim: number
  skipped: SkippedImage[]
}

interface ExtractedImage {
  imageId: string
  width: number
  height: number
  descriptor: Float32Array
  proposals: StoredProposal[]
}

/**
 * Encode an image folder into a ready-to-rank dataset directory.
 *
 * The box lists drive the run: every listed image id must have a matching
 * file (by name without extension) in the folder; unlisted files are left
 * alone.  Images that fail to decode are skipped with a warning and recorded
 * in the `extraction.json` sidecar next to the manifest, so a partial dataset
 * is always an honest one.  Output is a manifest, one proposal file per
 * image, and the global descriptor matrix — everything the consumer's
 * validator and pipeline expect.
 */
export async function extract(options: {
  imageDir: string
  /** One or more box-list files (image_id, x_min, y_min, x_max, y_max, group_id). */
  boxLists: string | string[]
  outDir: string
  config?: Partial<ExtractionConfig>
  /** Images decoded and encoded per batch. default: 4 */
  concurrency?: number
}): Promise<ExtractionReport> {
  let { imageDir, boxLists, outDir } = options
  let cfg = resolveConfig(options.config)
  let dims = featureDims(cfg)
  let boxesById = readBoxLists(boxLists)
  if (boxesById.size === 0) {
    throw new ExtractionError('box lists name no images')
  }
  let candidates = indexImageFiles(imageDir)
  let imageIds = [...boxesById.keys()].sort()
  let files = new Map<string, string>()
  for (let imageId of imageIds) {
    let matches = candidates.get(imageId) ?? []
    if (matches.length === 0) {
      throw new ExtractionError(
        `no file for image id '${imageId}' in ${imageDir} (matched by name without extension)`,
      )
    }
    if (matches.length > 1) {
      throw new ExtractionError(
        `image id '${imageId}' is ambiguous in ${imageDir}: ${matches.join(', ')}`,
      )
    }
    files.set(imageId, matches[0])
  }

  let encoder = createEncoder({ backbone: cfg.backbone })
  let skipped: SkippedImage[] = []
  let extracted: ExtractedImage[]
  try {
    let results = await mapBatched(
      imageIds,
      options.concurrency ?? 4,
      async imageId => {
        let file = files.get(imageId)!
        try {
          return extractOne(imageId, join(imageDir, file), boxesById.get(imageId)!, cfg, encoder)
        } catch (e) {
          if (e instanceof ImageDecodeError) {
            console.warn(`skipping image '${imageId}': ${e.message}`)
            skipped.push({ imageId, file, reason: e.message })
            return null
          }
          throw e
        }
      },
    )
    extracted = results.filter((r): r is ExtractedImage => r !== null)
  } finally {
    encoder.dispose()
  }
  if (extracted.length === 0) {
    throw new ExtractionError('no image could be decoded; nothing to write')
  }

  mkdirSync(outDir, { recursive: true })
  let pad = String(extracted.length - 1).length
  let images = extracted.map((img, i) => {
    let file = `image_${String(i).padStart(pad, '0')}.lodf`
    writeProposalFile(join(outDir, file), img.proposals)
    return {
      imageId: img.imageId,
      file,
      nProposals: img.proposals.length,
      width: img.width,
      height: img.height,
    }
  })
  let featuresFile = 'image_features.lodi'
  writeImageFeatures(
    join(outDir, featuresFile),
    extracted.map(img => img.descriptor),
    dims.imageFeatureDim,
  )
  let manifestPath = join(outDir, 'manifest.json')
  writeManifest({
    path: manifestPath,
    images,
    featureDim: dims.featureDim,
    imageFeatureDim: dims.imageFeatureDim,
    imageFeaturesFile: featuresFile,
  })
  let nProposals = images.reduce((sum, img) => sum + img.nProposals, 0)
  writeFileSync(
    join(outDir, 'extraction.json'),
    JSON.stringify(
      {
        backbone: cfg.backbone,
        descriptor_layer: cfg.descriptorLayer,
        pooling_layer: cfg.poolingLayer,
        max_side: cfg.maxSide,
        roi_resolution: cfg.roiResolution,
        feature_dim: dims.featureDim,
        image_feature_dim: dims.imageFeatureDim,
        n_images: images.length,
        n_proposals: nProposals,
        skipped: skipped.map(s => ({
          image_id: s.imageId,
          file: s.file,
          reason: s.reason,
        })),
      },
      null,
      2,
    ) + '\n',
  )
  return {
    manifestPath,
    nImages: images.length,
    nProposals,
    featureDim: dims.featureDim,
    imageFeatureDim: dims.imageFeatureDim,
    skipped,
  }
}

function extractOne(
  imageId: string,
  file: string,
  boxes: BoxEntry[],
  cfg: ExtractionConfig,
  encoder: ReturnType<typeof createEncoder>,
): ExtractedImage {
  let decoded = decodeImageFile(file)
  for (let entry of boxes) {
    let [, , xMax, yMax] = entry.box
    if (xMax > decoded.width || yMax > decoded.height) {
      throw new ExtractionError(
        `image '${imageId}': box (${entry.box.join(', ')}) exceeds the ` +
          `${decoded.width}x${decoded.height} image`,
      )
    }
  }
  let { input, scale } = toInputTensor(decoded, cfg.maxSide)
  let maps = encoder.run(input)
  try {
    let descriptor = globalDescriptor(maps[cfg.descriptorLayer])
    let features = poolRegions({
      map: maps[cfg.poolingLayer],
      boxes: boxes.map(b => b.box),
      scale,
      stride: stageStride(cfg.poolingLayer),
      resolution: cfg.roiResolution,
    })
    return {
      imageId,
      width: decoded.width,
      height: decoded.height,
      descriptor,
      proposals: boxes.map((entry, i) => ({
        feature: features[i],
        box: entry.box,
        groupId: entry.groupId,
        saliency: null,
      })),
    }
  } finally {
    input.dispose()
    Object.values(maps).forEach(m => m.dispose())
  }
}

/** Folder files keyed by name without extension, in directory-sorted order. */
function indexImageFiles(imageDir: string): Map<string, string[]> {
  let files = new Map<string, string[]>()
  let entries
  try {
    entries = readdirSync(imageDir, { withFileTypes: true })
  } catch (e) {
    throw new ExtractionError(`${imageDir}: ${String(e)}`)
  }
  for (let entry of entries.sort((a, b) => a.name.localeCompare(b.name))) {
    if (!entry.isFile()) {
      continue
    }
    let dot = entry.name.lastIndexOf('.')
    let stem = dot > 0 ? entry.name.slice(0, dot) : entry.name
    let matches = files.get(stem)
    if (matches) {
      matches.push(entry.name)
    } else {
      files.set(stem, [entry.name])
    }
  }
  return files
}

/** Run an async mapper over items in fixed-size batches, keeping item order. */
async function mapBatched<T, R>(
  items: T[],
  batchSize: number,
  mapper: (item: T) => Promise<R>,
): Promise<R[]> {
  let size = Math.max(1, batchSize)
  let out: R[] = []
  for (let start = 0; start < items.length; start += size) {
    let batch = items.slice(start, start + size)
    out.push(...(await Promise.all(batch.map(mapper))))
  }
  return out
}
