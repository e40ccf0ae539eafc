import { writeFileSync } from 'fs'

export const FORMAT_VERSION = 1

const MAGIC_FEATURES = 'LODF'
const MAGIC_IMAGE_FEATURES = 'LODI'

/** One stored region: feature vector, pixel box, group tag, and saliency. */
export interface StoredProposal {
  feature: Float32Array
  /** [xMin, yMin, xMax, yMax] in original image pixels. */
  box: [number, number, number, number]
  groupId: number
  /** null is stored as NaN, the format's absent marker. */
  saliency: number | null
}

export interface ManifestImage {
  imageId: string
  /** Feature file path relative to the manifest. */
  file: string
  nProposals: number
  width: number
  height: number
}

/**
 * Write one image's proposal file: magic, version, counts, then row-major
 * float32 features, float32 boxes, uint16 group ids, and float32 saliency,
 * all little-endian.  Matches the consumer's reader byte for byte.
 */
export function writeProposalFile(path: string, proposals: StoredProposal[]): void {
  let n = proposals.length
  let d = n ? proposals[0].feature.length : 0
  for (let p of proposals) {
    if (p.feature.length !== d) {
      throw new Error(`${path}: mixed feature dimensions ${d} and ${p.feature.length}`)
    }
  }
  let buffer = Buffer.alloc(12 + 4 * n * d + 16 * n + 2 * n + 4 * n)
  let at = 0
  at = buffer.writeUInt32LE(FORMAT_VERSION, at)
  at = buffer.writeUInt32LE(n, at)
  at = buffer.writeUInt32LE(d, at)
  for (let p of proposals) {
    for (let value of p.feature) {
      at = buffer.writeFloatLE(value, at)
    }
  }
  for (let p of proposals) {
    for (let value of p.box) {
      at = buffer.writeFloatLE(value, at)
    }
  }
  for (let p of proposals) {
    at = buffer.writeUInt16LE(p.groupId, at)
  }
  for (let p of proposals) {
    at = buffer.writeFloatLE(p.saliency === null ? NaN : p.saliency, at)
  }
  writeFileSync(path, Buffer.concat([Buffer.from(MAGIC_FEATURES, 'ascii'), buffer]))
}

/** Write the dataset-wide image descriptor matrix (n rows of dim floats). */
export function writeImageFeatures(
  path: string,
  descriptors: Float32Array[],
  dim: number,
): void {
  let n = descriptors.length
  let buffer = Buffer.alloc(12 + 4 * n * dim)
  let at = 0
  at = buffer.writeUInt32LE(FORMAT_VERSION, at)
  at = buffer.writeUInt32LE(n, at)
  at = buffer.writeUInt32LE(dim, at)
  for (let row of descriptors) {
    if (row.length !== dim) {
      throw new Error(`${path}: descriptor of dim ${row.length}, expected ${dim}`)
    }
    for (let value of row) {
      at = buffer.writeFloatLE(value, at)
    }
  }
  writeFileSync(path, Buffer.concat([Buffer.from(MAGIC_IMAGE_FEATURES, 'ascii'), buffer]))
}

/**
 * Write the dataset manifest with the consumer's canonical key set.  Ground
 * truth is always empty here: extraction is annotation-free by design.
 */
export function writeManifest(options: {
  path: string
  images: ManifestImage[]
  featureDim: number
  imageFeatureDim: number
  imageFeaturesFile: string
}): void {
  let { path, images, featureDim, imageFeatureDim, imageFeaturesFile } = options
  let doc = {
    format_version: FORMAT_VERSION,
    n_images: images.length,
    feature_dim: featureDim,
    image_feature_dim: imageFeatureDim,
    image_features_file: imageFeaturesFile,
    class_vocabulary: null,
    images: images.map(img => ({
      image_id: img.imageId,
      file: img.file,
      n_proposals: img.nProposals,
      width: img.width,
      height: img.height,
      ground_truth: [],
    })),
  }
  writeFileSync(path, JSON.stringify(doc, null, 2) + '\n')
}
