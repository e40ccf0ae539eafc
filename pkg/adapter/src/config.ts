import { stageChannels } from './backbone'
import { ExtractionError } from './errors'

export interface ExtractionConfig {
  /**
   * Seed name for the deterministic encoder.  Any string is accepted;
   * distinct names give distinct (but individually reproducible) feature
   * spaces, so runs can be compared across differently-seeded encoders.
   * default: 'seeded-v1'
   */
  backbone: string
  /** Encoder stage pooled into the global image descriptor. default: 'conv3' */
  descriptorLayer: string
  /** Encoder stage that region pooling reads from. default: 'conv3' */
  poolingLayer: string
  /**
   * Images whose longest side exceeds this are downscaled to it before
   * encoding; smaller images pass through unscaled. default: 512
   */
  maxSide: number
  /**
   * Region pooling grid resolution R: each region becomes an R x R x channels
   * feature.  default: 7, the classic detection-head pooling size; no single
   * value is canonical, so it is exposed here.
   */
  roiResolution: number
}

export const defaultConfig: ExtractionConfig = {
  backbone: 'seeded-v1',
  descriptorLayer: 'conv3',
  poolingLayer: 'conv3',
  maxSide: 512,
  roiResolution: 7,
}

export function resolveConfig(overrides?: Partial<ExtractionConfig>): ExtractionConfig {
  let cfg = { ...defaultConfig, ...overrides }
  if (!cfg.backbone) {
    throw new ExtractionError('backbone name must be non-empty')
  }
  if (!Number.isInteger(cfg.maxSide) || cfg.maxSide < 8) {
    throw new ExtractionError(`max side must be an integer >= 8, got ${cfg.maxSide}`)
  }
  if (!Number.isInteger(cfg.roiResolution) || cfg.roiResolution < 1) {
    throw new ExtractionError(
      `roi resolution must be a positive integer, got ${cfg.roiResolution}`,
    )
  }
  stageChannels(cfg.descriptorLayer)
  stageChannels(cfg.poolingLayer)
  return cfg
}

/**
 * The feature widths a config will emit: `featureDim` per region proposal and
 * `imageFeatureDim` for the global descriptor.  Emitted file headers always
 * match these numbers.
 */
export function featureDims(cfg: ExtractionConfig): {
  featureDim: number
  imageFeatureDim: number
} {
  return {
    featureDim: cfg.roiResolution * cfg.roiResolution * stageChannels(cfg.poolingLayer),
    imageFeatureDim: stageChannels(cfg.descriptorLayer),
  }
}
