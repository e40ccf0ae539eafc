export { createEncoder, globalDescriptor, stageChannels, stageNames, stageStride } from './backbone'
export { parseBoxList, readBoxLists } from './boxlist'
export type { BoxEntry } from './boxlist'
export { defaultConfig, featureDims, resolveConfig } from './config'
export type { ExtractionConfig } from './config'
export { BoxListError, ExtractionError, ImageDecodeError } from './errors'
export { extract } from './extract'
export type { ExtractionReport, SkippedImage } from './extract'
export { FORMAT_VERSION, writeImageFeatures, writeManifest, writeProposalFile } from './format'
export type { ManifestImage, StoredProposal } from './format'
export { decodeImageFile, toInputTensor } from './image'
export type { DecodedImage } from './image'
export { seededRandom, uniformWeights } from './prng'
export { poolRegions } from './roi'
