import * as tf from '@tensorflow/tfjs'
import { ExtractionError } from './errors'
import { uniformWeights } from './prng'

/**
 * Stage layout of the encoder: 3x3 stride-2 convolutions with relu, so each
 * stage halves the spatial grid.  Keys are the layer tags a config can point
 * its descriptor and region pooling at.
 */
const STAGES: { name: string; filters: number }[] = [
  { name: 'conv1', filters: 8 },
  { name: 'conv2', filters: 16 },
  { name: 'conv3', filters: 32 },
]

const KERNEL_SIZE = 3
const INPUT_CHANNELS = 3

export function stageNames(): string[] {
  return STAGES.map(s => s.name)
}

export function stageChannels(tag: string): number {
  return findStage(tag).filters
}

/** Pixels per feature-map cell at a stage: every stage halves the grid. */
export function stageStride(tag: string): number {
  return 2 ** (STAGES.indexOf(findStage(tag)) + 1)
}

function findStage(tag: string): { name: string; filters: number } {
  let stage = STAGES.find(s => s.name === tag)
  if (!stage) {
    throw new ExtractionError(
      `unknown layer tag '${tag}' (available: ${stageNames().join(', ')})`,
    )
  }
  return stage
}

export interface Encoder {
  /** The backbone name the weights were derived from. */
  name: string
  /** Stage tag -> batch-1 NHWC feature map for one image. */
  run: (image: tf.Tensor3D) => { [tag: string]: tf.Tensor4D }
  dispose: () => void
}

/**
 * Build a convolutional encoder whose weights are a pure function of the
 * backbone name: the name seeds every kernel and bias, so identical inputs
 * produce identical features across processes and machines.  Pretrained
 * weights can not be fetched in offline settings; a fixed random projection
 * still separates regions by color and local structure, which is all the
 * downstream matching needs from this adapter.
 */
export function createEncoder(options: { backbone: string }): Encoder {
  let { backbone } = options
  let kernels: tf.Tensor4D[] = []
  let biases: tf.Tensor1D[] = []

  let channelsIn = INPUT_CHANNELS
  for (let stage of STAGES) {
    let fanIn = KERNEL_SIZE * KERNEL_SIZE * channelsIn
    let fanOut = KERNEL_SIZE * KERNEL_SIZE * stage.filters
    let limit = Math.sqrt(6 / (fanIn + fanOut))
    let kernel = uniformWeights(
      `${backbone}/${stage.name}/kernel`,
      fanIn * stage.filters,
      limit,
    )
    let bias = uniformWeights(`${backbone}/${stage.name}/bias`, stage.filters, 0.1)
    kernels.push(
      tf.tensor4d(kernel, [KERNEL_SIZE, KERNEL_SIZE, channelsIn, stage.filters]),
    )
    biases.push(tf.tensor1d(bias))
    channelsIn = stage.filters
  }

  return {
    name: backbone,
    run: image =>
      tf.tidy(() => {
        let maps: { [tag: string]: tf.Tensor4D } = {}
        let x = image.expandDims(0) as tf.Tensor4D
        for (let i = 0; i < STAGES.length; i++) {
          x = tf.relu(tf.add(tf.conv2d(x, kernels[i], 2, 'same'), biases[i]))
          maps[STAGES[i].name] = x
        }
        return maps
      }),
    dispose: () => {
      kernels.forEach(k => k.dispose())
      biases.forEach(b => b.dispose())
    },
  }
}

/** Average the feature map over its spatial grid into one vector per image. */
export function globalDescriptor(map: tf.Tensor4D): Float32Array {
  return tf.tidy(() => tf.mean(map, [1, 2]).dataSync() as Float32Array)
}
