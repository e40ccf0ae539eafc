import * as tf from '@tensorflow/tfjs'

/**
 * Pool one fixed-size feature out of a shared feature map for every region.
 *
 * Each pixel-space box is mapped through the image scale and the stage stride
 * into feature-map cells, bilinearly sampled on a 2R x 2R grid, and max-pooled
 * down to R x R x channels — region pooling in the detection-head style, with
 * sampling instead of cell snapping so tiny regions stay well-defined.
 * Returns one flat float32 vector per box, in box order.
 */
export function poolRegions(options: {
  /** Batch-1 NHWC feature map of the encoded image. */
  map: tf.Tensor4D
  /** Boxes as [xMin, yMin, xMax, yMax] in original image pixels. */
  boxes: [number, number, number, number][]
  /** Resize factor the image went through before encoding. */
  scale: number
  /** Total pixels per feature-map cell at the pooled stage. */
  stride: number
  /** Output grid resolution R. */
  resolution: number
}): Float32Array[] {
  let { map, boxes, scale, stride, resolution } = options
  if (boxes.length === 0) {
    return []
  }
  let [, height, width, channels] = map.shape
  let toCell = scale / stride
  let normalized = boxes.map(([xMin, yMin, xMax, yMax]) => [
    normalize(yMin * toCell, height),
    normalize(xMin * toCell, width),
    normalize(yMax * toCell, height),
    normalize(xMax * toCell, width),
  ])
  let pooled = tf.tidy(() => {
    let crops = tf.image.cropAndResize(
      map,
      tf.tensor2d(normalized, [boxes.length, 4]),
      tf.zeros([boxes.length], 'int32'),
      [2 * resolution, 2 * resolution],
      'bilinear',
    )
    return tf.maxPool(crops, 2, 2, 'valid').dataSync() as Float32Array
  })
  let size = resolution * resolution * channels
  return boxes.map((_, i) => pooled.slice(i * size, (i + 1) * size))
}

/** Feature-map cell coordinate -> the [0, 1] range cropAndResize expects. */
function normalize(cell: number, cells: number): number {
  if (cells <= 1) {
    return 0
  }
  return Math.min(1, Math.max(0, cell / (cells - 1)))
}
