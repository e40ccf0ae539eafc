import * as tf from '@tensorflow/tfjs'
import { readFileSync } from 'fs'
import * as jpeg from 'jpeg-js'
import { PNG } from 'pngjs'
import { ImageDecodeError } from './errors'

/** Decoded pixels in row-major RGBA order, one byte per channel. */
export interface DecodedImage {
  width: number
  height: number
  data: Uint8Array
}

const PNG_MAGIC = Buffer.from([0x89, 0x50, 0x4e, 0x47])
const JPEG_MAGIC = Buffer.from([0xff, 0xd8, 0xff])

/**
 * Decode a PNG or JPEG file into RGBA bytes.  The format is sniffed from the
 * payload's magic bytes, not the file name, so mislabelled files still load.
 */
export function decodeImageFile(file: string): DecodedImage {
  let payload: Buffer
  try {
    payload = readFileSync(file)
  } catch (e) {
    throw new ImageDecodeError(`${file}: ${String(e)}`)
  }
  try {
    if (payload.subarray(0, 4).equals(PNG_MAGIC)) {
      let png = PNG.sync.read(payload)
      return { width: png.width, height: png.height, data: png.data }
    }
    if (payload.subarray(0, 3).equals(JPEG_MAGIC)) {
      let img = jpeg.decode(payload, { useTArray: true, formatAsRGBA: true })
      return { width: img.width, height: img.height, data: img.data }
    }
  } catch (e) {
    throw new ImageDecodeError(`${file}: corrupt image payload: ${String(e)}`)
  }
  throw new ImageDecodeError(`${file}: not a png or jpeg payload`)
}

/**
 * Turn decoded pixels into the encoder's input: an RGB float tensor in
 * [0, 1], downscaled so the longest side is at most `maxSide` (images already
 * small enough pass through at scale 1).  Returns the applied scale so box
 * coordinates can follow the image into feature space.
 */
export function toInputTensor(
  image: DecodedImage,
  maxSide: number,
): { input: tf.Tensor3D; scale: number } {
  let { width, height, data } = image
  let rgb = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    rgb[i * 3] = data[i * 4] / 255
    rgb[i * 3 + 1] = data[i * 4 + 1] / 255
    rgb[i * 3 + 2] = data[i * 4 + 2] / 255
  }
  let full = tf.tensor3d(rgb, [height, width, 3])
  let longest = Math.max(width, height)
  if (longest <= maxSide) {
    return { input: full, scale: 1 }
  }
  let scale = maxSide / longest
  let resized = tf.tidy(() =>
    tf.image.resizeBilinear(full, [
      Math.max(1, Math.round(height * scale)),
      Math.max(1, Math.round(width * scale)),
    ]),
  )
  full.dispose()
  return { input: resized, scale }
}
