/**
 * Image loading: PNG (via pngjs) and binary PPM (P6), decoded to RGB floats
 * in [0, 1] and bilinearly resized to the backbone's input resolution.
 */

import { readFileSync } from 'node:fs'
import { PNG } from 'pngjs'

export interface RgbImage {
  width: number
  height: number
  /** row-major, 3 channels per pixel, values in [0, 1] */
  data: Float32Array
}

export const SUPPORTED_EXTENSIONS = ['.png', '.ppm']

function decodePng(buf: Buffer): RgbImage {
  const png = PNG.sync.read(buf)
  const data = new Float32Array(png.width * png.height * 3)
  for (let p = 0; p < png.width * png.height; p++) {
    data[3 * p] = png.data[4 * p] / 255
    data[3 * p + 1] = png.data[4 * p + 1] / 255
    data[3 * p + 2] = png.data[4 * p + 2] / 255
  }
  return { width: png.width, height: png.height, data }
}

function decodePpm(buf: Buffer): RgbImage {
  // P6 header: magic, width, height, maxval, single whitespace, then raw RGB
  let pos = 0
  const token = (): string => {
    while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++
    if (buf[pos] === 0x23) {
      // comment line
      while (pos < buf.length && buf[pos] !== 0x0a) pos++
      return token()
    }
    const start = pos
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++
    return buf.subarray(start, pos).toString('ascii')
  }
  const magic = token()
  if (magic !== 'P6') throw new Error(`unsupported PPM variant ${magic}`)
  const width = parseInt(token(), 10)
  const height = parseInt(token(), 10)
  const maxval = parseInt(token(), 10)
  pos++ // single whitespace after maxval
  if (!(width > 0 && height > 0 && maxval > 0 && maxval < 65536)) {
    throw new Error('bad PPM header')
  }
  if (maxval > 255) throw new Error('16-bit PPM not supported')
  const need = width * height * 3
  if (buf.length - pos < need) throw new Error('truncated PPM payload')
  const data = new Float32Array(need)
  for (let i = 0; i < need; i++) data[i] = buf[pos + i] / maxval
  return { width, height, data }
}

export function loadImage(path: string): RgbImage {
  const buf = readFileSync(path)
  if (path.toLowerCase().endsWith('.ppm')) return decodePpm(buf)
  return decodePng(buf)
}

/** Bilinear resize to size x size (the backbone's fixed input). */
export function resize(image: RgbImage, size: number): Float32Array {
  const out = new Float32Array(size * size * 3)
  const { width, height, data } = image
  for (let y = 0; y < size; y++) {
    const sy = ((y + 0.5) * height) / size - 0.5
    const y0 = Math.max(0, Math.floor(sy))
    const y1 = Math.min(height - 1, y0 + 1)
    const wy = Math.min(1, Math.max(0, sy - y0))
    for (let x = 0; x < size; x++) {
      const sx = ((x + 0.5) * width) / size - 0.5
      const x0 = Math.max(0, Math.floor(sx))
      const x1 = Math.min(width - 1, x0 + 1)
      const wx = Math.min(1, Math.max(0, sx - x0))
      for (let c = 0; c < 3; c++) {
        const v00 = data[3 * (y0 * width + x0) + c]
        const v01 = data[3 * (y0 * width + x1) + c]
        const v10 = data[3 * (y1 * width + x0) + c]
        const v11 = data[3 * (y1 * width + x1) + c]
        out[3 * (y * size + x) + c] =
          (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11)
      }
    }
  }
  return out
}
