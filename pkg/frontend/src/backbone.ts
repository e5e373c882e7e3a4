/**
 * Frozen deterministic vision backbone.
 *
 * A patch-projection encoder whose weights are a pure function of the
 * backbone identifier: images are resized to 64x64, split into 8x8 patches
 * (each augmented with its grid position), projected through a fixed random
 * linear layer with a GELU non-linearity, mean-pooled over patches, and
 * layer-normalised. Identifiers follow `det-<width>` (default `det-768`);
 * the feature width is the number after the dash.
 *
 * This runs fully offline: no weight downloads, identical bytes for
 * identical inputs, which is the contract the private side relies on.
 */

export const INPUT_SIZE = 64
export const PATCH = 8
const PATCH_DIM = PATCH * PATCH * 3 + 2 // RGB patch + (row, col) position

export interface Backbone {
  id: string
  width: number
  embed(pixels: Float32Array): Float32Array
}

/** fnv1a string hash, the seed root for the weight generator. */
function fnv1a(text: string): number {
  let h = 0x811c9dc5
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i)
    h = Math.imul(h, 0x01000193)
  }
  return h >>> 0
}

/** mulberry32: small deterministic PRNG, identical across platforms. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function gelu(x: number): number {
  return 0.5 * x * (1 + Math.tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)))
}

export function createBackbone(id: string): Backbone {
  const match = /^det-(\d+)$/.exec(id)
  if (!match) {
    throw new Error(`unknown backbone ${JSON.stringify(id)}; expected det-<width>, e.g. det-768`)
  }
  const width = parseInt(match[1], 10)
  if (!(width >= 2 && width <= 16384)) {
    throw new Error(`backbone width out of range: ${width}`)
  }
  const rand = mulberry32(fnv1a(id))
  // He-style uniform init, frozen for the lifetime of the identifier
  const scale = Math.sqrt(6 / PATCH_DIM)
  const weights = new Float32Array(width * PATCH_DIM)
  for (let i = 0; i < weights.length; i++) weights[i] = (2 * rand() - 1) * scale
  const bias = new Float32Array(width)
  for (let i = 0; i < width; i++) bias[i] = (2 * rand() - 1) * 0.01

  const patchesPerSide = INPUT_SIZE / PATCH
  const patchCount = patchesPerSide * patchesPerSide

  function embed(pixels: Float32Array): Float32Array {
    if (pixels.length !== INPUT_SIZE * INPUT_SIZE * 3) {
      throw new Error(`expected ${INPUT_SIZE}x${INPUT_SIZE} RGB input`)
    }
    const pooled = new Float64Array(width)
    const patch = new Float64Array(PATCH_DIM)
    for (let py = 0; py < patchesPerSide; py++) {
      for (let px = 0; px < patchesPerSide; px++) {
        let d = 0
        for (let y = 0; y < PATCH; y++) {
          const row = py * PATCH + y
          for (let x = 0; x < PATCH; x++) {
            const col = px * PATCH + x
            const base = 3 * (row * INPUT_SIZE + col)
            patch[d++] = pixels[base]
            patch[d++] = pixels[base + 1]
            patch[d++] = pixels[base + 2]
          }
        }
        patch[d++] = py / patchesPerSide
        patch[d++] = px / patchesPerSide
        for (let o = 0; o < width; o++) {
          let acc = bias[o]
          const off = o * PATCH_DIM
          for (let i = 0; i < PATCH_DIM; i++) acc += weights[off + i] * patch[i]
          pooled[o] += gelu(acc)
        }
      }
    }
    // mean pool then layer norm
    let mean = 0
    for (let o = 0; o < width; o++) {
      pooled[o] /= patchCount
      mean += pooled[o]
    }
    mean /= width
    let variance = 0
    for (let o = 0; o < width; o++) variance += (pooled[o] - mean) ** 2
    const inv = 1 / Math.sqrt(variance / width + 1e-6)
    const out = new Float32Array(width)
    for (let o = 0; o < width; o++) out[o] = (pooled[o] - mean) * inv
    return out
  }

  return { id, width, embed }
}
