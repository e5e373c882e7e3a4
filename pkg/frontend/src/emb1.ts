/**
 * EMB1 container: the binary embedding format consumed by the Python side.
 *
 * Layout (little endian): magic "EMB1", u32 dimension K, u64 record count,
 * then records of (u32 label id, K float32 components). A sidecar at
 * `<path>.labels.json-lines` carries one JSON-encoded label name per line
 * (line number = label id); trailing dummy labels end with a tab and "D".
 */

import { writeFileSync, readFileSync } from 'node:fs'

export const SIDECAR_SUFFIX = '.labels.json-lines'
const MAGIC = Buffer.from('EMB1', 'ascii')
const HEADER_BYTES = 16

export interface Emb1Record {
  label: number
  vector: Float32Array
}

export function encodeEmb1(dim: number, records: Emb1Record[]): Buffer {
  if (!Number.isInteger(dim) || dim < 1) {
    throw new Error(`dimension must be a positive integer, got ${dim}`)
  }
  const recordBytes = 4 + 4 * dim
  const out = Buffer.alloc(HEADER_BYTES + records.length * recordBytes)
  MAGIC.copy(out, 0)
  out.writeUInt32LE(dim, 4)
  out.writeBigUInt64LE(BigInt(records.length), 8)
  let offset = HEADER_BYTES
  for (const { label, vector } of records) {
    if (vector.length !== dim) {
      throw new Error(`vector has ${vector.length} components, expected ${dim}`)
    }
    out.writeUInt32LE(label >>> 0, offset)
    offset += 4
    for (let i = 0; i < dim; i++) {
      out.writeFloatLE(vector[i], offset)
      offset += 4
    }
  }
  return out
}

export function encodeSidecar(names: string[], dummyCount = 0): string {
  if (names.length === 0) throw new Error('label universe must not be empty')
  const firstDummy = names.length - dummyCount
  return (
    names
      .map((name, i) => JSON.stringify(name) + (i >= firstDummy ? '\tD' : ''))
      .join('\n') + '\n'
  )
}

export function writeEmb1(
  path: string,
  dim: number,
  records: Emb1Record[],
  names: string[],
  dummyCount = 0,
): void {
  writeFileSync(path, encodeEmb1(dim, records))
  writeFileSync(path + SIDECAR_SUFFIX, encodeSidecar(names, dummyCount), 'utf-8')
}

/** Reader used by the tests to validate emitted files independently. */
export function readEmb1(path: string): { dim: number; records: Emb1Record[]; names: string[] } {
  const buf = readFileSync(path)
  if (buf.length < HEADER_BYTES) throw new Error('file shorter than the header')
  if (!buf.subarray(0, 4).equals(MAGIC)) throw new Error('bad magic')
  const dim = buf.readUInt32LE(4)
  const count = Number(buf.readBigUInt64LE(8))
  const recordBytes = 4 + 4 * dim
  if (buf.length !== HEADER_BYTES + count * recordBytes) {
    throw new Error(`expected ${HEADER_BYTES + count * recordBytes} bytes, got ${buf.length}`)
  }
  const records: Emb1Record[] = []
  let offset = HEADER_BYTES
  for (let r = 0; r < count; r++) {
    const label = buf.readUInt32LE(offset)
    offset += 4
    const vector = new Float32Array(dim)
    for (let i = 0; i < dim; i++) {
      vector[i] = buf.readFloatLE(offset)
      offset += 4
    }
    records.push({ label, vector })
  }
  const names = readFileSync(path + SIDECAR_SUFFIX, 'utf-8')
    .split('\n')
    .filter((line) => line.length > 0)
    .map((line) => JSON.parse(line.split('\t')[0]) as string)
  return { dim, records, names }
}
