/**
 * Convert a class-per-directory image folder into an EMB1 embedding file.
 *
 * Label ids follow the lexicographic order of the class directory names;
 * within a class, images are processed in lexicographic filename order so
 * the output is reproducible. Unreadable images are skipped and counted;
 * a job that yields zero records refuses to write anything.
 */

import { readdirSync, statSync } from 'node:fs'
import { join, extname } from 'node:path'

import { Backbone, INPUT_SIZE, createBackbone } from './backbone'
import { Emb1Record, writeEmb1 } from './emb1'
import { SUPPORTED_EXTENSIONS, loadImage, resize } from './images'

export interface ExtractJob {
  inputDir: string
  backbone: string
  output: string
  batchSize: number
  device: string
}

export interface ExtractSummary {
  records: number
  classes: string[]
  dim: number
  skipped: number
}

export const DEFAULT_JOB: Pick<ExtractJob, 'backbone' | 'batchSize' | 'device'> = {
  backbone: 'det-768',
  batchSize: 16,
  device: 'cpu',
}

function listClassDirs(inputDir: string): string[] {
  const entries = readdirSync(inputDir)
    .filter((name) => statSync(join(inputDir, name)).isDirectory())
    .sort()
  if (entries.length === 0) {
    throw new Error(`no class directories under ${inputDir}`)
  }
  return entries
}

function listImages(dir: string): string[] {
  return readdirSync(dir)
    .filter((name) => SUPPORTED_EXTENSIONS.includes(extname(name).toLowerCase()))
    .sort()
}

export function extract(job: ExtractJob, log: (line: string) => void = () => {}): ExtractSummary {
  const backbone: Backbone = createBackbone(job.backbone)
  if (job.batchSize < 1) throw new Error('batch size must be >= 1')
  log(`backbone ${backbone.id} (width ${backbone.width}), device hint ${job.device}`)

  const classes = listClassDirs(job.inputDir)
  const records: Emb1Record[] = []
  let skipped = 0
  for (let label = 0; label < classes.length; label++) {
    const dir = join(job.inputDir, classes[label])
    const files = listImages(dir)
    for (let start = 0; start < files.length; start += job.batchSize) {
      for (const name of files.slice(start, start + job.batchSize)) {
        try {
          const pixels = resize(loadImage(join(dir, name)), INPUT_SIZE)
          records.push({ label, vector: backbone.embed(pixels) })
        } catch (err) {
          skipped++
          log(`skipping ${join(dir, name)}: ${(err as Error).message}`)
        }
      }
    }
  }
  if (records.length === 0) {
    throw new Error(`refusing to write ${job.output}: no readable images (${skipped} skipped)`)
  }
  writeEmb1(job.output, backbone.width, records, classes)
  log(`wrote ${records.length} records (${skipped} skipped) to ${job.output}`)
  return { records: records.length, classes, dim: backbone.width, skipped }
}
