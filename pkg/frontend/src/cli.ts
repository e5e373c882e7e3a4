#!/usr/bin/env node
/** Command-line wrapper around the extractor; exits non-zero on refusal. */

import { parseArgs } from 'node:util'

import { DEFAULT_JOB, extract } from './extract'

function usage(): void {
  console.log(
    'usage: dpcl-extract --input <class-dir-root> --output <file.emb1>\n' +
      '                    [--backbone det-768] [--batch-size 16] [--device cpu]',
  )
}

export function main(argv: string[]): number {
  let values
  try {
    values = parseArgs({
      args: argv,
      options: {
        input: { type: 'string' },
        output: { type: 'string' },
        backbone: { type: 'string', default: DEFAULT_JOB.backbone },
        'batch-size': { type: 'string', default: String(DEFAULT_JOB.batchSize) },
        device: { type: 'string', default: DEFAULT_JOB.device },
        help: { type: 'boolean', default: false },
      },
    }).values
  } catch (err) {
    console.error((err as Error).message)
    usage()
    return 2
  }
  if (values.help) {
    usage()
    return 0
  }
  if (!values.input || !values.output) {
    console.error('both --input and --output are required')
    usage()
    return 2
  }
  try {
    const summary = extract(
      {
        inputDir: values.input,
        output: values.output,
        backbone: values.backbone!,
        batchSize: parseInt(values['batch-size']!, 10),
        device: values.device!,
      },
      (line) => console.error(line),
    )
    console.log(JSON.stringify(summary))
    return 0
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    return 1
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)))
}
