#!/usr/bin/env node
import { parseArgs } from 'util'
import { defaultConfig } from './config'
import { extract } from './extract'

const USAGE = `usage: regionrank-extract --images <dir> --boxes <file> --out <dir> [options]

Encode an image folder into a regionrank dataset using the box lists as the
region proposals.

options:
  --images <dir>            folder of png/jpeg images (required)
  --boxes <file>            box-list file; repeat to merge several (required)
  --out <dir>               output dataset directory (required)
  --backbone <name>         encoder seed name (default: ${defaultConfig.backbone})
  --descriptor-layer <tag>  stage for the global descriptor (default: ${defaultConfig.descriptorLayer})
  --pooling-layer <tag>     stage for region pooling (default: ${defaultConfig.poolingLayer})
  --max-side <n>            longest image side after downscaling (default: ${defaultConfig.maxSide})
  --roi <n>                 region pooling resolution (default: ${defaultConfig.roiResolution})
`

export async function main(argv: string[]): Promise<number> {
  let parsed
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        images: { type: 'string' },
        boxes: { type: 'string', multiple: true },
        out: { type: 'string' },
        backbone: { type: 'string' },
        'descriptor-layer': { type: 'string' },
        'pooling-layer': { type: 'string' },
        'max-side': { type: 'string' },
        roi: { type: 'string' },
        help: { type: 'boolean' },
      },
    })
  } catch (e) {
    console.error(String(e))
    console.error(USAGE)
    return 2
  }
  let values = parsed.values
  if (values.help) {
    console.log(USAGE)
    return 0
  }
  if (!values.images || !values.boxes?.length || !values.out) {
    console.error('--images, --boxes, and --out are all required')
    console.error(USAGE)
    return 2
  }
  try {
    let report = await extract({
      imageDir: values.images,
      boxLists: values.boxes,
      outDir: values.out,
      config: {
        ...(values.backbone && { backbone: values.backbone }),
        ...(values['descriptor-layer'] && { descriptorLayer: values['descriptor-layer'] }),
        ...(values['pooling-layer'] && { poolingLayer: values['pooling-layer'] }),
        ...(values['max-side'] && { maxSide: Number(values['max-side']) }),
        ...(values.roi && { roiResolution: Number(values.roi) }),
      },
    })
    console.log(
      `wrote ${report.nImages} images (${report.nProposals} proposals, ` +
        `feature dim ${report.featureDim}) to ${report.manifestPath}`,
    )
    if (report.skipped.length) {
      console.log(`skipped ${report.skipped.length} undecodable image(s); see extraction.json`)
    }
    return 0
  } catch (e) {
    console.error(e instanceof Error ? e.message : String(e))
    return 1
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then(code => {
    process.exitCode = code
  })
}
