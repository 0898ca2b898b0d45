/**
 * Figure regeneration CLI: `render <figure-spec.json>`.
 *
 * Exit codes: 0 rendered, 2 spec/input validation failure, 1 runtime error.
 */

import * as fs from "node:fs";
import { ZodError } from "zod";
import { buildFigure } from "./figures";
import { InputError } from "./io";
import { renderToFile } from "./render";
import { FigureSpecSchema } from "./types";

export function run(argv: string[]): number {
  if (argv.length !== 1 || argv[0] === "--help") {
    process.stderr.write("usage: render <figure-spec.json>\n");
    return 2;
  }
  const specPath = argv[0];
  try {
    if (!fs.existsSync(specPath)) {
      throw new InputError(`figure spec does not exist: ${specPath}`);
    }
    let raw: unknown;
    try {
      raw = JSON.parse(fs.readFileSync(specPath, "utf-8"));
    } catch (err) {
      throw new InputError(`figure spec is not valid JSON: ${(err as Error).message}`);
    }
    const spec = FigureSpecSchema.parse(raw);
    const figure = buildFigure(spec);
    renderToFile(figure, spec.out);
    const gaps = figure.ksGaps
      ? " " + Object.entries(figure.ksGaps).map(([k, v]) => `ks[${k}]=${v.toFixed(4)}`).join(" ")
      : "";
    process.stdout.write(`rendered ${spec.kind} -> ${spec.out}${gaps}\n`);
    return 0;
  } catch (err) {
    if (err instanceof InputError || err instanceof ZodError) {
      process.stderr.write(`validation error: ${(err as Error).message}\n`);
      return 2;
    }
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(run(process.argv.slice(2)));
}
