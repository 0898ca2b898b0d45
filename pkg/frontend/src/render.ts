/** Server-side SVG rendering; byte-deterministic for identical inputs. */

import * as echarts from "echarts";
import * as fs from "node:fs";
import * as path from "node:path";
import type { BuiltFigure } from "./figures";

export const WIDTH = 860;
export const HEIGHT = 540;

export function renderSvg(figure: BuiltFigure): string {
  const chart = echarts.init(null as never, null, {
    renderer: "svg",
    ssr: true,
    width: WIDTH,
    height: HEIGHT,
  });
  try {
    chart.setOption(figure.option);
    // the renderer numbers its CSS classes with process-global counters;
    // renumber by first appearance so identical figures give
    // byte-identical files
    const seen = new Map<string, string>();
    return chart.renderToSVGString().replace(/\bzr\d+-cls-\d+\b/g, (m) => {
      let mapped = seen.get(m);
      if (mapped === undefined) {
        mapped = `zr-cls-${seen.size}`;
        seen.set(m, mapped);
      }
      return mapped;
    });
  } finally {
    chart.dispose();
  }
}

export function renderToFile(figure: BuiltFigure, outPath: string): void {
  const svg = renderSvg(figure);
  fs.mkdirSync(path.dirname(path.resolve(outPath)), { recursive: true });
  fs.writeFileSync(outPath, svg, "utf-8");
}
