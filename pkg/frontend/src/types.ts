/** Figure specification files: structured text validated with zod. */

import { z } from "zod";

export const InputRef = z.object({
  path: z.string(),
  label: z.string(),
});

export const FigureSpecSchema = z.discriminatedUnion("kind", [
  z.object({
    kind: z.literal("tacf"),
    out: z.string(),
    inputs: z.array(InputRef).min(1),
    anchor_s: z.number().optional(), // restrict to one anchor when set
  }),
  z.object({
    kind: z.literal("dpsd"),
    out: z.string(),
    inputs: z.array(InputRef).min(1),
    anchor_s: z.number().optional(),
    floor_db: z.number().default(-80),
  }),
  z.object({
    kind: z.literal("tsi-cdf"),
    out: z.string(),
    inputs: z.array(InputRef).min(1),
  }),
  z.object({
    kind: z.literal("cdf-panel"),
    out: z.string(),
    inputs: z.array(InputRef).min(1), // parameter-sample dumps
    table: z.string(),                // parameter table for analytic overlays
    max_points: z.number().int().positive().default(400),
  }),
]);

export type FigureSpec = z.infer<typeof FigureSpecSchema>;
