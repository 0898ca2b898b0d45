/**
 * Analytic CDFs of the simulator's parameter families, plus the
 * Kolmogorov-Smirnov distance used to annotate CDF overlay panels.
 */

/** Error function via the regularized incomplete gamma: erf(x) = P(1/2, x^2). */
export function erf(x: number): number {
  if (x === 0) return 0;
  const sign = x < 0 ? -1 : 1;
  return sign * gammainc(0.5, x * x);
}

function gammaln(a: number): number {
  // Lanczos approximation
  const g = [
    676.5203681218851, -1259.1392167224028, 771.32342877765313,
    -176.61502916214059, 12.507343278686905, -0.13857109526572012,
    9.9843695780195716e-6, 1.5056327351493116e-7,
  ];
  if (a < 0.5) {
    return Math.log(Math.PI / Math.sin(Math.PI * a)) - gammaln(1 - a);
  }
  a -= 1;
  let x = 0.99999999999980993;
  for (let i = 0; i < g.length; i++) {
    x += g[i] / (a + i + 1);
  }
  const t = a + g.length - 0.5;
  return 0.5 * Math.log(2 * Math.PI) + (a + 0.5) * Math.log(t) - t + Math.log(x);
}

/** Regularized lower incomplete gamma P(a, x) via series / continued fraction. */
export function gammainc(a: number, x: number): number {
  if (x < 0 || a <= 0) throw new Error(`gammainc domain: a=${a}, x=${x}`);
  if (x === 0) return 0;
  const lnGa = gammaln(a);
  if (x < a + 1) {
    // series representation
    let term = 1 / a;
    let sum = term;
    for (let n = 1; n < 500; n++) {
      term *= x / (a + n);
      sum += term;
      if (Math.abs(term) < Math.abs(sum) * 1e-15) break;
    }
    return sum * Math.exp(-x + a * Math.log(x) - lnGa);
  }
  // continued fraction for Q(a, x), Lentz's method
  const tiny = 1e-300;
  let b = x + 1 - a;
  let c = 1 / tiny;
  let d = 1 / b;
  let h = d;
  for (let i = 1; i < 500; i++) {
    const an = -i * (i - a);
    b += 2;
    d = an * d + b;
    if (Math.abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (Math.abs(c) < tiny) c = tiny;
    d = 1 / d;
    const del = d * c;
    h *= del;
    if (Math.abs(del - 1) < 1e-15) break;
  }
  const q = Math.exp(-x + a * Math.log(x) - lnGa) * h;
  return 1 - q;
}

export type DistParams = {
  distribution: "logistic" | "gamma" | "rayleigh" | "gaussian";
  mu?: number;
  gamma?: number;
  alpha?: number;
  beta?: number;
  sigma?: number;
};

export function analyticCdf(p: DistParams): (x: number) => number {
  switch (p.distribution) {
    case "logistic": {
      const { mu, gamma } = p;
      if (mu === undefined || gamma === undefined) throw new Error("logistic needs mu, gamma");
      return (x) => 1 / (1 + Math.exp(-(x - mu) / gamma));
    }
    case "gaussian": {
      const { mu, sigma } = p;
      if (mu === undefined || sigma === undefined) throw new Error("gaussian needs mu, sigma");
      return (x) => 0.5 * (1 + erf((x - mu) / (sigma * Math.SQRT2)));
    }
    case "rayleigh": {
      const { sigma } = p;
      if (sigma === undefined) throw new Error("rayleigh needs sigma");
      return (x) => (x <= 0 ? 0 : 1 - Math.exp(-(x * x) / (2 * sigma * sigma)));
    }
    case "gamma": {
      const { alpha, beta } = p;
      if (alpha === undefined || beta === undefined) throw new Error("gamma needs alpha, beta");
      return (x) => (x <= 0 ? 0 : gammainc(alpha, beta * x));
    }
  }
}

/** Exact two-sided KS distance between samples and an analytic CDF. */
export function ksDistance(samples: readonly number[], cdf: (x: number) => number): number {
  const x = [...samples].sort((a, b) => a - b);
  const n = x.length;
  if (n === 0) throw new Error("ksDistance: empty sample");
  let sup = 0;
  for (let i = 0; i < n; i++) {
    const f = cdf(x[i]);
    sup = Math.max(sup, (i + 1) / n - f, f - i / n);
  }
  return sup;
}

/** Empirical CDF step points (x sorted, F after each step). */
export function empiricalCdf(samples: readonly number[]): Array<[number, number]> {
  const x = [...samples].sort((a, b) => a - b);
  return x.map((v, i) => [v, (i + 1) / x.length]);
}
