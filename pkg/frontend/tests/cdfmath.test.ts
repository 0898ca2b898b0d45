import { describe, expect, it } from "vitest";
import { analyticCdf, empiricalCdf, erf, gammainc, ksDistance } from "../src/cdfmath";

describe("erf", () => {
  // reference values computed with a high-precision library
  it("matches reference points", () => {
    expect(erf(0.5)).toBeCloseTo(0.5204998778130465, 6);
    expect(erf(1.7)).toBeCloseTo(0.9837904585907745, 6);
    expect(erf(-1.7)).toBeCloseTo(-0.9837904585907745, 6);
    expect(erf(0)).toBe(0);
  });
});

describe("gammainc", () => {
  it("reduces to the exponential CDF at shape 1", () => {
    expect(gammainc(1.0, 0.7)).toBeCloseTo(0.5034146962085905, 10);
  });

  it("matches reference values for fractional and large shapes", () => {
    expect(gammainc(0.8223, 1.9232 * 0.5)).toBeCloseTo(0.6962976485847246, 9);
    expect(gammainc(3.5, 7.2)).toBeCloseTo(0.9554925004854492, 9);
  });

  it("is zero at the origin and rejects bad domains", () => {
    expect(gammainc(0.7, 0)).toBe(0);
    expect(() => gammainc(0.7, -1)).toThrow();
  });
});

describe("analyticCdf", () => {
  it("logistic median and quartile", () => {
    const cdf = analyticCdf({ distribution: "logistic", mu: 0.7534, gamma: 0.5236 });
    expect(cdf(0.7534)).toBeCloseTo(0.5, 12);
    expect(cdf(0.7534 + 0.5236 * Math.log(3))).toBeCloseTo(0.75, 10);
  });

  it("rayleigh median", () => {
    const cdf = analyticCdf({ distribution: "rayleigh", sigma: 0.3541 });
    expect(cdf(0.3541 * Math.sqrt(2 * Math.log(2)))).toBeCloseTo(0.5, 10);
  });

  it("gaussian one-sigma point", () => {
    const cdf = analyticCdf({ distribution: "gaussian", mu: -0.3215, sigma: 0.5124 });
    expect(cdf(-0.3215 + 0.5124)).toBeCloseTo(0.8413447460685429, 5);
  });
});

describe("ksDistance", () => {
  it("is zero-ish for the inverse-transform of the same cdf", () => {
    // deterministic uniform grid through the inverse logistic
    const mu = 0.2, gamma = 0.8;
    const samples: number[] = [];
    const n = 2000;
    for (let i = 0; i < n; i++) {
      const u = (i + 0.5) / n;
      samples.push(mu + gamma * Math.log(u / (1 - u)));
    }
    const cdf = analyticCdf({ distribution: "logistic", mu, gamma });
    expect(ksDistance(samples, cdf)).toBeLessThan(1 / n);
  });

  it("detects a wrong distribution", () => {
    const cdfA = analyticCdf({ distribution: "logistic", mu: 0, gamma: 1 });
    const samples: number[] = [];
    for (let i = 0; i < 500; i++) {
      const u = (i + 0.5) / 500;
      samples.push(2 + Math.log(u / (1 - u)));
    }
    expect(ksDistance(samples, cdfA)).toBeGreaterThan(0.3);
  });
});

describe("empiricalCdf", () => {
  it("steps to one", () => {
    const steps = empiricalCdf([3, 1, 2]);
    expect(steps).toEqual([[1, 1 / 3], [2, 2 / 3], [3, 1]]);
  });
});
