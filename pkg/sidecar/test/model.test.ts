import { describe, expect, it } from "vitest";
import { LabeledPair, PairScorer, encodePair, rankAuc } from "../src/model";
import { mulberry32 } from "../src/rng";

function plantedPairs(n: number, seed: number, keyword = "zephyrite"): LabeledPair[] {
  const rng = mulberry32(seed);
  const words = () =>
    Array.from({ length: 10 }, () => `word${Math.floor(rng() * 120)}`);
  const pairs: LabeledPair[] = [];
  for (let i = 0; i < n; i++) {
    const label = i % 2;
    const a = words();
    const b = words();
    if (label === 1) {
      a.splice(Math.floor(rng() * (a.length + 1)), 0, keyword);
      b.splice(Math.floor(rng() * (b.length + 1)), 0, keyword);
    }
    pairs.push({ textA: a.join(" "), textB: b.join(" "), label });
  }
  return pairs;
}

describe("encodePair", () => {
  it("separates shared from one-side buckets and emits aggregates", () => {
    const { indices, values } = encodePair("apple banana", "banana cherry", 64);
    const byIndex = new Map(indices.map((idx, k) => [idx, values[k]]));
    const shared = indices.filter((i) => i < 64);
    const solo = indices.filter((i) => i >= 64 && i < 128);
    expect(shared.length).toBe(1); // banana
    expect(solo.length).toBe(2); // apple, cherry
    expect(byIndex.get(128)).toBe(1); // shared-rare total (df table empty)
    expect(byIndex.get(130)).toBe(2); // one-side total
    expect(byIndex.has(129)).toBe(false); // no shared-common tokens
  });

  it("is deterministic", () => {
    expect(encodePair("x yz 12ab", "12ab q", 256))
      .toEqual(encodePair("x yz 12ab", "12ab q", 256));
  });
});

describe("rankAuc", () => {
  it("counts ties as half", () => {
    // pairs: 0.9>0.5, 0.9>0.1, 0.5=0.5 (half), 0.5>0.1 -> 3.5 of 4
    expect(rankAuc([0.9, 0.5, 0.5, 0.1], [1, 1, 0, 0])).toBeCloseTo(0.875, 12);
  });

  it("is null for single-class labels", () => {
    expect(rankAuc([0.2, 0.4], [1, 1])).toBeNull();
  });
});

describe("PairScorer", () => {
  it("scores in [0, 1] before and after training", () => {
    const scorer = new PairScorer({ seed: 1 });
    expect(scorer.score("", "")).toBe(0.5);
    scorer.train(plantedPairs(400, 2));
    for (const pair of plantedPairs(50, 3)) {
      const score = scorer.score(pair.textA, pair.textB);
      expect(score).toBeGreaterThanOrEqual(0);
      expect(score).toBeLessThanOrEqual(1);
    }
  });

  it("reaches high held-out AUC on planted-keyword pairs", () => {
    // the 5e-5 default mirrors transformer fine-tuning; a from-scratch
    // linear head needs a proportionate step size within the 5-epoch cap
    const scorer = new PairScorer({ seed: 5, learningRate: 0.1 });
    const report = scorer.train(plantedPairs(2000, 6));
    expect(report.heldOutAuc).not.toBeNull();
    expect(report.heldOutAuc!).toBeGreaterThanOrEqual(0.95);
  });

  it("stays at chance on shuffled labels", () => {
    const pairs = plantedPairs(2000, 7);
    const rng = mulberry32(8);
    const labels = pairs.map((p) => p.label);
    for (let i = labels.length - 1; i > 0; i--) {
      const j = Math.floor(rng() * (i + 1));
      [labels[i], labels[j]] = [labels[j], labels[i]];
    }
    const shuffled = pairs.map((p, i) => ({ ...p, label: labels[i] }));
    const report = new PairScorer({ seed: 9, learningRate: 0.1 }).train(shuffled);
    expect(report.heldOutAuc!).toBeGreaterThanOrEqual(0.45);
    expect(report.heldOutAuc!).toBeLessThanOrEqual(0.55);
  });

  it("is reproducible for a fixed seed", () => {
    const pairs = plantedPairs(600, 10);
    const first = new PairScorer({ seed: 11 });
    const second = new PairScorer({ seed: 11 });
    expect(first.train(pairs)).toEqual(second.train(pairs));
    expect(Array.from(first.weights)).toEqual(Array.from(second.weights));
  });

  it("rejects single-class and tiny datasets", () => {
    const ones = plantedPairs(50, 12).map((p) => ({ ...p, label: 1 }));
    expect(() => new PairScorer().train(ones)).toThrow(/both classes/);
    expect(() => new PairScorer().train(ones.slice(0, 2))).toThrow(/too small/);
  });

  it("round-trips through checkpoints with identical scores", () => {
    const scorer = new PairScorer({ seed: 13 });
    scorer.train(plantedPairs(400, 14));
    const clone = PairScorer.fromJSON(
      JSON.parse(JSON.stringify(scorer.toJSON())));
    for (const pair of plantedPairs(25, 15)) {
      expect(clone.score(pair.textA, pair.textB))
        .toBe(scorer.score(pair.textA, pair.textB));
    }
  });
});
