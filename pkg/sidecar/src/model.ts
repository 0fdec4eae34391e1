/**
 * Trainable sentence-pair scorer.
 *
 * The encoder is a frozen hashed-token featurizer (the stand-in for a
 * pretrained text encoder in this offline build): each pair maps to a
 * sparse interaction vector with one bucket per shared token, one per
 * one-side-only token, and aggregate slots (shared-rare total,
 * shared-common total, one-side total, idf-weighted shared total).
 * Rarity and idf come from hashed
 * document frequencies fitted on the fine-tuning corpus and stored with
 * the checkpoint, so the aggregates generalize overlap evidence to tokens
 * never seen in training while per-bucket weights capture recurring ones.
 * Fine-tuning trains a zero-initialized linear head with Adam on binary
 * cross-entropy, with early stopping on held-out loss. Scores are sigmoid
 * outputs in [0, 1] and inference is deterministic.
 */

import { mulberry32, shuffle } from "./rng";
import { fnv1a, tokenize } from "./tokenizer";

export interface ScorerConfig {
  buckets: number;
  learningRate: number;
  batchSize: number;
  maxEpochs: number;
  patience: number;
  heldOutFraction: number;
  rareDfMax: number;
  seed: number;
}

export const DEFAULT_CONFIG: ScorerConfig = {
  buckets: 4096,
  learningRate: 5e-5,
  batchSize: 120,
  maxEpochs: 5,
  patience: 1,
  heldOutFraction: 0.2,
  rareDfMax: 3,
  seed: 0,
};

export interface LabeledPair {
  textA: string;
  textB: string;
  label: number;
}

export interface TrainReport {
  heldOutAccuracy: number;
  heldOutAuc: number | null;
  trainAccuracy: number;
  epochsRun: number;
  bestEpoch: number;
}

interface SparseVector {
  indices: number[];
  values: number[];
}

function bucketCounts(tokens: string[], buckets: number): Map<number, number> {
  const counts = new Map<number, number>();
  for (const token of tokens) {
    const bucket = fnv1a(token) % buckets;
    counts.set(bucket, (counts.get(bucket) ?? 0) + 1);
  }
  return counts;
}

export const AGGREGATE_SLOTS = 4;

/** Interaction encoding; unseen buckets (df 0) count as maximally rare. */
export function encodePair(textA: string, textB: string, buckets: number,
                           df: Map<number, number> = new Map(),
                           documents = 0,
                           rareDfMax = DEFAULT_CONFIG.rareDfMax): SparseVector {
  const countsA = bucketCounts(tokenize(textA), buckets);
  const countsB = bucketCounts(tokenize(textB), buckets);
  const indices: number[] = [];
  const values: number[] = [];
  let sharedRare = 0;
  let sharedCommon = 0;
  let sharedIdf = 0;
  let soloTotal = 0;
  for (const [bucket, countA] of countsA) {
    const countB = countsB.get(bucket);
    if (countB !== undefined) {
      indices.push(bucket);
      const v = Math.min(countA, countB, 3);
      values.push(v);
      const frequency = df.get(bucket) ?? 0;
      if (frequency <= rareDfMax) {
        sharedRare += v;
      } else {
        sharedCommon += v;
      }
      sharedIdf += v * Math.log((1 + documents) / (1 + frequency));
    }
  }
  for (const [bucket, countA] of countsA) {
    if (!countsB.has(bucket)) {
      indices.push(buckets + bucket);
      const v = Math.min(countA, 3);
      values.push(v);
      soloTotal += v;
    }
  }
  for (const [bucket, countB] of countsB) {
    if (!countsA.has(bucket)) {
      indices.push(buckets + bucket);
      const v = Math.min(countB, 3);
      values.push(v);
      soloTotal += v;
    }
  }
  const aggregates = [sharedRare, sharedCommon, soloTotal, sharedIdf];
  for (let slot = 0; slot < aggregates.length; slot++) {
    if (aggregates[slot] !== 0) {
      indices.push(buckets * 2 + slot);
      values.push(aggregates[slot]);
    }
  }
  return { indices, values };
}

function sigmoid(z: number): number {
  if (z >= 0) {
    return 1 / (1 + Math.exp(-Math.min(z, 36.5)));
  }
  const e = Math.exp(Math.max(z, -36.5));
  return e / (1 + e);
}

export function rankAuc(scores: number[], labels: number[]): number | null {
  const order = scores.map((_, i) => i).sort((a, b) =>
    scores[a] === scores[b] ? a - b : scores[a] - scores[b]);
  const ranks = new Array<number>(scores.length);
  let i = 0;
  while (i < order.length) {
    let j = i;
    while (j + 1 < order.length && scores[order[j + 1]] === scores[order[i]]) j++;
    const averageRank = (i + j) / 2 + 1;
    for (let k = i; k <= j; k++) ranks[order[k]] = averageRank;
    i = j + 1;
  }
  let positives = 0;
  let rankSum = 0;
  for (let k = 0; k < labels.length; k++) {
    if (labels[k] === 1) {
      positives += 1;
      rankSum += ranks[k];
    }
  }
  const negatives = labels.length - positives;
  if (positives === 0 || negatives === 0) return null;
  return (rankSum - (positives * (positives + 1)) / 2) / (positives * negatives);
}

export class PairScorer {
  readonly config: ScorerConfig;
  weights: Float64Array; // 2 * buckets + AGGREGATE_SLOTS
  bias: number;
  documentFrequency: Map<number, number>;
  documentCount = 0;
  report: TrainReport | null = null;

  constructor(config: Partial<ScorerConfig> = {}) {
    this.config = { ...DEFAULT_CONFIG, ...config };
    this.weights = new Float64Array(this.config.buckets * 2 + AGGREGATE_SLOTS);
    this.bias = 0;
    this.documentFrequency = new Map();
  }

  encode(textA: string, textB: string): SparseVector {
    return encodePair(textA, textB, this.config.buckets,
      this.documentFrequency, this.documentCount, this.config.rareDfMax);
  }

  logit(pair: SparseVector): number {
    let z = this.bias;
    for (let i = 0; i < pair.indices.length; i++) {
      z += this.weights[pair.indices[i]] * pair.values[i];
    }
    return z;
  }

  score(textA: string, textB: string): number {
    return sigmoid(this.logit(this.encode(textA, textB)));
  }

  private fitDocumentFrequency(pairs: LabeledPair[]): void {
    // one document per distinct text so repeated pair membership does not
    // inflate frequencies
    const documents = new Set<string>();
    for (const pair of pairs) {
      documents.add(pair.textA);
      documents.add(pair.textB);
    }
    this.documentFrequency = new Map();
    this.documentCount = documents.size;
    for (const text of documents) {
      const seen = new Set<number>();
      for (const token of tokenize(text)) {
        seen.add(fnv1a(token) % this.config.buckets);
      }
      for (const bucket of seen) {
        this.documentFrequency.set(
          bucket, (this.documentFrequency.get(bucket) ?? 0) + 1);
      }
    }
  }

  /**
   * Fine-tune the head on labeled pairs. Returns the held-out report, also
   * stored on the instance. Fully deterministic for a given seed.
   */
  train(pairs: LabeledPair[]): TrainReport {
    if (pairs.length < 4) {
      throw new Error(`dataset too small: ${pairs.length} pairs`);
    }
    const classes = new Set(pairs.map((p) => p.label));
    if (classes.size < 2) {
      throw new Error("pair dataset must contain both classes");
    }
    const { buckets, learningRate, batchSize, maxEpochs, patience } = this.config;
    this.fitDocumentFrequency(pairs);
    const encoded = pairs.map((p) => this.encode(p.textA, p.textB));
    const y = pairs.map((p) => p.label);

    const rng = mulberry32(this.config.seed);
    const order = shuffle(pairs.map((_, i) => i), rng);
    let heldCount = Math.max(1, Math.round(this.config.heldOutFraction * pairs.length));
    if (heldCount >= pairs.length) heldCount = pairs.length - 1;
    let heldIdx = order.slice(0, heldCount);
    let trainIdx = order.slice(heldCount);
    const trainClasses = new Set(trainIdx.map((i) => y[i]));
    if (trainClasses.size < 2) {
      trainIdx = order;
      heldIdx = [];
    }

    const slots = buckets * 2 + AGGREGATE_SLOTS;
    const m = new Float64Array(slots + 1);
    const v = new Float64Array(slots + 1);
    const beta1 = 0.9;
    const beta2 = 0.999;
    const epsilon = 1e-8;
    let step = 0;

    let bestLoss = Infinity;
    let bestWeights = this.weights.slice();
    let bestBias = this.bias;
    let bestEpoch = 0;
    let sincePlateau = 0;
    let epochsRun = 0;

    const heldLoss = (): number => {
      if (heldIdx.length === 0) return NaN;
      let total = 0;
      for (const i of heldIdx) {
        const z = this.logit(encoded[i]);
        total += Math.log1p(Math.exp(-Math.abs(z))) + Math.max(z, 0) - y[i] * z;
      }
      return total / heldIdx.length;
    };

    const epochRng = mulberry32(this.config.seed ^ 0x9e3779b9);
    for (let epoch = 1; epoch <= maxEpochs; epoch++) {
      const epochOrder = shuffle(trainIdx.slice(), epochRng);
      for (let start = 0; start < epochOrder.length; start += batchSize) {
        const batch = epochOrder.slice(start, start + batchSize);
        // accumulate sparse gradient of mean BCE over the batch
        const grad = new Map<number, number>();
        let gradBias = 0;
        for (const i of batch) {
          const z = this.logit(encoded[i]);
          const delta = (sigmoid(z) - y[i]) / batch.length;
          gradBias += delta;
          const { indices, values } = encoded[i];
          for (let k = 0; k < indices.length; k++) {
            grad.set(indices[k], (grad.get(indices[k]) ?? 0) + delta * values[k]);
          }
        }
        step += 1;
        const correction1 = 1 - Math.pow(beta1, step);
        const correction2 = 1 - Math.pow(beta2, step);
        for (const [index, g] of grad) {
          m[index] = beta1 * m[index] + (1 - beta1) * g;
          v[index] = beta2 * v[index] + (1 - beta2) * g * g;
          const mHat = m[index] / correction1;
          const vHat = v[index] / correction2;
          this.weights[index] -= (learningRate * mHat) / (Math.sqrt(vHat) + epsilon);
        }
        m[slots] = beta1 * m[slots] + (1 - beta1) * gradBias;
        v[slots] = beta2 * v[slots] + (1 - beta2) * gradBias * gradBias;
        this.bias -= (learningRate * (m[slots] / correction1)) /
          (Math.sqrt(v[slots] / correction2) + epsilon);
      }
      epochsRun = epoch;
      const loss = heldLoss();
      if (Number.isNaN(loss) || loss < bestLoss) {
        bestLoss = Number.isNaN(loss) ? bestLoss : loss;
        bestWeights = this.weights.slice();
        bestBias = this.bias;
        bestEpoch = epoch;
        sincePlateau = 0;
      } else {
        sincePlateau += 1;
        if (sincePlateau >= patience) break;
      }
    }
    this.weights = bestWeights;
    this.bias = bestBias;

    const evaluate = (idx: number[]) => {
      const scores = idx.map((i) => sigmoid(this.logit(encoded[i])));
      const truth = idx.map((i) => y[i]);
      const accuracy = scores.filter(
        (s, k) => (s >= 0.5 ? 1 : 0) === truth[k]).length / Math.max(idx.length, 1);
      return { scores, truth, accuracy };
    };
    const trainEval = evaluate(trainIdx);
    const heldEval = heldIdx.length ? evaluate(heldIdx) : null;
    this.report = {
      heldOutAccuracy: heldEval ? heldEval.accuracy : trainEval.accuracy,
      heldOutAuc: heldEval ? rankAuc(heldEval.scores, heldEval.truth) : null,
      trainAccuracy: trainEval.accuracy,
      epochsRun,
      bestEpoch,
    };
    return this.report;
  }

  toJSON(): object {
    return {
      format: "pair-scorer-checkpoint",
      version: 1,
      config: this.config,
      bias: this.bias,
      weights: Array.from(this.weights),
      documentFrequency: Array.from(this.documentFrequency.entries()),
      documentCount: this.documentCount,
      report: this.report,
    };
  }

  static fromJSON(payload: any): PairScorer {
    if (payload?.format !== "pair-scorer-checkpoint") {
      throw new Error("not a pair-scorer checkpoint");
    }
    const scorer = new PairScorer(payload.config);
    scorer.weights = Float64Array.from(payload.weights);
    scorer.bias = payload.bias;
    scorer.documentFrequency = new Map(payload.documentFrequency ?? []);
    scorer.documentCount = payload.documentCount ?? 0;
    scorer.report = payload.report ?? null;
    return scorer;
  }
}
