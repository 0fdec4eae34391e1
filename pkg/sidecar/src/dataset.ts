/**
 * Pair-file loading. One JSON object per line with text_a, text_b, label;
 * extra fields (conversation_id, ...) are ignored.
 */

import * as fs from "fs";
import { LabeledPair } from "./model";

export function parsePairLine(line: string, lineNumber: number): LabeledPair {
  let record: any;
  try {
    record = JSON.parse(line);
  } catch (error) {
    throw new Error(`line ${lineNumber}: invalid JSON`);
  }
  if (typeof record?.text_a !== "string" || typeof record?.text_b !== "string") {
    throw new Error(`line ${lineNumber}: text_a/text_b must be strings`);
  }
  const label = record.label;
  if (label !== 0 && label !== 1) {
    throw new Error(`line ${lineNumber}: label must be 0 or 1`);
  }
  return { textA: record.text_a, textB: record.text_b, label };
}

export function readPairFile(path: string): LabeledPair[] {
  const text = fs.readFileSync(path, "utf-8");
  const pairs: LabeledPair[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    pairs.push(parsePairLine(line, i + 1));
  }
  return pairs;
}
