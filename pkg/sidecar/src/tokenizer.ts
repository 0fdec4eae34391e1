/**
 * Text preparation for the pair scorer.
 *
 * Texts are truncated to the first 512 whitespace tokens (the model never
 * evaluates more), lowercased, and split on non-alphanumeric runs; tokens
 * shorter than 2 characters are dropped.
 */

export const MAX_SEQUENCE_TOKENS = 512;

export function truncate(text: string, maxTokens = MAX_SEQUENCE_TOKENS): string {
  const pieces = text.split(/\s+/).filter((p) => p.length > 0);
  if (pieces.length <= maxTokens) return text;
  return pieces.slice(0, maxTokens).join(" ");
}

export function tokenize(text: string): string[] {
  const matches = truncate(text).toLowerCase().match(/[0-9a-z]+/g);
  if (!matches) return [];
  return matches.filter((t) => t.length >= 2);
}

/** FNV-1a 32-bit hash, stable across runs and platforms. */
export function fnv1a(token: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < token.length; i++) {
    hash ^= token.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193);
  }
  return hash >>> 0;
}
