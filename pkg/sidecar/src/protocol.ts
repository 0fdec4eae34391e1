/**
 * Line-delimited JSON protocol over stdio.
 *
 * Requests: {"type":"hello","version":1} answered by
 * {"type":"ready","scorer":name}; {"type":"score","pair_id":...,
 * "text_a":...,"text_b":...} answered by {"type":"result","pair_id":...,
 * "score":...}; {"type":"bye"} ends the session. A malformed request gets
 * {"type":"error","pair_id":...,"message":...} and the loop continues.
 */

import { PairScorer } from "./model";

export const PROTOCOL_VERSION = 1;
export const SCORER_NAME = "hashed-pair-scorer";

export interface HandlerResult {
  replies: object[];
  done: boolean;
}

export function handleLine(line: string, scorer: PairScorer): HandlerResult {
  let message: any;
  try {
    message = JSON.parse(line);
  } catch {
    return {
      replies: [{ type: "error", pair_id: null, message: "invalid JSON" }],
      done: false,
    };
  }
  if (typeof message !== "object" || message === null) {
    return {
      replies: [{ type: "error", pair_id: null, message: "not an object" }],
      done: false,
    };
  }
  const pairId = typeof message.pair_id === "string" ? message.pair_id : null;
  switch (message.type) {
    case "hello":
      return {
        replies: [{ type: "ready", scorer: SCORER_NAME }],
        done: false,
      };
    case "bye":
      return { replies: [], done: true };
    case "score": {
      if (pairId === null || typeof message.text_a !== "string" ||
          typeof message.text_b !== "string") {
        return {
          replies: [{
            type: "error",
            pair_id: pairId,
            message: "score needs pair_id, text_a, text_b",
          }],
          done: false,
        };
      }
      const score = scorer.score(message.text_a, message.text_b);
      return {
        replies: [{ type: "result", pair_id: pairId, score }],
        done: false,
      };
    }
    default:
      return {
        replies: [{
          type: "error",
          pair_id: pairId,
          message: `unknown message type ${String(message.type)}`,
        }],
        done: false,
      };
  }
}
