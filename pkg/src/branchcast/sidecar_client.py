"""Client for an external reply-to scorer speaking line-delimited JSON.

The external scorer is a child process.  The client sends
``{"type": "hello", "version": 1}`` on its stdin and expects
``{"type": "ready", "scorer": name}``; scoring requests are
``{"type": "score", "pair_id": ..., "text_a": ..., "text_b": ...}`` answered
by ``{"type": "result", "pair_id": ..., "score": ...}`` in any order, and
``{"type": "bye"}`` ends the session.  Any other message type from the
scorer is a protocol violation.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
import time
from typing import Sequence

from .errors import ProtocolViolationError, SidecarTransportError
from .scoring import PairItem, ScoreCache

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_BATCH_TIMEOUT = 120.0


class SidecarClient:
    """Spawns and talks to an external scorer process.

    Writes to the child are serialized; responses are matched by pair_id, so
    out-of-order completion is fine.  Use as a context manager to guarantee
    the bye/terminate sequence runs.
    """

    def __init__(self, command: Sequence[str],
                 batch_timeout: float = DEFAULT_BATCH_TIMEOUT):
        self.command = list(command)
        self.batch_timeout = batch_timeout
        self.scorer_name = "external"
        self._process: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._reader: threading.Thread | None = None
        self._write_lock = threading.Lock()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        if self._process is not None:
            return
        logger.info("starting external scorer: %s", " ".join(self.command))
        self._process = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._reader = threading.Thread(target=self._pump_stdout, daemon=True)
        self._reader.start()
        self._send({"type": "hello", "version": PROTOCOL_VERSION})
        message = self._next_message(self.batch_timeout)
        if message.get("type") != "ready":
            raise ProtocolViolationError(
                f"expected ready after hello, got {message!r}")
        self.scorer_name = str(message.get("scorer", "external"))

    def close(self) -> None:
        process = self._process
        if process is None:
            return
        try:
            if process.poll() is None:
                self._send({"type": "bye"})
                process.wait(timeout=10)
        except (SidecarTransportError, subprocess.TimeoutExpired):
            process.kill()
        finally:
            self._process = None

    def __enter__(self) -> "SidecarClient":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- scoring -----------------------------------------------------------

    def score_batch(self, items: Sequence[PairItem]) -> list[float]:
        scores = self.score_pairs([
            (f"{item.child_id}::{item.parent_id}", item.text_a, item.text_b)
            for item in items
        ])
        return [scores[f"{item.child_id}::{item.parent_id}"] for item in items]

    def score_pairs(
        self, pairs: Sequence[tuple[str, str, str]]
    ) -> dict[str, float]:
        """Score (pair_id, text_a, text_b) triples; returns pair_id -> score.

        Raises SidecarTransportError (with partial results) if the process
        exits or the batch deadline passes, and ProtocolViolationError for
        malformed replies, duplicate or unknown pair ids, or out-of-range
        scores.
        """
        if self._process is None:
            self.start()
        if not pairs:
            return {}
        pending = {pair_id for pair_id, _, _ in pairs}
        if len(pending) != len(pairs):
            raise ValueError("pair ids within a batch must be unique")
        for pair_id, text_a, text_b in pairs:
            self._send({
                "type": "score",
                "pair_id": pair_id,
                "text_a": text_a,
                "text_b": text_b,
            })
        results: dict[str, float] = {}
        deadline = time.monotonic() + self.batch_timeout
        while pending:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise SidecarTransportError(
                    f"batch timed out with {len(pending)} scores outstanding",
                    partial=results)
            try:
                message = self._next_message(remaining)
            except SidecarTransportError as exc:
                exc.partial = results
                raise
            if message.get("type") != "result":
                raise ProtocolViolationError(
                    f"unexpected message type {message.get('type')!r}")
            pair_id = message.get("pair_id")
            if pair_id not in pending:
                raise ProtocolViolationError(
                    f"result for unknown or duplicate pair_id {pair_id!r}")
            score = message.get("score")
            if not isinstance(score, (int, float)) or isinstance(score, bool):
                raise ProtocolViolationError(
                    f"score for {pair_id!r} is not a number")
            if not 0.0 <= float(score) <= 1.0:
                raise ProtocolViolationError(
                    f"score {score} for {pair_id!r} outside [0, 1]")
            pending.remove(pair_id)
            results[pair_id] = float(score)
        return results

    # -- internals ----------------------------------------------------------

    def _send(self, message: dict) -> None:
        process = self._process
        if process is None or process.poll() is not None:
            raise SidecarTransportError("external scorer is not running")
        payload = json.dumps(message, ensure_ascii=False)
        try:
            with self._write_lock:
                assert process.stdin is not None
                process.stdin.write(payload + "\n")
                process.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SidecarTransportError(
                f"external scorer pipe closed: {exc}") from exc

    def _pump_stdout(self) -> None:
        process = self._process
        assert process is not None and process.stdout is not None
        for line in process.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF marker

    def _next_message(self, timeout: float) -> dict:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise SidecarTransportError("timed out waiting for external scorer")
        if line is None:
            code = self._process.poll() if self._process else None
            raise SidecarTransportError(
                f"external scorer exited (return code {code})")
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolationError(
                f"external scorer sent invalid JSON: {line!r}") from exc
        if not isinstance(message, dict):
            raise ProtocolViolationError("external scorer sent a non-object")
        return message


def external_score_batch(
    client: SidecarClient,
    items: Sequence[PairItem],
    cache: ScoreCache | None = None,
) -> list[float]:
    """Score a batch through the external client, writing through to a cache.

    Scores land in the cache under the client's scorer name before the call
    returns, so a later cache-only run replays them exactly.
    """
    if not items:
        return []
    scores = client.score_batch(items)
    if cache is not None:
        for item, score in zip(items, scores):
            cache.put(item.child_id, item.parent_id, score,
                      scorer=client.scorer_name)
    return scores


class ExternalCandidateScorer:
    """Candidate-scorer adapter that routes batches to a SidecarClient."""

    def __init__(self, client: SidecarClient, cache: ScoreCache | None = None):
        self.client = client
        self.cache = cache

    @property
    def name(self) -> str:
        return self.client.scorer_name

    def score_batch(self, items: Sequence[PairItem]) -> list[float]:
        return external_score_batch(self.client, items, self.cache)
