"""JSON-over-HTTP posting with bounded concurrency and retry."""

from __future__ import annotations

import logging
import threading
import time

import httpx

logger = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """Remote endpoint unreachable or failing; safe to retry."""


class ProtocolError(RuntimeError):
    """Remote endpoint answered with something we cannot interpret."""


class JsonEndpoint:
    """POST JSON bodies to one URL.

    At most ``max_in_flight`` requests are outstanding at once. Connection
    failures and 5xx answers are retried with exponential backoff; 4xx answers
    and non-JSON bodies raise :class:`ProtocolError` immediately.
    """

    def __init__(
        self,
        url: str,
        *,
        client: httpx.Client | None = None,
        timeout: float = 60.0,
        max_in_flight: int = 8,
        retries: int = 3,
        backoff: float = 0.5,
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if retries < 0:
            raise ValueError("retries must be >= 0")
        self.url = url
        self.client = client or httpx.Client(timeout=timeout)
        self.max_in_flight = max_in_flight
        self.retries = retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def post(self, payload: dict) -> dict:
        last: object = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self.client.post(self.url, json=payload)
            except httpx.TransportError as exc:
                last = exc
                logger.warning("%s: transport error on attempt %d: %s", self.url, attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                logger.warning("%s: %s on attempt %d", self.url, last, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"response is not JSON: {exc}") from None
            if not isinstance(body, dict):
                raise ProtocolError("response is not a JSON object")
            return body
        raise TransportError(f"{self.url} failed after {self.retries + 1} attempts: {last}")
