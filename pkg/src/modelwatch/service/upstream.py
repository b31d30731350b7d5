"""HTTP client for the upstream model's prediction endpoint."""

from __future__ import annotations

import json
from typing import Any

import httpx
import numpy as np

from ..drift.preprocess import ModelUnavailable


class UpstreamUnavailable(ModelUnavailable):
    pass


class UpstreamTimeout(UpstreamUnavailable):
    pass


def parse_predictions(body: bytes | str | dict) -> list[Any]:
    data = json.loads(body) if isinstance(body, (bytes, str)) else body
    if isinstance(data, dict):
        data = data.get("predictions", data.get("outputs"))
    if not isinstance(data, list):
        raise ValueError("upstream response has no prediction list")
    return data


class UpstreamModelClient:
    """Forwards request bodies verbatim; no retries, so failures surface immediately."""

    def __init__(self, url: str | None, timeout: float = 5.0, transport: httpx.BaseTransport | None = None):
        self.url = url
        self.timeout = timeout
        self._transport = transport
        self._async: httpx.AsyncClient | None = None
        self._sync: httpx.Client | None = None

    def _async_client(self) -> httpx.AsyncClient:
        if self._async is None:
            self._async = httpx.AsyncClient(timeout=self.timeout, transport=self._transport)
        return self._async

    def _sync_client(self) -> httpx.Client:
        if self._sync is None:
            self._sync = httpx.Client(timeout=self.timeout, transport=self._transport)
        return self._sync

    async def forward(self, body: bytes, content_type: str = "application/json") -> httpx.Response:
        if not self.url:
            raise UpstreamUnavailable("no upstream URL configured")
        try:
            return await self._async_client().post(self.url, content=body,
                                                   headers={"content-type": content_type})
        except httpx.TimeoutException as exc:
            raise UpstreamTimeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise UpstreamUnavailable(str(exc)) from exc

    def predict(self, instances: list[list]) -> np.ndarray:
        """Blocking call returning one output vector per instance."""
        if not self.url:
            raise UpstreamUnavailable("no upstream URL configured")
        try:
            resp = self._sync_client().post(self.url, json={"instances": instances})
        except httpx.TimeoutException as exc:
            raise UpstreamTimeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise UpstreamUnavailable(str(exc)) from exc
        if resp.status_code >= 400:
            raise UpstreamUnavailable(f"upstream returned {resp.status_code}")
        try:
            preds = parse_predictions(resp.content)
        except ValueError as exc:
            raise UpstreamUnavailable(str(exc)) from exc
        out = np.asarray(preds, dtype=float)
        return out.reshape(len(instances), -1)

    async def aclose(self) -> None:
        if self._async is not None:
            await self._async.aclose()
        if self._sync is not None:
            self._sync.close()
