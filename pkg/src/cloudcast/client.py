"""Thin client for the service API.

Without a server URL the client mounts the FastAPI app in-process over an
ASGI transport, so CLI workflows need no running daemon while still going
through the exact HTTP surface a remote deployment exposes.
"""

from __future__ import annotations

import asyncio
from typing import Optional

import httpx

from .errors import (
    CapabilityError,
    CloudcastError,
    DomainError,
    FormatError,
    TransportError,
)

_ERROR_BY_CATEGORY = {
    "usage": DomainError,
    "format": FormatError,
    "transport": TransportError,
    "capability": CapabilityError,
}


class ServiceClient:
    def __init__(self, server: Optional[str] = None, timeout: float = 300.0):
        self._server = server
        self._timeout = timeout
        self._app = None
        if server is None:
            from .service import create_app

            self._app = create_app()

    def post(self, path: str, payload: dict) -> dict:
        if self._server is not None:
            try:
                with httpx.Client(base_url=self._server, timeout=self._timeout) as client:
                    resp = client.post(path, json=payload)
            except httpx.HTTPError as exc:
                raise TransportError(f"service unreachable: {exc}")
        else:
            resp = self._post_in_process(path, payload)
        return self._unwrap(resp)

    def get(self, path: str) -> dict:
        if self._server is not None:
            try:
                with httpx.Client(base_url=self._server, timeout=self._timeout) as client:
                    resp = client.get(path)
            except httpx.HTTPError as exc:
                raise TransportError(f"service unreachable: {exc}")
        else:
            resp = self._request_in_process("GET", path, None)
        return self._unwrap(resp)

    def _post_in_process(self, path: str, payload: dict) -> httpx.Response:
        return self._request_in_process("POST", path, payload)

    def _request_in_process(self, method: str, path: str, payload) -> httpx.Response:
        async def go():
            transport = httpx.ASGITransport(app=self._app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://cloudcast.local", timeout=self._timeout
            ) as client:
                return await client.request(method, path, json=payload)

        return asyncio.run(go())

    @staticmethod
    def _unwrap(resp: httpx.Response) -> dict:
        if resp.status_code == 200:
            return resp.json()
        try:
            body = resp.json()
            error = body["error"]
            category = error["category"]
            message = error["message"]
        except (ValueError, KeyError, TypeError):
            # validation failures from the schema layer count as usage errors
            if resp.status_code == 422:
                raise DomainError(f"invalid request: {resp.text[:500]}")
            raise TransportError(f"service returned HTTP {resp.status_code}: {resp.text[:200]}")
        raise _ERROR_BY_CATEGORY.get(category, CloudcastError)(message)
