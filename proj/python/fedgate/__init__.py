"""Python bindings for the fedgate inference gateway core."""

from __future__ import annotations

import json
import math
from typing import Any, Iterable

from . import _core
from ._core import TokenBucket, count_tokens, mock_embed, mock_generate, nodes_needed, parse_rate, quantile

__all__ = [
    "Response",
    "Service",
    "TokenBucket",
    "count_tokens",
    "mock_embed",
    "mock_generate",
    "nodes_needed",
    "parse_rate",
    "quantile",
    "run_bench",
    "run_sweep",
    "select_endpoint",
]

INF = math.inf


def select_endpoint(candidates: Iterable[tuple[bool, int, int]]) -> tuple[int, str]:
    """Choose among (has_active_instance, free_nodes, nodes_needed) tuples given in config order.

    Returns the chosen index and the rule that decided it.
    """
    return _core.select_candidate(list(candidates))


def run_bench(config: dict | None = None, **kwargs: Any) -> dict:
    """Run the benchmark harness against an in-process gateway on a virtual clock."""
    if config is not None:
        kwargs["config_json"] = json.dumps(config)
    return json.loads(_core.run_bench(**kwargs))


def run_sweep(config: dict | None = None, **kwargs: Any) -> list[dict]:
    """Run one in-process benchmark per (instances, concurrency, rate) grid point."""
    if config is not None:
        kwargs["config_json"] = json.dumps(config)
    return json.loads(_core.run_sweep(**kwargs))


class Response:
    def __init__(self, status: int, body: str, events: list[str], elapsed_s: float):
        self.status = status
        self.body = body
        self.events = events
        self.elapsed_s = elapsed_s

    def json(self) -> Any:
        return json.loads(self.body)

    def __repr__(self) -> str:
        return f"Response(status={self.status}, events={len(self.events)}, elapsed_s={self.elapsed_s:.3f})"


class Service:
    """A gateway on a virtual clock. Each request runs the clock until it is answered."""

    def __init__(self, config: dict | None = None, config_path: str = ""):
        self._svc = _core.Service(config_path, json.dumps(config) if config is not None else "")

    def mint_token(self, subject: str, groups: Iterable[str] = (), ttl_s: float = 48 * 3600.0) -> str:
        return self._svc.mint_token(subject, list(groups), ttl_s)

    def request(self, method: str, path: str, token: str = "", body: Any = None,
                query: dict[str, str] | None = None) -> Response:
        if body is None:
            raw = ""
        elif isinstance(body, str):
            raw = body
        else:
            raw = json.dumps(body)
        return Response(*self._svc.request(method, path, token, raw, query or {}))

    def advance(self, seconds: float) -> None:
        self._svc.advance(seconds)

    @property
    def now(self) -> float:
        return self._svc.now
