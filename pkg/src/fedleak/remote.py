"""HTTP adapter for auditing external generation services.

Wire protocol: ``POST {endpoint_url}/generate`` with JSON body
``{"prefix": str, "max_new_tokens": int, "num_samples": int,
"temperature": float, "seed": int}`` answered by
``{"completions": [str, ...]}`` of exactly ``num_samples`` strings.
Completions are split back into tokens with the corpus tokenizer.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import requests

from .errors import BackendError, CapabilityError, ConfigurationError, ProtocolError
from .lm import GenerationRequest
from .tokenizers import Tokenizer


@dataclass(frozen=True)
class RemoteBackendConfig:
    endpoint_url: str
    auth_token: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    max_concurrency: int = 4
    retry_backoff: float = 0.05  # seconds, doubled per attempt

    def validate(self) -> None:
        if not self.endpoint_url:
            raise ConfigurationError("endpoint_url must be set")
        if not self.timeout > 0:
            raise ConfigurationError("timeout must be > 0")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ConfigurationError("max_concurrency must be >= 1")


class RemoteBackend:
    """Backend proxying generation requests to a remote endpoint.

    A bounded semaphore around the HTTP call enforces ``max_concurrency``
    no matter how many caller threads fan requests in. Requests are
    idempotent (the seed travels with them), so transport failures and
    5xx responses are retried up to ``max_retries`` times.
    """

    def __init__(self, cfg: RemoteBackendConfig, tokenizer: Tokenizer):
        cfg.validate()
        self.cfg = cfg
        self.tokenizer = tokenizer
        self._gate = threading.BoundedSemaphore(cfg.max_concurrency)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.cfg.auth_token:
            headers["Authorization"] = f"Bearer {self.cfg.auth_token}"
        return headers

    def generate(self, req: GenerationRequest) -> list[list[str]]:
        req.validate()
        body = {
            "prefix": self.tokenizer.join(req.prefix),
            "max_new_tokens": req.max_new_tokens,
            "num_samples": req.num_samples,
            "temperature": 0.0 if req.greedy else req.temperature,
            "seed": req.seed,
        }
        url = self.cfg.endpoint_url.rstrip("/") + "/generate"
        last_error: str = "no attempts made"
        last_status: int | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                time.sleep(self.cfg.retry_backoff * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = requests.post(
                        url,
                        json=body,
                        headers=self._headers(),
                        timeout=self.cfg.timeout,
                    )
            except requests.RequestException as exc:
                last_error, last_status = str(exc), None
                continue
            if resp.status_code >= 500:
                last_error = f"server error {resp.status_code}"
                last_status = resp.status_code
                continue
            if resp.status_code != 200:
                raise BackendError(
                    f"request rejected with status {resp.status_code}",
                    status=resp.status_code,
                )
            return self._parse(resp, req.num_samples)
        raise BackendError(
            f"backend failed after {self.cfg.max_retries + 1} attempts: "
            f"{last_error}",
            status=last_status,
        )

    def _parse(self, resp: requests.Response, num_samples: int) -> list[list[str]]:
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"response is not JSON: {exc}") from exc
        completions = payload.get("completions") if isinstance(payload, dict) else None
        if (
            not isinstance(completions, list)
            or len(completions) != num_samples
            or not all(isinstance(c, str) for c in completions)
        ):
            raise ProtocolError(
                "response must carry a 'completions' list of "
                f"{num_samples} strings"
            )
        return [self.tokenizer.tokenize(c) for c in completions]

    def generate_many(
        self, reqs: Sequence[GenerationRequest]
    ) -> list[list[list[str]]]:
        if not reqs:
            return []
        workers = min(self.cfg.max_concurrency, len(reqs))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.generate, reqs))

    def finetune_pairs(self, pairs, weight: float = 1.0):
        raise CapabilityError(
            "remote backends do not support local fine-tuning"
        )
