"""Python access to the predictor, evolution helpers, registry and service."""

import json

from ._core import (
    HISTORY_DAYS,
    NPI_MAX,
    NUM_NPIS,
    Dataset,
    EspError,
    NotFoundError,
    Predictor,
    Registry,
    Service,
    cases_from_ratio,
    crowding_distance,
    evolve,
    fingerprint,
    hypervolume_2d,
    nondominated_sort,
    sha256_hex,
)
from ._core import forecast as _forecast


def forecast(predictor, dataset, country, horizon=90, schedule=None, start_date=None):
    """Deterministic rollout as a dict with one entry per forecast day."""
    return json.loads(_forecast(predictor, dataset, country, horizon, schedule, start_date))


def request(service, method, path, params=None, body=None):
    """Routes one request through `service`; returns (status, decoded body)."""
    if body is not None and not isinstance(body, str):
        body = json.dumps(body)
    status, text = service.handle(method, path, params or {}, body or "")
    return status, json.loads(text)


__all__ = [
    "HISTORY_DAYS",
    "NPI_MAX",
    "NUM_NPIS",
    "Dataset",
    "EspError",
    "NotFoundError",
    "Predictor",
    "Registry",
    "Service",
    "cases_from_ratio",
    "crowding_distance",
    "evolve",
    "fingerprint",
    "forecast",
    "hypervolume_2d",
    "nondominated_sort",
    "request",
    "sha256_hex",
]
