"""Cloud-layer service: device links, frame ingest, REST/WS API, missions."""

from .service import Gateway

__all__ = ["Gateway"]
