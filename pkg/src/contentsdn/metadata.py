"""Content metadata: acquisition and the controller-side store.

Size reaches the controller three ways, in decreasing accuracy:
a cache's memory footprint, the Content-Length read off the HTTP
response head at an ingress switch, and a per-flow byte counter that
includes per-packet header overhead the controller subtracts later.
The store maps the globally unique content name to one record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

ELEPHANT_THRESHOLD_BYTES = 100_000  # boundary is inclusive: size == threshold is elephant
PER_PACKET_OVERHEAD_BYTES = 40

_HEAD_END = b"\r\n\r\n"


class HeadParseError(ValueError):
    """Base class for HTTP response head failures."""


class MalformedHeadError(HeadParseError):
    """No CRLFCRLF terminator, or the status line is not HTTP/1.x."""


class MissingContentLengthError(HeadParseError):
    pass


class BadContentLengthError(HeadParseError):
    pass


def parse_http_response_head(data: bytes) -> tuple[int, str | None]:
    """Read Content-Length and the Content-Type media type from a response head.

    Only bytes up to and including the first CRLFCRLF are examined.
    Header names match case-insensitively; Content-Type parameters
    (e.g. ``; charset=...``) are stripped.  Returns (length, media_type)
    with media_type None when absent.
    """
    end = data.find(_HEAD_END)
    if end < 0:
        raise MalformedHeadError("no CRLFCRLF terminator in input")
    head = data[:end].decode("latin-1")
    lines = head.split("\r\n")
    if not lines[0].upper().startswith("HTTP/1."):
        raise MalformedHeadError(f"not an HTTP/1.x status line: {lines[0]!r}")

    content_length: int | None = None
    media_type: str | None = None
    for line in lines[1:]:
        name, sep, value = line.partition(":")
        if not sep:
            continue  # tolerate stray lines; DPI must not choke mid-stream
        name = name.strip().lower()
        value = value.strip()
        if name == "content-length":
            if not value.isdigit():
                raise BadContentLengthError(f"non-numeric Content-Length: {value!r}")
            content_length = int(value)
        elif name == "content-type":
            media_type = value.split(";", 1)[0].strip().lower() or None

    if content_length is None:
        raise MissingContentLengthError("no Content-Length header in response head")
    return content_length, media_type


class CounterUnderflowError(ValueError):
    """Overhead correction exceeds the counted bytes; overhead is misconfigured."""


def finalize_size_from_counter(
    counted_bytes: int, packet_count: int, per_packet_overhead: int = PER_PACKET_OVERHEAD_BYTES
) -> int:
    """Recover the content size from a per-flow byte counter.

    The counter saw headers too; subtract ``packet_count`` times the
    per-packet overhead.  Exact by construction: adding the correction
    back reproduces ``counted_bytes``.
    """
    if packet_count < 0 or per_packet_overhead < 0:
        raise ValueError("packet_count and per_packet_overhead must be >= 0")
    correction = packet_count * per_packet_overhead
    if correction > counted_bytes:
        raise CounterUnderflowError(
            f"correction {correction} exceeds counted bytes {counted_bytes}"
        )
    return counted_bytes - correction


class SizeClass(Enum):
    ELEPHANT = "elephant"
    MICE = "mice"


def classify(size_bytes: int, threshold: int = ELEPHANT_THRESHOLD_BYTES) -> SizeClass:
    """Elephant iff size >= threshold (inclusive boundary)."""
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    return SizeClass.ELEPHANT if size_bytes >= threshold else SizeClass.MICE


@dataclass
class ContentMetadata:
    name: str
    size_bytes: int = 0  # 0 = unknown
    mime_type: str | None = None
    popularity: int = 0
    cached_at: set[str] = field(default_factory=set)


class UnknownContentError(KeyError):
    pass


class MetadataStore:
    """Key-value store: content name -> ContentMetadata.

    All mutation goes through the controller's serialized message loop;
    reads of a snapshot are safe anywhere.
    """

    def __init__(self):
        self._records: dict[str, ContentMetadata] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, name: str) -> bool:
        return name in self._records

    def names(self) -> list[str]:
        return sorted(self._records)

    def get(self, name: str) -> ContentMetadata:
        try:
            return self._records[name]
        except KeyError:
            raise UnknownContentError(name) from None

    def put(
        self,
        name: str,
        size_bytes: int | None = None,
        mime_type: str | None = None,
        cached_at: str | None = None,
    ) -> ContentMetadata:
        """Upsert by name: merge the given fields, preserve popularity."""
        if not name:
            raise ValueError("content name must be non-empty")
        record = self._records.get(name)
        if record is None:
            record = ContentMetadata(name=name)
            self._records[name] = record
        if size_bytes is not None:
            if size_bytes < 0:
                raise ValueError(f"size_bytes must be >= 0, got {size_bytes}")
            record.size_bytes = size_bytes
        if mime_type is not None:
            record.mime_type = mime_type
        if cached_at is not None:
            record.cached_at.add(cached_at)
        return record

    def drop_cached_at(self, name: str, node: str):
        if name in self._records:
            self._records[name].cached_at.discard(node)

    def record_access(self, name: str) -> ContentMetadata:
        """Count one access; creates the record when the name is new."""
        if not name:
            raise ValueError("content name must be non-empty")
        record = self._records.get(name)
        if record is None:
            record = ContentMetadata(name=name)
            self._records[name] = record
        record.popularity += 1
        return record

    def to_json_dict(self) -> dict:
        """Debug dump: name-keyed plain-data map."""
        return {
            name: {
                "size_bytes": r.size_bytes,
                "mime_type": r.mime_type,
                "popularity": r.popularity,
                "cached_at": sorted(r.cached_at),
            }
            for name, r in sorted(self._records.items())
        }

    def dump_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)
