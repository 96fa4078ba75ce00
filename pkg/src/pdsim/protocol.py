"""Wire formats between cloud and device.

Every payload rides in an SSE-style frame ``data: <body>\\n\\n``. The first
response frame piggybacks the selection mask and the assisted-token budget
next to the first token; each following frame carries one decode token; a
literal ``[DONE]`` frame closes the stream.

Canonical bodies are compact JSON with pinned key order, so encoders are
byte-deterministic. A legacy '#'-delimited body for the first frame is kept
behind a flag; it cannot carry '#' inside the token text.
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass

from .maskcodec import CompressedMask

FRAME_PREFIX = b"data: "
FRAME_SUFFIX = b"\n\n"
DONE_BODY = b"[DONE]"

# a decoder buffer larger than this without a frame boundary is garbage
_MAX_BUFFER = 1 << 20


class ProtocolError(Exception):
    """Malformed frame or request body; the message names the offending field."""


@dataclass(frozen=True)
class AssistRequest:
    """Device-to-cloud request: routing labels plus the raw prompt triple."""

    scene: str
    model_version_label: str
    device_class: str
    prefix: str
    content: str
    suffix: str
    request_id: str

    def __post_init__(self) -> None:
        if not self.content and not self.suffix:
            raise ValueError("request needs nonempty content or suffix")


@dataclass(frozen=True)
class FirstTokenFrame:
    """First token plus piggybacked mask and budget.

    ``max_tokens`` mirrors the wire field ``L``: total tokens the cloud will
    produce, counting this one. Zero is the stream-until-EOT sentinel used
    when no plan applies.
    """

    token: str
    mask: CompressedMask
    max_tokens: int

    def __post_init__(self) -> None:
        if self.max_tokens < 0:
            raise ValueError("max_tokens must be >= 0 (0 = until EOT)")


@dataclass(frozen=True)
class StreamEvent:
    """One decode token; index 1 is the first token after the piggyback frame."""

    index: int
    token: str
    terminal: bool = False

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("stream event indices start at 1")


class DoneMarker:
    """Terminal stream marker; compares equal to itself only."""

    _instance: "DoneMarker | None" = None

    def __new__(cls) -> "DoneMarker":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "DONE"


DONE = DoneMarker()


def _frame(body: bytes) -> bytes:
    return FRAME_PREFIX + body + FRAME_SUFFIX


def _json_body(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode_request(req: AssistRequest) -> bytes:
    return _json_body(
        {
            "scene": req.scene,
            "model_version_label": req.model_version_label,
            "device_class": req.device_class,
            "prefix": req.prefix,
            "content": req.content,
            "suffix": req.suffix,
            "request_id": req.request_id,
        }
    )


def decode_request(data: bytes) -> AssistRequest:
    obj = _parse_json(data)
    fields = ("scene", "model_version_label", "device_class", "prefix", "content", "suffix", "request_id")
    values = {}
    for name in fields:
        value = obj.get(name)
        if not isinstance(value, str):
            raise ProtocolError(f"request field {name!r} missing or not a string")
        values[name] = value
    try:
        return AssistRequest(**values)
    except ValueError as exc:
        raise ProtocolError(str(exc)) from exc


def encode_first_frame(frame: FirstTokenFrame, compact: bool = False) -> bytes:
    mask_b64 = base64.b64encode(frame.mask.payload).decode("ascii")
    if compact:
        if "#" in frame.token:
            raise ProtocolError("compact framing cannot carry '#' inside token text")
        return _frame(f"{frame.token}#{mask_b64}#{frame.max_tokens}".encode("utf-8"))
    return _frame(_json_body({"first_token": frame.token, "mask_b64": mask_b64, "L": frame.max_tokens}))


def decode_first_frame(data: bytes, compact: bool = False) -> FirstTokenFrame:
    body = _strip_frame(data)
    return _parse_first_compact(body) if compact else _parse_first_json(body)


def encode_stream_event(event: StreamEvent) -> bytes:
    data = _frame(_json_body({"i": event.index, "token": event.token}))
    if event.terminal:
        data += encode_done()
    return data


def decode_stream_event(data: bytes) -> StreamEvent:
    idx = data.find(FRAME_SUFFIX)
    if idx < 0:
        raise ProtocolError("missing frame terminator")
    first, rest = data[: idx + len(FRAME_SUFFIX)], data[idx + len(FRAME_SUFFIX) :]
    event = _parse_event_json(_strip_frame(first))
    if not rest:
        return event
    if rest == _frame(DONE_BODY):
        return StreamEvent(index=event.index, token=event.token, terminal=True)
    raise ProtocolError("trailing bytes after stream event")


def encode_done() -> bytes:
    return _frame(DONE_BODY)


def _strip_frame(data: bytes) -> bytes:
    if not data.startswith(FRAME_PREFIX):
        raise ProtocolError("frame must start with 'data: '")
    if not data.endswith(FRAME_SUFFIX):
        raise ProtocolError("frame must end with a blank line")
    return data[len(FRAME_PREFIX) : -len(FRAME_SUFFIX)]


def _parse_json(data: bytes) -> dict:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"body is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("body must be a JSON object")
    return obj


def _decode_mask_b64(text: str) -> CompressedMask:
    try:
        container = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise ProtocolError(f"field 'mask_b64' is not valid base64: {exc}") from exc
    return CompressedMask.from_container(container)


def _parse_first_json(body: bytes) -> FirstTokenFrame:
    obj = _parse_json(body)
    token = obj.get("first_token")
    if not isinstance(token, str):
        raise ProtocolError("field 'first_token' missing or not a string")
    mask_b64 = obj.get("mask_b64")
    if not isinstance(mask_b64, str):
        raise ProtocolError("field 'mask_b64' missing or not a string")
    budget = obj.get("L")
    if isinstance(budget, bool) or not isinstance(budget, int) or budget < 0:
        raise ProtocolError("field 'L' missing or not a nonnegative integer")
    return FirstTokenFrame(token=token, mask=_decode_mask_b64(mask_b64), max_tokens=budget)


def _parse_first_compact(body: bytes) -> FirstTokenFrame:
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"body is not valid UTF-8: {exc}") from exc
    parts = text.split("#")
    if len(parts) != 3:
        raise ProtocolError("compact frame must be token#mask#budget")
    token, mask_b64, budget_text = parts
    try:
        budget = int(budget_text)
    except ValueError as exc:
        raise ProtocolError("field 'L' is not an integer") from exc
    if budget < 0:
        raise ProtocolError("field 'L' must be nonnegative")
    return FirstTokenFrame(token=token, mask=_decode_mask_b64(mask_b64), max_tokens=budget)


def _parse_event_json(body: bytes) -> StreamEvent:
    obj = _parse_json(body)
    index = obj.get("i")
    if isinstance(index, bool) or not isinstance(index, int) or index < 1:
        raise ProtocolError("field 'i' missing or not a positive integer")
    token = obj.get("token")
    if not isinstance(token, str):
        raise ProtocolError("field 'token' missing or not a string")
    return StreamEvent(index=index, token=token)


class SseDecoder:
    """Incremental frame decoder over a byte stream. Single-owner, stateful.

    ``feed`` returns the items completed so far. A malformed frame raises
    ProtocolError after the frame has been consumed, so feeding can simply
    continue; items parsed before the error are delivered by the next call.
    """

    def __init__(self) -> None:
        self._buf = b""
        self._pending: list[FirstTokenFrame | StreamEvent | DoneMarker] = []

    def feed(self, data: bytes) -> list[FirstTokenFrame | StreamEvent | DoneMarker]:
        self._buf += data
        items, self._pending = self._pending, []
        while True:
            idx = self._buf.find(FRAME_SUFFIX)
            if idx < 0:
                if len(self._buf) > _MAX_BUFFER:
                    self._buf = b""
                    self._pending = items
                    raise ProtocolError("unbounded garbage without a frame boundary")
                return items
            chunk, self._buf = self._buf[: idx + len(FRAME_SUFFIX)], self._buf[idx + len(FRAME_SUFFIX) :]
            try:
                items.append(self._parse_frame(chunk))
            except ProtocolError:
                self._pending = items
                raise

    @staticmethod
    def _parse_frame(chunk: bytes) -> FirstTokenFrame | StreamEvent | DoneMarker:
        body = _strip_frame(chunk)
        if body == DONE_BODY:
            return DONE
        obj = _parse_json(body)
        if "first_token" in obj:
            return _parse_first_json(body)
        if "i" in obj:
            return _parse_event_json(body)
        raise ProtocolError("frame body is neither a first frame, an event, nor [DONE]")
