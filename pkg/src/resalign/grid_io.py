"""Binary PGM/PPM and Middlebury ``.flo`` readers and writers.

Images are returned as float32 ``(H, W, C)`` arrays scaled to ``[0, 1]``;
flow fields as float32 ``(H, W, 2)`` arrays of ``(u, v) = (dx, dy)``.
"""

import struct

import numpy as np

from .validation import check_flow, check_grid

FLO_MAGIC = 202021.25
_FLO_TAG = struct.pack("<f", FLO_MAGIC)  # b"PIEH"
_PNM_CHANNELS = {b"P5": 1, b"P6": 3}
_WHITESPACE = b" \t\n\r\v\f"


class FormatError(ValueError):
    """Raised when a file does not follow the expected binary layout.

    Attributes
    ----------
    offset : int or None
        Byte offset in the file at which parsing failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _header_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens (with their offsets) and the offset just past the last
    token.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < n and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise FormatError("truncated header", pos)
        start = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        tokens.append((data[start:pos], start))
    return tokens, pos


def _parse_int(token, offset, what):
    text, _ = token
    if not text.isdigit():
        raise FormatError(f"malformed {what} {text!r}", offset)
    return int(text)


def parse_pnm(data):
    """Decode binary PGM/PPM bytes into a float32 grid in ``[0, 1]``."""
    data = bytes(data)
    tokens, pos = _header_tokens(data, 4)
    magic, magic_off = tokens[0]
    if magic not in _PNM_CHANNELS:
        raise FormatError(f"unsupported magic {magic!r}, expected P5 or P6", magic_off)
    channels = _PNM_CHANNELS[magic]
    width = _parse_int(tokens[1], tokens[1][1], "width")
    height = _parse_int(tokens[2], tokens[2][1], "height")
    maxval = _parse_int(tokens[3], tokens[3][1], "maxval")
    if width < 1 or height < 1:
        raise FormatError(f"empty image {width}x{height}", tokens[1][1])
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported maxval {maxval}", tokens[3][1])
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", pos)
    pos += 1

    dtype = np.dtype(np.uint8) if maxval == 255 else np.dtype(">u2")
    expected = width * height * channels * dtype.itemsize
    payload = data[pos:]
    if len(payload) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}",
            pos + len(payload),
        )
    if len(payload) > expected:
        raise FormatError(f"{len(payload) - expected} trailing bytes", pos + expected)
    raw = np.frombuffer(payload, dtype=dtype).reshape(height, width, channels)
    return (raw.astype(np.float64) / maxval).astype(np.float32)


def read_pnm(path):
    """Read a binary PGM (P5) or PPM (P6) file."""
    with open(path, "rb") as fh:
        return parse_pnm(fh.read())


def encode_pnm(grid, maxval=255):
    """Encode a 1- or 3-channel grid as binary PGM/PPM bytes.

    Values are clamped to ``[0, 1]`` and quantized with round-half-up.
    """
    arr = check_grid(grid, dtype=None)
    height, width, channels = arr.shape
    if channels not in (1, 3):
        raise ValueError(f"PNM supports 1 or 3 channels, got {channels}")
    if maxval not in (255, 65535):
        raise ValueError(f"unsupported maxval {maxval}")
    vals = np.clip(arr.astype(np.float64), 0.0, 1.0)
    q = np.floor(vals * maxval + 0.5)
    dtype = np.uint8 if maxval == 255 else ">u2"
    magic = "P5" if channels == 1 else "P6"
    header = f"{magic}\n{width} {height}\n{maxval}\n".encode("ascii")
    return header + q.astype(dtype).tobytes()


def write_pnm(grid, path, maxval=255):
    payload = encode_pnm(grid, maxval)
    with open(path, "wb") as fh:
        fh.write(payload)


def parse_flo(data):
    """Decode Middlebury ``.flo`` bytes into an ``(H, W, 2)`` float32 array."""
    data = bytes(data)
    if len(data) < 12:
        raise FormatError("truncated .flo header", len(data))
    if data[:4] != _FLO_TAG:
        (magic,) = struct.unpack("<f", data[:4])
        raise FormatError(f"bad .flo magic {magic!r}, expected {FLO_MAGIC}", 0)
    width, height = struct.unpack("<ii", data[4:12])
    if width < 1 or height < 1:
        raise FormatError(f"invalid .flo size {width}x{height}", 4)
    expected = width * height * 8
    if len(data) - 12 != expected:
        raise FormatError(
            f"payload size {len(data) - 12} does not match {width}x{height} header",
            12,
        )
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width, 2).astype(np.float32)


def read_flo(path):
    with open(path, "rb") as fh:
        return parse_flo(fh.read())


def encode_flo(flow):
    arr = check_flow(flow)
    height, width, _ = arr.shape
    return _FLO_TAG + struct.pack("<ii", width, height) + arr.astype("<f4").tobytes()


def write_flo(flow, path):
    payload = encode_flo(flow)
    with open(path, "wb") as fh:
        fh.write(payload)
