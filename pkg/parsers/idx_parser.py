# ticketlab/parsers/idx_parser.py
# -*- coding: utf-8 -*-
"""
IDX container parser (MNIST / Fashion-MNIST layout).

Header (big-endian):
  0x00 0x00 <dtype=0x08> <ndim>   magic, 0x00000801 labels / 0x00000803 images
  ndim x u32                      dimension sizes
  payload                         prod(dims) unsigned bytes, row-major
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .base import DatasetPart, IdxParseError, ParserBase, register_parser

MAGIC_LABELS = 0x00000801
MAGIC_IMAGES = 0x00000803


@register_parser("idx")
class IdxParser(ParserBase):

    def parse(self, data: bytes) -> DatasetPart:
        self.require(data, 0, 4, "IDX magic", IdxParseError)
        (magic,) = struct.unpack_from(">I", data, 0)
        if magic not in (MAGIC_LABELS, MAGIC_IMAGES):
            raise IdxParseError(
                "bad IDX magic",
                offset=0,
                expected=f"0x{MAGIC_LABELS:08x} or 0x{MAGIC_IMAGES:08x}",
                actual=f"0x{magic:08x}",
            )

        ndim = magic & 0xFF
        self.require(data, 4, 4 * ndim, "IDX dimension header", IdxParseError)
        dims = struct.unpack_from(f">{ndim}I", data, 4)
        header = 4 + 4 * ndim
        payload = math.prod(dims)

        end = header + payload
        if len(data) < end:
            raise IdxParseError("truncated IDX payload", offset=len(data), expected=end, actual=len(data))
        if len(data) > end:
            raise IdxParseError("trailing bytes after IDX payload", offset=end, expected=end, actual=len(data))

        raw = np.frombuffer(data, dtype=np.uint8, count=payload, offset=header)
        if magic == MAGIC_LABELS:
            return DatasetPart(labels=raw.astype(np.int64), meta={"dims": dims})

        count, height, width = dims
        images = (raw.astype(np.float64) / 255.0).reshape(count, 1, height, width)
        return DatasetPart(images=images, meta={"dims": dims})


def parse_idx(data: bytes) -> DatasetPart:
    return IdxParser().parse(data)
