# ticketlab/parsers/cifar_parser.py
# -*- coding: utf-8 -*-
"""
CIFAR-10 binary batch parser: records of 1 label byte + 3x32x32 pixel bytes
(channel planes R, G, B, each row-major).
"""

from __future__ import annotations

import numpy as np

from .base import CifarParseError, DatasetPart, ParserBase, register_parser

CHANNELS, SIDE = 3, 32
PIXELS = CHANNELS * SIDE * SIDE
RECORD = 1 + PIXELS  # 3073
CLASSES = 10


@register_parser("cifar")
class CifarParser(ParserBase):

    def parse(self, data: bytes) -> DatasetPart:
        count, rest = divmod(len(data), RECORD)
        if rest:
            raise CifarParseError(
                "incomplete CIFAR record",
                offset=count * RECORD,
                expected=(count + 1) * RECORD,
                actual=len(data),
            )
        if count == 0:
            return DatasetPart(
                images=np.zeros((0, CHANNELS, SIDE, SIDE), dtype=np.float64),
                labels=np.zeros((0,), dtype=np.int64),
                meta={"records": 0},
            )

        records = np.frombuffer(data, dtype=np.uint8).reshape(count, RECORD)
        labels = records[:, 0].astype(np.int64)
        bad = np.flatnonzero(labels >= CLASSES)
        if bad.size:
            i = int(bad[0])
            raise CifarParseError("CIFAR label out of range", offset=i * RECORD, expected=f"< {CLASSES}", actual=int(labels[i]))

        images = (records[:, 1:].astype(np.float64) / 255.0).reshape(count, CHANNELS, SIDE, SIDE)
        return DatasetPart(images=images, labels=labels, meta={"records": count})


def parse_cifar_bin(data: bytes) -> DatasetPart:
    return CifarParser().parse(data)
