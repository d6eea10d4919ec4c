# -*- coding: utf-8 -*-
"""
Parsers facade: importing the package registers every container parser.
"""

from __future__ import annotations

from .base import (  # noqa: F401
    CifarParseError,
    Dataset,
    DatasetPart,
    IdxParseError,
    MaskFormatError,
    ParseError,
    SchemaError,
    VersionMismatchError,
    get_parser,
    register_parser,
    registered_formats,
)
from .cifar_parser import parse_cifar_bin  # noqa: F401
from .idx_parser import parse_idx  # noqa: F401
from .synthetic import synth_blobs, synth_task  # noqa: F401
