#!/usr/bin/env python3
"""
Static permission channel: APK archive access and binary AndroidManifest parsing.

Only the chunks needed to recover ``uses-permission`` names are decoded: the
string pool, the resource map, namespace and element start/end chunks. Every
other chunk is skipped by its declared size.
"""

import io
import struct
import zipfile
import zlib
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Tuple

from logging_conf import get_logger

logger = get_logger('dldroid.axml')

MANIFEST_ENTRY = 'AndroidManifest.xml'
SUPPORTED_COMPRESSION = {zipfile.ZIP_STORED: 'stored', zipfile.ZIP_DEFLATED: 'deflate'}

# Chunk types (ResourceTypes.h)
RES_STRING_POOL_TYPE = 0x0001
RES_XML_TYPE = 0x0003
RES_XML_START_NAMESPACE_TYPE = 0x0100
RES_XML_END_NAMESPACE_TYPE = 0x0101
RES_XML_START_ELEMENT_TYPE = 0x0102
RES_XML_END_ELEMENT_TYPE = 0x0103
RES_XML_RESOURCE_MAP_TYPE = 0x0180

UTF8_FLAG = 1 << 8
NO_INDEX = 0xFFFFFFFF

# Res_value data types
TYPE_REFERENCE = 0x01
TYPE_STRING = 0x03

ATTR_NAME_RESOURCE_ID = 0x0101003E

PERMISSION_ELEMENTS = ('uses-permission', 'uses-permission-sdk-23', 'uses-permission-sdk-m')

_CHUNK_HEADER = struct.Struct('<HHI')
_STRING_POOL_HEADER = struct.Struct('<IIIII')
_ATTR_EXT = struct.Struct('<IIHHHHHH')
_ATTRIBUTE = struct.Struct('<IIIHBBI')
_END_ELEMENT_EXT = struct.Struct('<II')
_NAMESPACE_EXT = struct.Struct('<II')


class AxmlError(Exception):
    """Base exception for archive and binary XML errors."""
    pass


class NotAZipError(AxmlError):
    pass


class EntryMissingError(AxmlError):
    pass


class UnsupportedCompressionError(AxmlError):
    def __init__(self, method: int):
        super().__init__(f"Unsupported compression method {method} for {MANIFEST_ENTRY}")
        self.method = method


class CorruptEntryError(AxmlError):
    pass


class BadMagicError(AxmlError):
    pass


class TruncatedChunkError(AxmlError):
    def __init__(self, offset: int, detail: str = ''):
        super().__init__(f"Truncated chunk at offset 0x{offset:x}" + (f": {detail}" if detail else ''))
        self.offset = offset


class BadStringIndexError(AxmlError):
    def __init__(self, index: int, pool_size: int):
        super().__init__(f"String index {index} outside pool of {pool_size} strings")
        self.index = index


class MalformedDocumentError(AxmlError):
    pass


@dataclass(frozen=True)
class TypedValue:
    data_type: int
    data: int
    string: Optional[str] = None

    @property
    def is_string(self) -> bool:
        return self.data_type == TYPE_STRING and self.string is not None


@dataclass(frozen=True)
class XmlAttribute:
    namespace: Optional[str]
    name: str
    name_index: int
    resource_id: Optional[int]
    raw_value: Optional[str]
    value: TypedValue


@dataclass(frozen=True)
class XmlEvent:
    kind: str  # 'start' or 'end'
    name: str
    name_index: int
    namespace: Optional[str] = None
    attributes: Tuple[XmlAttribute, ...] = ()


@dataclass(frozen=True)
class AxmlDocument:
    string_pool: Tuple[str, ...]
    resource_ids: Tuple[int, ...]
    events: Tuple[XmlEvent, ...]

    def start_elements(self, name: Optional[str] = None) -> List[XmlEvent]:
        return [e for e in self.events if e.kind == 'start' and (name is None or e.name == name)]


@dataclass(frozen=True)
class ManifestInfo:
    package: str
    permissions: Tuple[str, ...]
    declared_permissions: Tuple[str, ...] = ()
    warnings: Tuple[str, ...] = field(default=(), compare=False)


def open_apk(data: bytes) -> bytes:
    """Return the decompressed ``AndroidManifest.xml`` entry of an APK."""
    try:
        archive = zipfile.ZipFile(io.BytesIO(data))
    except (zipfile.BadZipFile, OSError, ValueError) as e:
        raise NotAZipError(f"Not a ZIP archive: {e}")

    with archive:
        # zipfile resolves names through the central directory, not local headers
        try:
            info = archive.getinfo(MANIFEST_ENTRY)
        except KeyError:
            raise EntryMissingError(f"Archive has no {MANIFEST_ENTRY} entry")

        if info.compress_type not in SUPPORTED_COMPRESSION:
            raise UnsupportedCompressionError(info.compress_type)

        try:
            content = archive.read(info)
        except zipfile.BadZipFile as e:
            raise CorruptEntryError(f"{MANIFEST_ENTRY}: {e}")
        except (zlib.error, EOFError, OSError, RuntimeError) as e:
            raise CorruptEntryError(f"{MANIFEST_ENTRY} does not inflate: {e}")
        except NotImplementedError as e:
            raise UnsupportedCompressionError(info.compress_type) from e

    if zlib.crc32(content) & 0xFFFFFFFF != info.CRC:
        raise CorruptEntryError(f"CRC-32 mismatch for {MANIFEST_ENTRY}")
    logger.debug(
        f"Extracted {MANIFEST_ENTRY}: {len(content)} bytes "
        f"({SUPPORTED_COMPRESSION[info.compress_type]})"
    )
    return content


class _Reader:
    """Bounds-checked little-endian access to the document buffer."""

    def __init__(self, data: bytes):
        self.data = data

    def unpack(self, fmt: struct.Struct, offset: int, limit: Optional[int] = None):
        end = offset + fmt.size
        if offset < 0 or end > (len(self.data) if limit is None else limit):
            raise TruncatedChunkError(offset, f"need {fmt.size} bytes")
        return fmt.unpack_from(self.data, offset)

    def u8(self, offset: int, limit: int) -> int:
        if offset >= limit:
            raise TruncatedChunkError(offset, "string data")
        return self.data[offset]

    def u16(self, offset: int, limit: int) -> int:
        if offset + 2 > limit:
            raise TruncatedChunkError(offset, "string data")
        return struct.unpack_from('<H', self.data, offset)[0]


def _decode_string_pool(reader: _Reader, offset: int, header_size: int, size: int) -> Tuple[str, ...]:
    limit = offset + size
    string_count, style_count, flags, strings_start, _ = reader.unpack(
        _STRING_POOL_HEADER, offset + _CHUNK_HEADER.size, limit
    )
    is_utf8 = bool(flags & UTF8_FLAG)
    offsets_at = offset + header_size
    if offsets_at + 4 * string_count > limit:
        raise TruncatedChunkError(offsets_at, "string offsets")
    string_offsets = struct.unpack_from(f'<{string_count}I', reader.data, offsets_at)

    strings = []
    for string_offset in string_offsets:
        position = offset + strings_start + string_offset
        if is_utf8:
            strings.append(_decode_utf8(reader, position, limit))
        else:
            strings.append(_decode_utf16(reader, position, limit))
    return tuple(strings)


def _decode_utf8(reader: _Reader, position: int, limit: int) -> str:
    # UTF-16 length first, then the UTF-8 byte length; either may take two bytes
    first = reader.u8(position, limit)
    position += 2 if first & 0x80 else 1
    length = reader.u8(position, limit)
    if length & 0x80:
        length = ((length & 0x7F) << 8) | reader.u8(position + 1, limit)
        position += 2
    else:
        position += 1
    if position + length > limit:
        raise TruncatedChunkError(position, "UTF-8 string")
    return reader.data[position:position + length].decode('utf-8', errors='replace')


def _decode_utf16(reader: _Reader, position: int, limit: int) -> str:
    length = reader.u16(position, limit)
    if length & 0x8000:
        length = ((length & 0x7FFF) << 16) | reader.u16(position + 2, limit)
        position += 4
    else:
        position += 2
    end = position + 2 * length
    if end > limit:
        raise TruncatedChunkError(position, "UTF-16 string")
    return reader.data[position:end].decode('utf-16-le', errors='replace')


def parse_axml(data: bytes) -> AxmlDocument:
    """Decode a binary XML document into its string pool and element events."""
    try:
        return _parse_document(data)
    except struct.error as e:
        raise MalformedDocumentError(f"Unreadable chunk data: {e}") from e


def _parse_document(data: bytes) -> AxmlDocument:
    reader = _Reader(data)
    if len(data) < _CHUNK_HEADER.size:
        raise BadMagicError("Document shorter than a chunk header")
    doc_type, doc_header_size, doc_size = _CHUNK_HEADER.unpack_from(data, 0)
    if doc_type != RES_XML_TYPE:
        raise BadMagicError(f"Leading chunk type 0x{doc_type:04x} is not RES_XML_TYPE")
    if doc_header_size < _CHUNK_HEADER.size:
        raise BadMagicError(f"Invalid document header size {doc_header_size}")
    end = min(doc_size, len(data)) if doc_size >= doc_header_size else len(data)

    string_pool: Tuple[str, ...] = ()
    resource_ids: Tuple[int, ...] = ()
    events: List[XmlEvent] = []
    namespaces: dict = {}

    def string_at(index: int) -> Optional[str]:
        if index == NO_INDEX:
            return None
        if index >= len(string_pool):
            raise BadStringIndexError(index, len(string_pool))
        return string_pool[index]

    offset = doc_header_size
    while offset + _CHUNK_HEADER.size <= end:
        chunk_type, header_size, size = _CHUNK_HEADER.unpack_from(data, offset)
        if (size < _CHUNK_HEADER.size or header_size < _CHUNK_HEADER.size
                or header_size > size or offset + size > end):
            raise TruncatedChunkError(offset, f"chunk type 0x{chunk_type:04x} declares {size} bytes")
        limit = offset + size

        if chunk_type == RES_STRING_POOL_TYPE:
            string_pool = _decode_string_pool(reader, offset, header_size, size)
        elif chunk_type == RES_XML_RESOURCE_MAP_TYPE:
            count = (size - header_size) // 4
            resource_ids = struct.unpack_from(f'<{count}I', data, offset + header_size)
        elif chunk_type in (RES_XML_START_NAMESPACE_TYPE, RES_XML_END_NAMESPACE_TYPE):
            prefix_index, uri_index = reader.unpack(_NAMESPACE_EXT, offset + header_size, limit)
            if chunk_type == RES_XML_START_NAMESPACE_TYPE:
                namespaces[uri_index] = string_at(prefix_index)
        elif chunk_type == RES_XML_START_ELEMENT_TYPE:
            events.append(_parse_start_element(reader, offset, header_size, limit, string_at, resource_ids))
        elif chunk_type == RES_XML_END_ELEMENT_TYPE:
            ns_index, name_index = reader.unpack(_END_ELEMENT_EXT, offset + header_size, limit)
            events.append(XmlEvent('end', string_at(name_index) or '', name_index, string_at(ns_index)))
        else:
            logger.debug(f"Skipping chunk type 0x{chunk_type:04x} at 0x{offset:x}")
        offset += size

    _check_balanced(events)
    return AxmlDocument(string_pool, tuple(resource_ids), tuple(events))


def _parse_start_element(reader: _Reader, offset: int, header_size: int, limit: int,
                         string_at, resource_ids) -> XmlEvent:
    ext_offset = offset + header_size
    (ns_index, name_index, attribute_start, attribute_size,
     attribute_count, _, _, _) = reader.unpack(_ATTR_EXT, ext_offset, limit)
    attribute_size = attribute_size or _ATTRIBUTE.size

    attributes = []
    for i in range(attribute_count):
        at = ext_offset + attribute_start + i * attribute_size
        (attr_ns, attr_name, raw_index, _, _, data_type, value) = reader.unpack(_ATTRIBUTE, at, limit)
        resource_id = resource_ids[attr_name] if attr_name < len(resource_ids) else None
        string_value = string_at(value) if data_type == TYPE_STRING else None
        attributes.append(XmlAttribute(
            namespace=string_at(attr_ns),
            name=string_at(attr_name) or '',
            name_index=attr_name,
            resource_id=resource_id,
            raw_value=string_at(raw_index),
            value=TypedValue(data_type, value, string_value),
        ))
    return XmlEvent('start', string_at(name_index) or '', name_index, string_at(ns_index), tuple(attributes))


def _check_balanced(events: List[XmlEvent]) -> None:
    stack: List[str] = []
    for event in events:
        if event.kind == 'start':
            stack.append(event.name)
        elif not stack or stack.pop() != event.name:
            raise MalformedDocumentError(f"Unbalanced end element '{event.name}'")
    if stack:
        raise MalformedDocumentError(f"Unclosed elements: {', '.join(stack)}")


def _is_name_attribute(attribute: XmlAttribute) -> bool:
    if attribute.name == 'name':
        return True
    return attribute.resource_id == ATTR_NAME_RESOURCE_ID and attribute.value.is_string


def extract_permissions(doc: AxmlDocument) -> ManifestInfo:
    """Collect ``uses-permission*`` names in document order, first occurrence kept."""
    package = ''
    permissions: List[str] = []
    declared: List[str] = []
    warnings: List[str] = []

    for event in doc.start_elements():
        if event.name == 'manifest' and not package:
            for attribute in event.attributes:
                if attribute.name == 'package' and attribute.value.is_string:
                    package = attribute.value.string
        elif event.name in PERMISSION_ELEMENTS or event.name == 'permission':
            name_attr = next((a for a in event.attributes if _is_name_attribute(a)), None)
            if name_attr is None:
                warnings.append(f"<{event.name}> without a name attribute skipped")
                continue
            if not name_attr.value.is_string:
                warnings.append(
                    f"<{event.name}> name is a non-string value "
                    f"(type 0x{name_attr.value.data_type:02x}) and was skipped"
                )
                continue
            target = permissions if event.name in PERMISSION_ELEMENTS else declared
            if name_attr.value.string not in target:
                target.append(name_attr.value.string)

    for warning in warnings:
        logger.warning(warning)
    return ManifestInfo(package, tuple(permissions), tuple(declared), tuple(warnings))


def permissions_to_tokens(info: ManifestInfo) -> FrozenSet[str]:
    """``android.permission.X`` (or any vendor prefix) becomes ``permission.X``."""
    tokens = set()
    for permission in info.permissions:
        last_segment = permission.strip().rsplit('.', 1)[-1]
        if last_segment:
            tokens.add(f"permission.{last_segment}")
    return frozenset(tokens)


def permission_tokens_in_order(info: ManifestInfo) -> List[str]:
    """Tokens in manifest order without repeats, for token files."""
    ordered: List[str] = []
    for permission in info.permissions:
        last_segment = permission.strip().rsplit('.', 1)[-1]
        token = f"permission.{last_segment}"
        if last_segment and token not in ordered:
            ordered.append(token)
    return ordered


def extract_manifest(data: bytes) -> ManifestInfo:
    """APK bytes or raw binary manifest bytes to ``ManifestInfo``."""
    if data[:2] == struct.pack('<H', RES_XML_TYPE):
        manifest = data
    else:
        manifest = open_apk(data)
    return extract_permissions(parse_axml(manifest))
