'''
Bit-exact tar and gzip handling for apk-style packages.

Tar streams are read and written directly at the header level, rather than through the
tarfile module, because:
 - pax record order must be preserved exactly as it appears on the wire
 - pax values may be raw binary (signature envelopes)
 - apk signature and control segments are "cut" tars with no end-of-archive blocks

Supported entry types: regular files, directories, symlinks, hardlinks.
Directory paths are stored without a trailing '/', the writer adds it back.

The gzip side splits a concatenation of gzip members into segments whose compressed bytes
concatenate back to the exact input, and emits deterministic members (mtime 0, fixed level).
'''

from dataclasses import dataclass, field, replace
from enum import Enum
import gzip
from typing import List, Tuple
import zlib

import consts
import errors
from errors import MalformedGzip, MalformedTar, PathTooLong, NotARegularFile
import helper
from keystore import SignatureEnvelope
from type_checker import CheckType, CheckType2, CheckBytes

kPathEncoding = 'utf-8'
kPathEncodingErrors = 'surrogateescape'

# Largest value representable in an 11-digit octal header field
kMaxOctalSize = 8 ** 11 - 1
kMaxOctalId = 8 ** 7 - 1

kPaxHeaderTypeflag = b'x'
kPaxGlobalHeaderTypeflag = b'g'
kPaxHeaderNamePrefix = 'PaxHeaders/'

class TarType(Enum):
    kRegular = b'0'
    kHardlink = b'1'
    kSymlink = b'2'
    kDirectory = b'5'

# Old-style regular files use a NUL typeflag
kTypeflagAliases = {b'\x00' : TarType.kRegular, b'7' : TarType.kRegular}

@dataclass(frozen=True)
class PaxRecord:
    '''
    Member variables:
     - key: str
     - value: bytes (arbitrary, may be non-UTF-8)
    '''
    key: str
    value: bytes

    def __post_init__(self):
        CheckType(self.key, 'key', str)
        CheckBytes(self.value, 'value')
        if ((self.key == '') or ('=' in self.key) or ('\n' in self.key)):
            errors.Error(MalformedTar('invalid pax key: "{}"'.format(self.key)))
        object.__setattr__(self, 'value', bytes(self.value))

    # Serialized form is "<len> <key>=<value>\n", where <len> counts the whole record,
    # including the digits of <len> itself
    def Serialize(self) -> bytes:
        body: bytes = b' ' + self.key.encode(kPathEncoding) + b'=' + self.value + b'\n'
        length = previous_length = 0
        while (True):
            length = len(body) + len(str(previous_length))
            if (length == previous_length):
                break
            previous_length = length
        return str(length).encode('ascii') + body
    # End Serialize
# End class PaxRecord

@dataclass(frozen=True)
class TarEntry:
    '''
    Member variables:
     - path: str ('/'-separated, no trailing '/')
     - mode: int (permission bits)
     - uid: int
     - gid: int
     - typeflag: TarType
     - link_target: str or None (symlinks and hardlinks only)
     - mtime: int (seconds since epoch)
     - content: bytes (empty for non-regular entries)
     - pax_records: tuple of PaxRecord, at most one per key, in wire order
    '''
    path: str
    mode: int = consts.kControlFileMode
    uid: int = 0
    gid: int = 0
    typeflag: TarType = TarType.kRegular
    link_target: str = None
    mtime: int = 0
    content: bytes = b''
    pax_records: Tuple[PaxRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        CheckType(self.path, 'path', str)
        CheckType(self.mode, 'mode', int)
        CheckType(self.uid, 'uid', int)
        CheckType(self.gid, 'gid', int)
        CheckType(self.typeflag, 'typeflag', TarType)
        CheckType(self.link_target, 'link_target', (str, type(None)))
        CheckType(self.mtime, 'mtime', int)
        CheckBytes(self.content, 'content')
        CheckType2(self.pax_records, 'pax_records', (list, tuple), PaxRecord)
        object.__setattr__(self, 'content', bytes(self.content))
        object.__setattr__(self, 'pax_records', tuple(self.pax_records))
        object.__setattr__(self, 'path', self.path.rstrip('/') or self.path)
        if ((self.path == '') or ('\x00' in self.path)):
            errors.Error(MalformedTar('invalid tar path: "{}"'.format(self.path)))
        if ((self.typeflag != TarType.kRegular) and (len(self.content) > 0)):
            errors.Error(MalformedTar('non-regular entry "{}" has content'.format(self.path)))
        if ((self.typeflag in (TarType.kSymlink, TarType.kHardlink))
                and not self.link_target):
            errors.Error(MalformedTar('link entry "{}" has no target'.format(self.path)))
        if ((self.typeflag not in (TarType.kSymlink, TarType.kHardlink))
                and (self.link_target is not None)):
            errors.Error(MalformedTar('non-link entry "{}" has a link target'.format(self.path)))
        keys = [record.key for record in self.pax_records]
        # path and linkpath records are carried by the path and link_target fields
        if (any(key in consts.kFieldPaxKeys for key in keys)):
            errors.Error(MalformedTar('entry "{}" carries a path or linkpath pax record'.format(
                    self.path)))
        if (len(keys) != len(set(keys))):
            errors.Error(MalformedTar('duplicate pax keys on "{}"'.format(self.path)))

    @property
    def size(self) -> int:
        return len(self.content)

    def IsRegular(self) -> bool:
        return self.typeflag == TarType.kRegular

    # Returns the value of the pax record with given key, or None
    def GetPaxValue(self, key: str) -> bytes or None:
        for record in self.pax_records:
            if (record.key == key):
                return record.value
        return None
    # End GetPaxValue

    # Returns a copy of this entry with the record for key set to value,
    # replacing an existing record in place or appending a new one
    def WithPaxRecord(self, key: str, value: bytes) -> 'TarEntry':
        new_record = PaxRecord(key, value)
        records = list(self.pax_records)
        for i, record in enumerate(records):
            if (record.key == key):
                records[i] = new_record
                return replace(self, pax_records=tuple(records))
        records.append(new_record)
        return replace(self, pax_records=tuple(records))
    # End WithPaxRecord

    def WithoutPaxRecord(self, key: str) -> 'TarEntry':
        return replace(self, pax_records=tuple(r for r in self.pax_records if r.key != key))

    def WithContent(self, content: bytes) -> 'TarEntry':
        return replace(self, content=content)
# End class TarEntry

@dataclass(frozen=True)
class GzipSegment:
    '''
    Member variables:
     - compressed_bytes: bytes
     - decompressed_bytes: bytes
     - byte_range: (start, end) offsets in the containing file, end exclusive
    '''
    compressed_bytes: bytes
    decompressed_bytes: bytes
    byte_range: Tuple[int, int]
# End class GzipSegment

# ============================ Entry Constructors ============================

def RegularFile(path: str, content: bytes, mode: int = consts.kControlFileMode,
                uid: int = 0, gid: int = 0) -> TarEntry:
    return TarEntry(path=path, mode=mode, uid=uid, gid=gid, content=content)
# End RegularFile

def Directory(path: str, mode: int = 0o755, uid: int = 0, gid: int = 0) -> TarEntry:
    return TarEntry(path=path, mode=mode, uid=uid, gid=gid, typeflag=TarType.kDirectory)
# End Directory

def Symlink(path: str, link_target: str) -> TarEntry:
    return TarEntry(path=path, mode=0o777, typeflag=TarType.kSymlink, link_target=link_target)
# End Symlink

# ================================== Gzip ==================================

# Emits one deterministic gzip member (header mtime 0)
def CompressGzip(data: bytes, level: int = consts.kGzipCompressionLevel) -> bytes:
    CheckBytes(data, 'data')
    CheckType(level, 'level', int)
    return gzip.compress(bytes(data), compresslevel=level, mtime=0)
# End CompressGzip

def SplitGzipStreams(data: bytes) -> List[GzipSegment]:
    CheckBytes(data, 'data')
    data = bytes(data)
    if (not data.startswith(consts.kGzipMagic)):
        errors.Error(MalformedGzip('missing gzip magic', 0))
    segments: List[GzipSegment] = []
    view = memoryview(data)
    offset = 0
    while (offset < len(data)):
        if (data[offset : offset + len(consts.kGzipMagic)] != consts.kGzipMagic):
            errors.Error(MalformedGzip('unexpected bytes after gzip stream', offset))
        # wbits=31: gzip wrapper, max window
        decompressor = zlib.decompressobj(wbits=31)
        try:
            decompressed: bytes = decompressor.decompress(view[offset :])
            decompressed += decompressor.flush()
        except zlib.error as e:
            errors.Error(MalformedGzip('corrupt gzip stream: {}'.format(e), offset))
        if (not decompressor.eof):
            errors.Error(MalformedGzip('truncated gzip stream', offset))
        end = len(data) - len(decompressor.unused_data)
        segments.append(GzipSegment(data[offset : end], decompressed, (offset, end)))
        offset = end
    return segments
# End SplitGzipStreams

# ============================== Header Fields ==============================

def _EncodePath(path: str) -> bytes:
    return path.encode(kPathEncoding, kPathEncodingErrors)

def _DecodePath(raw: bytes) -> str:
    return raw.decode(kPathEncoding, kPathEncodingErrors)

def _Octal(value: int, width: int) -> bytes:
    return '{:0{}o}'.format(value, width - 1).encode('ascii') + b'\x00'

def _Field(raw: bytes, width: int) -> bytes:
    return raw[: width] + b'\x00' * (width - len(raw[: width]))

def _NulTerminated(raw: bytes) -> bytes:
    nul_index = raw.find(b'\x00')
    return raw if (nul_index == -1) else raw[: nul_index]

def _ParseOctal(raw: bytes, field_name: str) -> int:
    # Base-256 encoding (leading 0x80) is used by GNU tar for large values
    if ((len(raw) > 0) and (raw[0] & 0x80)):
        return int.from_bytes(bytes([raw[0] & 0x7f]) + raw[1 :], 'big')
    text = _NulTerminated(raw).strip(b' ')
    try:
        return int(text, 8) if (text != b'') else 0
    except ValueError:
        errors.Error(MalformedTar('invalid octal {} field: {!r}'.format(field_name, raw)))
# End _ParseOctal

# Returns (unsigned_sum, signed_sum) of the header with the checksum field read as spaces
def _HeaderChecksums(header: bytes) -> Tuple[int, int]:
    blanked = header[: 148] + b' ' * 8 + header[156 :]
    unsigned_sum = sum(blanked)
    signed_sum = sum(b - 256 if (b > 127) else b for b in blanked)
    return unsigned_sum, signed_sum
# End _HeaderChecksums

def _BuildHeader(name: bytes, mode: int, uid: int, gid: int, size: int, mtime: int,
                 typeflag: bytes, linkname: bytes) -> bytes:
    if (size > kMaxOctalSize):
        errors.Error(PathTooLong('header payload of {} bytes exceeds tar capacity'.format(size)))
    if (not (0 <= uid <= kMaxOctalId) or not (0 <= gid <= kMaxOctalId)):
        errors.Error(MalformedTar('uid/gid out of range: {}/{}'.format(uid, gid)))
    if (not (0 <= mtime <= kMaxOctalSize)):
        errors.Error(MalformedTar('mtime out of range: {}'.format(mtime)))
    header = b''.join([
        _Field(name, 100),
        _Octal(mode & 0o7777, 8),
        _Octal(uid, 8),
        _Octal(gid, 8),
        _Octal(size, 12),
        _Octal(mtime, 12),
        b' ' * 8,
        typeflag,
        _Field(linkname, 100),
        consts.kUstarMagic,
        consts.kUstarVersion,
        _Field(b'', 32),  # uname
        _Field(b'', 32),  # gname
        _Field(b'', 8),  # devmajor
        _Field(b'', 8),  # devminor
        _Field(b'', 155),  # prefix
        _Field(b'', 12)])
    checksum, _ = _HeaderChecksums(header)
    checksum_field = '{:06o}'.format(checksum).encode('ascii') + b'\x00 '
    return header[: 148] + checksum_field + header[156 :]
# End _BuildHeader

def _PadToBlock(data: bytes) -> bytes:
    return data + b'\x00' * (helper.PadToBlock(len(data), consts.kTarBlockSize) - len(data))

# ================================== Tar ==================================

def _SerializeEntry(entry: TarEntry) -> bytes:
    header_path = entry.path + ('/' if (entry.typeflag == TarType.kDirectory) else '')
    encoded_path = _EncodePath(header_path)
    encoded_link = _EncodePath(entry.link_target or '')
    records: List[PaxRecord] = []
    if (len(encoded_path) > consts.kUstarNameFieldSize):
        records.append(PaxRecord(consts.kPaxPathKey, encoded_path))
    if (len(encoded_link) > consts.kUstarNameFieldSize):
        records.append(PaxRecord(consts.kPaxLinkpathKey, encoded_link))
    records.extend(entry.pax_records)
    output = b''
    if (len(records) > 0):
        pax_data = b''.join(record.Serialize() for record in records)
        pax_name = _EncodePath(kPaxHeaderNamePrefix + entry.path.rsplit('/', 1)[-1])
        output += _BuildHeader(pax_name, 0o644, 0, 0, len(pax_data), entry.mtime,
                               kPaxHeaderTypeflag, b'')
        output += _PadToBlock(pax_data)
    output += _BuildHeader(encoded_path, entry.mode, entry.uid, entry.gid, entry.size,
                           entry.mtime, entry.typeflag.value, encoded_link)
    output += _PadToBlock(entry.content)
    return output
# End _SerializeEntry

def WriteTar(entries: List[TarEntry], include_trailer: bool = True) -> bytes:
    CheckType2(entries, 'entries', (list, tuple), TarEntry)
    CheckType(include_trailer, 'include_trailer', bool)
    output = b''.join(_SerializeEntry(entry) for entry in entries)
    if (include_trailer):
        output += b'\x00' * consts.kTarTrailerSize
    return output
# End WriteTar

def ParsePaxData(data: bytes) -> List[PaxRecord]:
    records: List[PaxRecord] = []
    position = 0
    while (position < len(data)):
        space_index = data.find(b' ', position)
        if (space_index == -1):
            errors.Error(MalformedTar('pax record without length at offset {}'.format(position)))
        length_text = data[position : space_index]
        if (not length_text.isdigit()):
            errors.Error(MalformedTar('invalid pax record length: {!r}'.format(length_text)))
        length = int(length_text)
        record = data[position : position + length]
        if ((length <= len(length_text) + 1) or (len(record) != length)
                or not record.endswith(b'\n')):
            errors.Error(MalformedTar('pax record length mismatch at offset {}'.format(position)))
        key_value = record[len(length_text) + 1 : -1]
        equals_index = key_value.find(b'=')
        if (equals_index <= 0):
            errors.Error(MalformedTar('pax record without key at offset {}'.format(position)))
        try:
            key = key_value[: equals_index].decode(kPathEncoding)
        except UnicodeDecodeError:
            errors.Error(MalformedTar('non UTF-8 pax key at offset {}'.format(position)))
        records.append(PaxRecord(key, key_value[equals_index + 1 :]))
        position += length
    return records
# End ParsePaxData

# Later records with the same key override earlier ones, keeping the first position
def _MergePaxRecords(records: List[PaxRecord]) -> List[PaxRecord]:
    merged = {}
    for record in records:
        merged[record.key] = record
    return list(merged.values())
# End _MergePaxRecords

def ReadTar(data: bytes, allow_missing_trailer: bool = False) -> List[TarEntry]:
    CheckBytes(data, 'data')
    CheckType(allow_missing_trailer, 'allow_missing_trailer', bool)
    data = bytes(data)
    block_size = consts.kTarBlockSize
    entries: List[TarEntry] = []
    pending_records: List[PaxRecord] = []
    position = 0
    found_trailer = False
    while (position < len(data)):
        header = data[position : position + block_size]
        if (len(header) < block_size):
            errors.Error(MalformedTar('short read in header at offset {}'.format(position)))
        if (header == b'\x00' * block_size):
            found_trailer = True
            break
        stored_checksum = _ParseOctal(header[148 : 156], 'chksum')
        if (stored_checksum not in _HeaderChecksums(header)):
            errors.Error(MalformedTar('bad header checksum at offset {}'.format(position)))
        if (not header[257 : 262] == consts.kUstarMagic[: 5]):
            errors.Error(MalformedTar('missing ustar magic at offset {}'.format(position)))
        size = _ParseOctal(header[124 : 136], 'size')
        payload_start = position + block_size
        payload = data[payload_start : payload_start + size]
        if (len(payload) < size):
            errors.Error(MalformedTar('short read in entry payload at offset {}'.format(
                    payload_start)))
        position = payload_start + helper.PadToBlock(size, block_size)
        raw_typeflag = header[156 : 157]
        if (raw_typeflag == kPaxHeaderTypeflag):
            pending_records.extend(ParsePaxData(payload))
            continue
        if (raw_typeflag == kPaxGlobalHeaderTypeflag):
            continue
        if (raw_typeflag in kTypeflagAliases):
            typeflag = kTypeflagAliases[raw_typeflag]
        else:
            try:
                typeflag = TarType(raw_typeflag)
            except ValueError:
                errors.Error(MalformedTar('unsupported typeflag {!r} at offset {}'.format(
                        raw_typeflag, position)))
        name = _NulTerminated(header[0 : 100])
        prefix = _NulTerminated(header[345 : 500])
        path = _DecodePath(prefix + b'/' + name if prefix else name)
        link_target = _DecodePath(_NulTerminated(header[157 : 257])) or None
        kept_records = []
        for record in _MergePaxRecords(pending_records):
            if (record.key == consts.kPaxPathKey):
                path = _DecodePath(record.value)
            elif (record.key == consts.kPaxLinkpathKey):
                link_target = _DecodePath(record.value)
            else:
                kept_records.append(record)
        pending_records = []
        if (typeflag != TarType.kRegular):
            payload = b''
        if (typeflag not in (TarType.kSymlink, TarType.kHardlink)):
            link_target = None
        entries.append(TarEntry(
                path=path,
                mode=_ParseOctal(header[100 : 108], 'mode'),
                uid=_ParseOctal(header[108 : 116], 'uid'),
                gid=_ParseOctal(header[116 : 124], 'gid'),
                typeflag=typeflag,
                link_target=link_target,
                mtime=_ParseOctal(header[136 : 148], 'mtime'),
                content=payload,
                pax_records=tuple(kept_records)))
    if (len(pending_records) > 0):
        errors.Error(MalformedTar('pax header not followed by an entry'))
    if (not found_trailer and not allow_missing_trailer):
        errors.Error(MalformedTar('missing end-of-archive blocks'))
    return entries
# End ReadTar

# ============================ Signature Records ============================

# envelope may be a SignatureEnvelope or its serialized bytes
def AttachSignatureRecord(entry: TarEntry, envelope: SignatureEnvelope or bytes) -> TarEntry:
    CheckType(entry, 'entry', TarEntry)
    CheckType(envelope, 'envelope', (SignatureEnvelope, bytes, bytearray))
    if (not entry.IsRegular()):
        errors.Error(NotARegularFile('cannot sign non-regular entry "{}"'.format(entry.path)))
    envelope_bytes = (envelope.Serialize() if isinstance(envelope, SignatureEnvelope)
                      else bytes(envelope))
    return entry.WithPaxRecord(consts.kImaPaxKey, envelope_bytes)
# End AttachSignatureRecord

# Returns the SignatureEnvelope carried by the entry, or None if it has no signature record
# Raises MalformedEnvelope if the record is present but cannot be parsed
def ParseSignatureRecord(entry: TarEntry) -> SignatureEnvelope or None:
    CheckType(entry, 'entry', TarEntry)
    value = entry.GetPaxValue(consts.kImaPaxKey)
    return None if (value is None) else SignatureEnvelope.Parse(value)
# End ParseSignatureRecord
