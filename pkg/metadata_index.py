'''
The signed repository metadata index (APKINDEX layout).

APKINDEX.tar.gz is two concatenated gzip streams:
    gzip(tar[.SIGN.<RSA|ED25519>.<keyid>.pub]) ++ gzip(tar[DESCRIPTION, APKINDEX])
The signature covers the second stream's compressed bytes. It is verified before any
stanza is parsed.

Each package is one stanza of "X:value" lines terminated by a blank line:
    C:Q1<base64 SHA-1 of the package's control segment>
    P:name  V:version  A:arch  S:package size  I:installed size  D:depends (if any)
Lines with unknown keys are preserved verbatim after the known ones.
'''

import base64
import binascii
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import archive
import consts
import errors
from errors import MalformedIndex, SignatureInvalid
import helper
from keystore import PublicKey, SignatureEnvelope, SigningKeypair
import package
from package import ApkPackage
from type_checker import CheckType, CheckType2, CheckBytes

kKnownStanzaKeys = ('C', 'P', 'V', 'A', 'S', 'I', 'D')
kRequiredStanzaKeys = ('C', 'P', 'V', 'A', 'S')

@dataclass(frozen=True)
class IndexEntry:
    '''
    Member variables:
     - checksum: bytes (20-byte SHA-1 of the control segment's compressed bytes)
     - name: str
     - version: str
     - arch: str
     - package_size: int (size of the whole .apk file)
     - installed_size: int
     - depends: tuple of str
     - extra_lines: tuple of str (unknown "X:value" stanza lines, verbatim)
    '''
    checksum: bytes
    name: str
    version: str
    arch: str
    package_size: int
    installed_size: int = 0
    depends: Tuple[str, ...] = field(default_factory=tuple)
    extra_lines: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        CheckBytes(self.checksum, 'checksum')
        object.__setattr__(self, 'checksum', bytes(self.checksum))
        object.__setattr__(self, 'depends', tuple(self.depends))
        object.__setattr__(self, 'extra_lines', tuple(self.extra_lines))
        if (len(self.checksum) != consts.kSha1DigestSize):
            errors.Error(MalformedIndex('{}: checksum must be {} bytes'.format(
                    self.name, consts.kSha1DigestSize)))
        if (self.package_size <= 0):
            errors.Error(MalformedIndex('{}: package size must be positive'.format(self.name)))

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.name, self.version, self.arch)

    @property
    def filename(self) -> str:
        return consts.kPackageFilenameTemplate.format(self.name, self.version)

    def SerializeStanza(self) -> str:
        lines = ['C:' + consts.kIndexChecksumPrefix + base64.b64encode(self.checksum).decode('ascii'),
                 'P:' + self.name,
                 'V:' + self.version,
                 'A:' + self.arch,
                 'S:' + str(self.package_size),
                 'I:' + str(self.installed_size)]
        if (len(self.depends) > 0):
            lines.append('D:' + ' '.join(self.depends))
        lines += list(self.extra_lines)
        return '\n'.join(lines) + '\n\n'
    # End SerializeStanza
# End class IndexEntry

@dataclass(frozen=True)
class MetadataIndex:
    '''
    Member variables:
     - entries: tuple of IndexEntry, sorted by (name, version, arch)
     - description: str
     - signature: SignatureEnvelope (over the compressed body stream)
     - content_hash: bytes (SHA-256 of the APKINDEX text)
    '''
    entries: Tuple[IndexEntry, ...]
    description: str
    signature: SignatureEnvelope
    content_hash: bytes

    def FindEntry(self, name: str, version: str) -> IndexEntry or None:
        for entry in self.entries:
            if ((entry.name == name) and (entry.version == version)):
                return entry
        return None
    # End FindEntry

    def FindByFilename(self, filename: str) -> IndexEntry or None:
        for entry in self.entries:
            if (entry.filename == filename):
                return entry
        return None
    # End FindByFilename
# End class MetadataIndex

@dataclass(frozen=True)
class ChangeSet:
    '''
    Member variables (each sorted by (name, arch)):
     - added: list of IndexEntry (from the new index)
     - removed: list of IndexEntry (from the old index)
     - changed: list of IndexEntry (from the new index)
    '''
    added: List[IndexEntry]
    removed: List[IndexEntry]
    changed: List[IndexEntry]

    def IsEmpty(self) -> bool:
        return (len(self.added) + len(self.removed) + len(self.changed)) == 0
# End class ChangeSet

# =============================== Index Body ===============================

def SerializeIndexBody(entries: List[IndexEntry]) -> str:
    return ''.join(entry.SerializeStanza() for entry in SortEntries(entries))
# End SerializeIndexBody

def SortEntries(entries: List[IndexEntry]) -> List[IndexEntry]:
    return sorted(entries, key=lambda entry: entry.key)

def _ParseChecksum(value: str) -> bytes:
    if (not value.startswith(consts.kIndexChecksumPrefix)):
        errors.Error(MalformedIndex('unsupported checksum format: "{}"'.format(value)))
    try:
        return base64.b64decode(value[len(consts.kIndexChecksumPrefix) :], validate=True)
    except binascii.Error:
        errors.Error(MalformedIndex('invalid checksum encoding: "{}"'.format(value)))
# End _ParseChecksum

def _ParseStanza(lines: List[str]) -> IndexEntry:
    values: Dict[str, str] = {}
    extra_lines = []
    for line in lines:
        if ((len(line) < 2) or (line[1] != ':')):
            errors.Error(MalformedIndex('malformed index line: "{}"'.format(line)))
        key, value = line[0], line[2 :]
        if (key in kKnownStanzaKeys):
            if (key in values):
                errors.Error(MalformedIndex('repeated "{}:" line in stanza'.format(key)))
            values[key] = value
        else:
            extra_lines.append(line)
    missing_keys = [key for key in kRequiredStanzaKeys if key not in values]
    if (len(missing_keys) > 0):
        errors.Error(MalformedIndex('stanza missing keys {}: {}'.format(missing_keys, lines)))
    for numeric_key in ('S', 'I'):
        if (not values.get(numeric_key, '0').isdigit()):
            errors.Error(MalformedIndex('non-numeric "{}:" value: "{}"'.format(
                    numeric_key, values[numeric_key])))
    return IndexEntry(checksum=_ParseChecksum(values['C']),
                      name=values['P'],
                      version=values['V'],
                      arch=values['A'],
                      package_size=int(values['S']),
                      installed_size=int(values.get('I', '0')),
                      depends=tuple(values['D'].split()) if ('D' in values) else (),
                      extra_lines=tuple(extra_lines))
# End _ParseStanza

def ParseIndexBody(text: str) -> List[IndexEntry]:
    CheckType(text, 'text', str)
    entries = []
    current_lines = []
    for line in text.split('\n') + ['']:
        if (line == ''):
            if (len(current_lines) > 0):
                entries.append(_ParseStanza(current_lines))
            current_lines = []
        else:
            current_lines.append(line)
    keys = [entry.key for entry in entries]
    if (len(keys) != len(set(keys))):
        duplicates = sorted({key for key in keys if keys.count(key) > 1})
        errors.Error(MalformedIndex('duplicate (name, version, arch) stanzas: {}'.format(
                duplicates)))
    return SortEntries(entries)
# End ParseIndexBody

# ================================ Generation ================================

def IndexEntryForPackage(pkg: ApkPackage, apk_bytes: bytes) -> IndexEntry:
    CheckType(pkg, 'pkg', ApkPackage)
    CheckBytes(apk_bytes, 'apk_bytes')
    return IndexEntry(checksum=helper.Sha1(pkg.control_segment_bytes),
                      name=pkg.pkginfo.pkgname,
                      version=pkg.pkginfo.pkgver,
                      arch=pkg.pkginfo.arch,
                      package_size=len(apk_bytes),
                      installed_size=pkg.pkginfo.size,
                      depends=pkg.pkginfo.depends)
# End IndexEntryForPackage

# Signs and serializes a list of entries into APKINDEX.tar.gz bytes
def GenerateIndexFromEntries(entries: List[IndexEntry], signer: SigningKeypair,
                             description: str) -> bytes:
    CheckType2(entries, 'entries', (list, tuple), IndexEntry)
    CheckType(signer, 'signer', SigningKeypair)
    CheckType(description, 'description', str)
    keys = [entry.key for entry in entries]
    if (len(keys) != len(set(keys))):
        errors.Error(MalformedIndex('duplicate (name, version, arch) entries'))
    body_entries = [archive.RegularFile(consts.kDescriptionFilename, description.encode('utf-8')),
                    archive.RegularFile(consts.kIndexFilename,
                                        SerializeIndexBody(entries).encode('utf-8'))]
    body_stream = archive.CompressGzip(archive.WriteTar(body_entries, include_trailer=True))
    return package.BuildSignatureSegment(signer, body_stream) + body_stream
# End GenerateIndexFromEntries

def GenerateIndex(packages: List[Tuple[ApkPackage, bytes]], signer: SigningKeypair,
                  description: str) -> bytes:
    CheckType(packages, 'packages', (list, tuple))
    entries = [IndexEntryForPackage(pkg, apk_bytes) for pkg, apk_bytes in packages]
    return GenerateIndexFromEntries(entries, signer, description)
# End GenerateIndex

# ================================= Parsing =================================

def ParseIndex(data: bytes, trusted_keys: List[PublicKey]) -> MetadataIndex:
    CheckBytes(data, 'data')
    CheckType2(trusted_keys, 'trusted_keys', (list, tuple), PublicKey)
    segments = archive.SplitGzipStreams(data)
    if (len(segments) == 1):
        errors.Error(SignatureInvalid('index has no signature stream'))
    if (len(segments) != 2):
        errors.Error(MalformedIndex('expected 2 gzip streams, found {}'.format(len(segments))))
    signature_stream, body_stream = segments
    signature_entries = [entry for entry in archive.ReadTar(
                                 signature_stream.decompressed_bytes, allow_missing_trailer=True)
                         if entry.path.startswith(consts.kSignatureEntryPrefix)]
    signer = package.VerifySignatureEntries(signature_entries, body_stream.compressed_bytes,
                                            trusted_keys)
    raw_signature = next(entry.content for entry in signature_entries
                         if signer.Verify(entry.content, body_stream.compressed_bytes))
    body_files = {entry.path : entry.content for entry in archive.ReadTar(
                          body_stream.decompressed_bytes, allow_missing_trailer=True)}
    if (consts.kIndexFilename not in body_files):
        errors.Error(MalformedIndex('index stream has no {} file'.format(consts.kIndexFilename)))
    try:
        body_text = body_files[consts.kIndexFilename].decode('utf-8')
        description = body_files.get(consts.kDescriptionFilename, b'').decode('utf-8')
    except UnicodeDecodeError:
        errors.Error(MalformedIndex('index files are not UTF-8'))
    envelope = SignatureEnvelope(consts.kEnvelopeVersion, consts.kAlgorithmIds[signer.algorithm],
                                 signer.key_id, raw_signature)
    return MetadataIndex(entries=tuple(ParseIndexBody(body_text)),
                         description=description,
                         signature=envelope,
                         content_hash=helper.Sha256(body_files[consts.kIndexFilename]))
# End ParseIndex

# Keys entries by (name, arch); a later entry in sort order wins on duplicates
def _EntriesByNameArch(index: MetadataIndex or None) -> Dict[Tuple[str, str], IndexEntry]:
    if (index is None):
        return {}
    return {(entry.name, entry.arch) : entry for entry in SortEntries(list(index.entries))}
# End _EntriesByNameArch

def DiffIndexes(old: MetadataIndex or None, new: MetadataIndex or None) -> ChangeSet:
    CheckType(old, 'old', (MetadataIndex, type(None)))
    CheckType(new, 'new', (MetadataIndex, type(None)))
    old_map = _EntriesByNameArch(old)
    new_map = _EntriesByNameArch(new)
    added = [new_map[key] for key in sorted(new_map) if key not in old_map]
    removed = [old_map[key] for key in sorted(old_map) if key not in new_map]
    changed = [new_map[key] for key in sorted(new_map)
               if (key in old_map) and ((old_map[key].version != new_map[key].version)
                                        or (old_map[key].checksum != new_map[key].checksum))]
    return ChangeSet(added=added, removed=removed, changed=changed)
# End DiffIndexes
