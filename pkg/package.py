'''
Parsing, verification and construction of apk v2 packages.

On the wire a package is three concatenated gzip streams:
 1. signature segment: tar (no trailer) holding ".SIGN.<RSA|ED25519>.<keyid hex>.pub",
    whose content is the raw signature over the control segment's compressed bytes
 2. control segment: tar (no trailer) holding .PKGINFO and the install scripts
 3. data segment: tar (with trailer) holding the files to install

.PKGINFO holds "key = value" lines; datahash is the SHA-256 of the data segment's
compressed bytes, so verifying the control signature transitively covers the data.
'''

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Tuple

import archive
from archive import TarEntry
import consts
import errors
from errors import (MalformedPackage, DatahashMismatch, MissingPkgInfo, UntrustedSigner,
                    SignatureInvalid)
import helper
import keystore
from keystore import PublicKey, SigningKeypair
from type_checker import CheckType, CheckType2, CheckBytes

class ScriptKind(Enum):
    kPreInstall = 'pre-install'
    kPostInstall = 'post-install'
    kPreUpgrade = 'pre-upgrade'
    kPostUpgrade = 'post-upgrade'
    kPreDeinstall = 'pre-deinstall'
    kPostDeinstall = 'post-deinstall'
    kTrigger = 'trigger'

    @property
    def filename(self) -> str:
        return consts.kScriptFilenames[self.value]
# End class ScriptKind

# Enum definition order is the order scripts are written into the control segment
kScriptKindOrder = list(ScriptKind)

kPkgInfoFixedKeys = ('pkgname', 'pkgver', 'arch', 'size', 'datahash')
kPkgInfoRequiredKeys = ('pkgname', 'pkgver', 'arch', 'datahash')
kDependKey = 'depend'

@dataclass(frozen=True)
class PkgInfo:
    '''
    Member variables:
     - pkgname: str
     - pkgver: str
     - arch: str
     - size: int (installed size)
     - datahash: str (64 lowercase hex chars, or '' before the package is built)
     - depends: tuple of str
     - extra_fields: tuple of (key, value) pairs, passed through verbatim
    '''
    pkgname: str
    pkgver: str
    arch: str = 'noarch'
    size: int = 0
    datahash: str = ''
    depends: Tuple[str, ...] = field(default_factory=tuple)
    extra_fields: Tuple[Tuple[str, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        CheckType(self.pkgname, 'pkgname', str)
        CheckType(self.pkgver, 'pkgver', str)
        CheckType(self.arch, 'arch', str)
        CheckType(self.size, 'size', int)
        CheckType(self.datahash, 'datahash', str)
        object.__setattr__(self, 'depends', tuple(self.depends))
        object.__setattr__(self, 'extra_fields', tuple(tuple(kv) for kv in self.extra_fields))
        if (not consts.kPkgNamePattern.match(self.pkgname)):
            errors.Error(MalformedPackage('invalid pkgname: "{}"'.format(self.pkgname)))
        if ((self.pkgver == '') or any(c.isspace() for c in self.pkgver)):
            errors.Error(MalformedPackage('invalid pkgver: "{}"'.format(self.pkgver)))
        if ((self.datahash != '') and not consts.kHexDigestPattern.match(self.datahash)):
            errors.Error(MalformedPackage('invalid datahash: "{}"'.format(self.datahash)))

    def Serialize(self) -> bytes:
        lines = ['pkgname = ' + self.pkgname,
                 'pkgver = ' + self.pkgver,
                 'arch = ' + self.arch,
                 'size = ' + str(self.size),
                 'datahash = ' + self.datahash]
        lines += [kDependKey + ' = ' + depend for depend in self.depends]
        lines += ['{} = {}'.format(key, value) for key, value in self.extra_fields]
        return ('\n'.join(lines) + '\n').encode('utf-8')
    # End Serialize
# End class PkgInfo

def ParsePkgInfo(text: bytes) -> PkgInfo:
    CheckBytes(text, 'text')
    try:
        lines = bytes(text).decode('utf-8').split('\n')
    except UnicodeDecodeError:
        errors.Error(MalformedPackage('.PKGINFO is not UTF-8'))
    fixed_values = {}
    depends = []
    extra_fields = []
    for line in lines:
        if ((line.strip() == '') or line.startswith('#')):
            continue
        if (' = ' not in line):
            errors.Error(MalformedPackage('malformed .PKGINFO line: "{}"'.format(line)))
        key, value = line.split(' = ', 1)
        if (key in kPkgInfoFixedKeys):
            fixed_values[key] = value
        elif (key == kDependKey):
            depends.append(value)
        else:
            extra_fields.append((key, value))
    missing_keys = [key for key in kPkgInfoRequiredKeys if key not in fixed_values]
    if (len(missing_keys) > 0):
        errors.Error(MalformedPackage('.PKGINFO missing fields: {}'.format(missing_keys)))
    size_string = fixed_values.get('size', '0')
    if (not size_string.isdigit()):
        errors.Error(MalformedPackage('invalid .PKGINFO size: "{}"'.format(size_string)))
    return PkgInfo(pkgname=fixed_values['pkgname'], pkgver=fixed_values['pkgver'],
                   arch=fixed_values['arch'], size=int(size_string),
                   datahash=fixed_values['datahash'], depends=tuple(depends),
                   extra_fields=tuple(extra_fields))
# End ParsePkgInfo

@dataclass(frozen=True)
class ApkPackage:
    '''
    Member variables:
     - signature_entries: tuple of TarEntry (".SIGN.*" entries)
     - pkginfo: PkgInfo
     - scripts: dict {ScriptKind : script text}
     - data_entries: tuple of TarEntry
     - control_entries: tuple of TarEntry (.PKGINFO and scripts as they appear in the tar)
     - signature_segment_bytes: bytes (compressed, exactly as on the wire)
     - control_segment_bytes: bytes (compressed, exactly as on the wire)
     - data_segment_bytes: bytes (compressed, exactly as on the wire)
    '''
    signature_entries: Tuple[TarEntry, ...]
    pkginfo: PkgInfo
    scripts: Dict[ScriptKind, str]
    data_entries: Tuple[TarEntry, ...]
    control_entries: Tuple[TarEntry, ...]
    signature_segment_bytes: bytes
    control_segment_bytes: bytes
    data_segment_bytes: bytes

    @property
    def name(self) -> str:
        return self.pkginfo.pkgname

    @property
    def version(self) -> str:
        return self.pkginfo.pkgver

    @property
    def filename(self) -> str:
        return consts.kPackageFilenameTemplate.format(self.name, self.version)

    def GetScriptEntry(self, kind: ScriptKind) -> TarEntry or None:
        for entry in self.control_entries:
            if (entry.path == kind.filename):
                return entry
        return None
    # End GetScriptEntry
# End class ApkPackage

@dataclass(frozen=True)
class VerificationResult:
    signer_key_id: bytes
# End class VerificationResult

# ============================ Signature Entries ============================

def SignatureEntryName(public_key: PublicKey) -> str:
    return '{}{}.{}.pub'.format(consts.kSignatureEntryPrefix,
                                consts.kSignatureNameTokens[public_key.algorithm],
                                public_key.key_id_hex)
# End SignatureEntryName

# Returns (algorithm token, key name) for ".SIGN.<token>.<keyname>", or None
def ParseSignatureEntryName(name: str) -> Tuple[str, str] or None:
    if (not name.startswith(consts.kSignatureEntryPrefix)):
        return None
    remainder = name[len(consts.kSignatureEntryPrefix) :]
    if ('.' not in remainder):
        return None
    token, key_name = remainder.split('.', 1)
    if (key_name.endswith('.pub')):
        key_name = key_name[: -len('.pub')]
    return token, key_name
# End ParseSignatureEntryName

def BuildSignatureSegment(signer: SigningKeypair, signed_bytes: bytes) -> bytes:
    signature_entry = archive.RegularFile(SignatureEntryName(signer.public_key),
                                          keystore.SignDetached(signer, signed_bytes))
    return archive.CompressGzip(archive.WriteTar([signature_entry], include_trailer=False))
# End BuildSignatureSegment

# Returns the trusted key that verified some signature entry over signed_bytes.
# Raises SignatureInvalid if an entry names a trusted key but does not verify (or there are
# no entries at all), and UntrustedSigner if no entry names any trusted key.
# Success depends only on the existence of a verifying (entry, key) pair, so adding trusted
# keys can never turn success into failure.
def VerifySignatureEntries(signature_entries: List[TarEntry], signed_bytes: bytes,
                           trusted_signers: List[PublicKey]) -> PublicKey:
    CheckType2(signature_entries, 'signature_entries', (list, tuple), TarEntry)
    CheckBytes(signed_bytes, 'signed_bytes')
    CheckType2(trusted_signers, 'trusted_signers', (list, tuple), PublicKey)
    if (len(signature_entries) == 0):
        errors.Error(SignatureInvalid('no signature entries present'))
    named_trusted_key = False
    for entry in signature_entries:
        parsed_name = ParseSignatureEntryName(entry.path)
        if (parsed_name is None):
            continue
        token, key_name = parsed_name
        for public_key in trusted_signers:
            if ((key_name != public_key.key_id_hex)
                    or (token != consts.kSignatureNameTokens[public_key.algorithm])):
                continue
            named_trusted_key = True
            if (public_key.Verify(entry.content, signed_bytes)):
                return public_key
    if (named_trusted_key):
        errors.Error(SignatureInvalid('signature does not verify under the named trusted key'))
    errors.Error(UntrustedSigner('signed by: {}; trusted key ids: {}'.format(
            [entry.path for entry in signature_entries],
            [key.key_id_hex for key in trusted_signers])))
# End VerifySignatureEntries

# ================================= Parsing =================================

def ParseApk(data: bytes) -> ApkPackage:
    CheckBytes(data, 'data')
    segments = archive.SplitGzipStreams(data)
    if (len(segments) != 3):
        errors.Error(MalformedPackage('expected 3 gzip segments, found {}'.format(len(segments))))
    signature_segment, control_segment, data_segment = segments
    signature_entries = archive.ReadTar(signature_segment.decompressed_bytes,
                                        allow_missing_trailer=True)
    for entry in signature_entries:
        if (not entry.path.startswith(consts.kSignatureEntryPrefix)):
            errors.Error(MalformedPackage('unexpected entry in signature segment: "{}"'.format(
                    entry.path)))
    control_entries = archive.ReadTar(control_segment.decompressed_bytes,
                                      allow_missing_trailer=True)
    pkginfo_entries = [e for e in control_entries if e.path == consts.kPkgInfoFilename]
    if (len(pkginfo_entries) != 1):
        errors.Error(MissingPkgInfo('control segment has {} .PKGINFO entries'.format(
                len(pkginfo_entries))))
    pkginfo = ParsePkgInfo(pkginfo_entries[0].content)
    actual_datahash = helper.Sha256Hex(data_segment.compressed_bytes)
    if (actual_datahash != pkginfo.datahash):
        errors.Error(DatahashMismatch('{}: datahash {} does not match data segment {}'.format(
                pkginfo.pkgname, pkginfo.datahash, actual_datahash)))
    scripts = {}
    for entry in control_entries:
        if (entry.path in consts.kScriptKindsByFilename):
            try:
                scripts[ScriptKind(consts.kScriptKindsByFilename[entry.path])] = \
                        entry.content.decode('utf-8')
            except UnicodeDecodeError:
                errors.Error(MalformedPackage('script {} is not UTF-8'.format(entry.path)))
    data_entries = archive.ReadTar(data_segment.decompressed_bytes, allow_missing_trailer=False)
    return ApkPackage(signature_entries=tuple(signature_entries),
                      pkginfo=pkginfo,
                      scripts=scripts,
                      data_entries=tuple(data_entries),
                      control_entries=tuple(control_entries),
                      signature_segment_bytes=signature_segment.compressed_bytes,
                      control_segment_bytes=control_segment.compressed_bytes,
                      data_segment_bytes=data_segment.compressed_bytes)
# End ParseApk

def SerializeApk(pkg: ApkPackage) -> bytes:
    CheckType(pkg, 'pkg', ApkPackage)
    return pkg.signature_segment_bytes + pkg.control_segment_bytes + pkg.data_segment_bytes
# End SerializeApk

# Pull checksum without a full parse: SHA-1 of the control segment's compressed bytes
def ControlSegmentSha1(apk_bytes: bytes) -> bytes:
    segments = archive.SplitGzipStreams(apk_bytes)
    if (len(segments) != 3):
        errors.Error(MalformedPackage('expected 3 gzip segments, found {}'.format(len(segments))))
    return helper.Sha1(segments[1].compressed_bytes)
# End ControlSegmentSha1

def VerifyPackage(pkg: ApkPackage, trusted_signers: List[PublicKey]) -> VerificationResult:
    CheckType(pkg, 'pkg', ApkPackage)
    CheckType2(trusted_signers, 'trusted_signers', (list, tuple), PublicKey)
    actual_datahash = helper.Sha256Hex(pkg.data_segment_bytes)
    if (actual_datahash != pkg.pkginfo.datahash):
        errors.Error(DatahashMismatch('{}: datahash mismatch'.format(pkg.name)))
    signer = VerifySignatureEntries(list(pkg.signature_entries), pkg.control_segment_bytes,
                                    trusted_signers)
    return VerificationResult(signer_key_id=signer.key_id)
# End VerifyPackage

# ================================ Building ================================

def _NormalizeScripts(scripts: dict) -> Dict[ScriptKind, str]:
    CheckType(scripts, 'scripts', dict)
    normalized = {}
    for kind, text in scripts.items():
        kind = kind if isinstance(kind, ScriptKind) else ScriptKind(kind)
        CheckType(text, 'scripts[{}]'.format(kind.value), str)
        normalized[kind] = text
    return normalized
# End _NormalizeScripts

# Builds a signed package. pkginfo.datahash is ignored and recomputed.
# If sign_scripts is set, every script entry carries a security.ima envelope from signer.
def BuildApk(pkginfo: PkgInfo, scripts: dict, data_entries: List[TarEntry],
             signer: SigningKeypair, *, sign_scripts: bool = False) -> bytes:
    CheckType(pkginfo, 'pkginfo', PkgInfo)
    CheckType2(data_entries, 'data_entries', (list, tuple), TarEntry)
    CheckType(signer, 'signer', SigningKeypair)
    CheckType(sign_scripts, 'sign_scripts', bool)
    scripts = _NormalizeScripts(scripts)
    data_segment = archive.CompressGzip(archive.WriteTar(list(data_entries), include_trailer=True))
    pkginfo = replace(pkginfo, datahash=helper.Sha256Hex(data_segment))
    control_entries = [archive.RegularFile(consts.kPkgInfoFilename, pkginfo.Serialize())]
    for kind in kScriptKindOrder:
        if (kind not in scripts):
            continue
        content = scripts[kind].encode('utf-8')
        script_entry = archive.RegularFile(kind.filename, content, mode=consts.kScriptFileMode)
        if (sign_scripts):
            script_entry = archive.AttachSignatureRecord(
                    script_entry, keystore.SignContent(signer, content))
        control_entries.append(script_entry)
    control_segment = archive.CompressGzip(archive.WriteTar(control_entries,
                                                            include_trailer=False))
    return BuildSignatureSegment(signer, control_segment) + control_segment + data_segment
# End BuildApk
