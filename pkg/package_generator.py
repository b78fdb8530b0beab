'''
Fixture generation: upstream-style packages from YAML spec files, signed mirror trees,
fixture signer keys, and a synthetic corpus with the script-class mix of a real distribution.

Package spec file format (YAML):

    name: redis
    version: 7.2.4-r0
    arch: x86_64                    # default noarch
    depends: [musl]
    signing_key: keys/upstream.pem  # private PEM, relative to the spec file
    files:
      - path: usr/bin/redis-server
        content: "binary placeholder"    # or content_file: <path>, or filler_size: <bytes>
        mode: 0755
      - path: var/lib/redis
        type: directory
      - path: usr/bin/redis-cli
        type: symlink
        target: redis-server
    scripts:
      pre-install: |
        #!/bin/sh
        addgroup -S redis
'''

from dataclasses import dataclass, field
import os
import os.path
from typing import Dict, List, Tuple

import yaml

import archive
from archive import TarEntry
import consts
import errors
from errors import InvalidSpec, MalformedPackage
import file_manip
import helper
import keystore
from keystore import SigningKeypair
import logger
import metadata_index
import package
from package import PkgInfo, ScriptKind
from type_checker import CheckType, CheckType2

kSpecKeys = {'name', 'version', 'arch', 'depends', 'signing_key', 'files', 'scripts', 'extra',
             'size'}
kFileKeys = {'path', 'type', 'content', 'content_file', 'filler_size', 'mode', 'uid', 'gid',
             'target'}
kFileTypes = ('file', 'directory', 'symlink')
kDefaultFileMode = 0o644
kPrivateKeySuffix = '.pem'
kPublicKeySuffix = '.pub.pem'

@dataclass(frozen=True)
class PackageSpec:
    '''
    Member variables:
     - pkginfo: PkgInfo (datahash empty; BuildApk fills it in)
     - scripts: dict {ScriptKind : str}
     - data_entries: list of TarEntry
     - signing_key_path: str or None
    '''
    pkginfo: PkgInfo
    scripts: Dict[ScriptKind, str] = field(default_factory=dict)
    data_entries: List[TarEntry] = field(default_factory=list)
    signing_key_path: str = None
# End class PackageSpec

# ============================== Spec Files ==============================

def _ParseMode(value, where: str) -> int:
    if (isinstance(value, int) and not isinstance(value, bool)):
        return value
    if (isinstance(value, str)):
        try:
            return int(value, 8)
        except ValueError:
            pass
    errors.Error(InvalidSpec('{}: mode must be an octal number, got {!r}'.format(where, value)))
# End _ParseMode

def FillerContent(size: int, seed: str) -> bytes:
    CheckType(size, 'size', int)
    block = helper.Sha256Hex(seed.encode('utf-8')).encode('ascii')
    return (block * (size // len(block) + 1))[: size]
# End FillerContent

def _ParseFileEntry(raw_file, index: int, base_dir: str) -> TarEntry:
    where = 'files[{}]'.format(index)
    if (not isinstance(raw_file, dict) or not isinstance(raw_file.get('path'), str)):
        errors.Error(InvalidSpec('{}: expected a mapping with a path'.format(where)))
    unknown_keys = set(raw_file) - kFileKeys
    if (unknown_keys):
        errors.Error(InvalidSpec('{}: unknown keys {}'.format(where, sorted(unknown_keys))))
    path = raw_file['path'].lstrip('/')
    file_type = raw_file.get('type', 'file')
    if (file_type not in kFileTypes):
        errors.Error(InvalidSpec('{}: type must be one of {}'.format(where, kFileTypes)))
    uid, gid = raw_file.get('uid', 0), raw_file.get('gid', 0)
    try:
        if (file_type == 'directory'):
            return archive.Directory(path, mode=_ParseMode(raw_file.get('mode', 0o755), where),
                                     uid=uid, gid=gid)
        if (file_type == 'symlink'):
            if (not isinstance(raw_file.get('target'), str)):
                errors.Error(InvalidSpec('{}: symlink needs a target'.format(where)))
            return archive.Symlink(path, raw_file['target'])
        content_sources = [key for key in ('content', 'content_file', 'filler_size')
                           if key in raw_file]
        if (len(content_sources) > 1):
            errors.Error(InvalidSpec('{}: give only one of {}'.format(where, content_sources)))
        if ('content_file' in raw_file):
            content = helper.ReadBytes(os.path.join(base_dir, raw_file['content_file']))
            if (content is None):
                errors.Error(InvalidSpec('{}: {} not found'.format(where, raw_file['content_file'])))
        elif ('filler_size' in raw_file):
            content = FillerContent(int(raw_file['filler_size']), path)
        else:
            content = str(raw_file.get('content', '')).encode('utf-8')
        return archive.RegularFile(path, content,
                                   mode=_ParseMode(raw_file.get('mode', kDefaultFileMode), where),
                                   uid=uid, gid=gid)
    except (MalformedPackage, ValueError, TypeError) as e:
        errors.Error(InvalidSpec('{}: {}'.format(where, e)))
# End _ParseFileEntry

def _ParseScripts(raw_scripts) -> Dict[ScriptKind, str]:
    if (raw_scripts is None):
        return {}
    if (not isinstance(raw_scripts, dict)):
        errors.Error(InvalidSpec('scripts: expected a mapping of script kind to text'))
    scripts = {}
    for kind_name, text in raw_scripts.items():
        try:
            kind = ScriptKind(kind_name)
        except ValueError:
            errors.Error(InvalidSpec('scripts: unknown script kind "{}"'.format(kind_name)))
        if (not isinstance(text, str)):
            errors.Error(InvalidSpec('scripts.{}: expected text'.format(kind_name)))
        scripts[kind] = text
    return scripts
# End _ParseScripts

# base_dir resolves content_file and signing_key paths
def ParsePackageSpec(text: str or bytes, base_dir: str = '.') -> PackageSpec:
    CheckType(text, 'text', (str, bytes))
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        errors.Error(InvalidSpec('malformed spec: {}'.format(e)))
    if (not isinstance(document, dict)):
        errors.Error(InvalidSpec('spec must be a mapping'))
    unknown_keys = set(document) - kSpecKeys
    if (unknown_keys):
        errors.Error(InvalidSpec('unknown keys {}'.format(sorted(unknown_keys))))
    for key in ('name', 'version'):
        if (not isinstance(document.get(key), (str, int, float))):
            errors.Error(InvalidSpec('{}: missing'.format(key)))
    raw_files = document.get('files') or []
    if (not isinstance(raw_files, list)):
        errors.Error(InvalidSpec('files: expected a list'))
    data_entries = [_ParseFileEntry(raw_file, index, base_dir)
                    for index, raw_file in enumerate(raw_files)]
    depends = document.get('depends') or []
    extra = document.get('extra') or {}
    if (not isinstance(depends, list) or not isinstance(extra, dict)):
        errors.Error(InvalidSpec('depends must be a list and extra a mapping'))
    installed_size = document.get('size', sum(entry.size for entry in data_entries))
    try:
        pkginfo = PkgInfo(pkgname=str(document['name']), pkgver=str(document['version']),
                          arch=str(document.get('arch', 'noarch')), size=int(installed_size),
                          depends=tuple(str(depend) for depend in depends),
                          extra_fields=tuple((str(key), str(value))
                                             for key, value in extra.items()))
    except (MalformedPackage, ValueError, TypeError) as e:
        errors.Error(InvalidSpec(str(e)))
    signing_key_path = document.get('signing_key')
    if (signing_key_path is not None):
        signing_key_path = os.path.join(base_dir, str(signing_key_path))
    return PackageSpec(pkginfo=pkginfo, scripts=_ParseScripts(document.get('scripts')),
                       data_entries=data_entries, signing_key_path=signing_key_path)
# End ParsePackageSpec

def LoadPackageSpec(spec_path: str) -> PackageSpec:
    CheckType(spec_path, 'spec_path', str)
    text = helper.ReadBytes(spec_path)
    if (text is None):
        errors.Error(InvalidSpec('spec file {} does not exist'.format(spec_path)))
    return ParsePackageSpec(text, os.path.dirname(os.path.abspath(spec_path)))
# End LoadPackageSpec

def BuildPackage(spec: PackageSpec, signer: SigningKeypair = None) -> bytes:
    CheckType(spec, 'spec', PackageSpec)
    if (signer is None):
        if (spec.signing_key_path is None):
            errors.Error(InvalidSpec('{}: no signing key given'.format(spec.pkginfo.pkgname)))
        signer = LoadKeypair(spec.signing_key_path)
    return package.BuildApk(spec.pkginfo, spec.scripts, spec.data_entries, signer)
# End BuildPackage

# ============================== Fixture Keys ==============================

def LoadKeypair(private_key_path: str) -> SigningKeypair:
    pem = helper.ReadBytes(private_key_path)
    if (pem is None):
        errors.Error(InvalidSpec('signing key {} does not exist'.format(private_key_path)))
    return keystore.LoadPrivateKeyPem(pem)
# End LoadKeypair

# Writes <prefix>.pem (private) and <prefix>.pub.pem. Returns the keypair.
def WriteKeypair(path_prefix: str, algorithm: str = consts.kAlgorithmRsa2048) -> SigningKeypair:
    CheckType(path_prefix, 'path_prefix', str)
    signer = keystore.GenerateKeypair(algorithm)
    file_manip.WriteBytesAtomically(keystore.ExportPrivateKeyPem(signer).encode('ascii'),
                                    path_prefix + kPrivateKeySuffix)
    file_manip.WriteBytesAtomically(signer.public_key.ToPem().encode('ascii'),
                                    path_prefix + kPublicKeySuffix)
    logger.Log('Info: wrote fixture signer {} ({})'.format(path_prefix,
                                                          signer.public_key.key_id_hex))
    return signer
# End WriteKeypair

# ============================== Mirror Trees ==============================

# Returns {relative path : bytes}: "<arch>/APKINDEX.tar.gz" and "<arch>/<name>-<version>.apk"
def BuildMirrorContents(apks: List[bytes], signer: SigningKeypair, architecture: str,
                        description: str = 'fixture mirror') -> Dict[str, bytes]:
    CheckType2(apks, 'apks', (list, tuple), bytes)
    CheckType(signer, 'signer', SigningKeypair)
    CheckType(architecture, 'architecture', str)
    contents = {}
    parsed = []
    for apk_bytes in apks:
        pkg = package.ParseApk(apk_bytes)
        parsed.append((pkg, apk_bytes))
        contents['{}/{}'.format(architecture, pkg.filename)] = apk_bytes
    entries = metadata_index.SortEntries([metadata_index.IndexEntryForPackage(pkg, apk_bytes)
                                          for pkg, apk_bytes in parsed])
    contents['{}/{}'.format(architecture, 'APKINDEX.tar.gz')] = \
            metadata_index.GenerateIndexFromEntries(entries, signer, description)
    return contents
# End BuildMirrorContents

def WriteMirrorTree(contents: Dict[str, bytes], out_dir: str):
    CheckType(contents, 'contents', dict)
    CheckType(out_dir, 'out_dir', str)
    for relative_path, data in sorted(contents.items()):
        file_manip.WriteBytesAtomically(data, os.path.join(out_dir, relative_path))
    logger.Log('Info: wrote {} files to mirror tree {}'.format(len(contents), out_dir))
# End WriteMirrorTree

# ================================ Corpus ================================

# Per-class package counts of the reference distribution: scriptless packages in its two
# repositories, then packages whose scripts contain each class. Some scripted packages mix
# classes, so the class counts add up to more than the number of scripted packages.
kReferenceCorpusCounts = {
    'scriptless' : 5531 + 5772,
    'scripted' : 24 + 29 + 110 + 115,
    'FilesystemChange' : 45,
    'EmptyScript' : 22,
    'TextProcessing' : 36,
    'ConfigurationChange' : 18,
    'EmptyFileCreation' : 1,
    'UserGroupCreation' : 201,
    'ShellActivation' : 10}

def _UserGroupScript(name: str, with_directory: bool) -> str:
    lines = ['#!/bin/sh',
             'addgroup -S {}'.format(name),
             'adduser -S -D -H -h /var/lib/{0} -s /sbin/nologin -G {0} {0}'.format(name)]
    if (with_directory):
        lines.append('mkdir -p /var/lib/{}'.format(name))
    return '\n'.join(lines) + '\n'
# End _UserGroupScript

def _FilesystemScript(name: str) -> str:
    return '#!/bin/sh\nmkdir -p /var/cache/{0}\nln -sf /usr/share/{0} /var/cache/{0}/share\n' \
           .format(name)

def _EmptyScript(name: str) -> str:
    return '#!/bin/sh\necho "{} installed"\nexit 0\n'.format(name)

def _TextProcessingScript(name: str) -> str:
    return '#!/bin/sh\ngrep -q {0} /usr/share/{0}/README\n'.format(name)

def _ConfigurationChangeScript(name: str) -> str:
    return ('#!/bin/sh\ngrep -q "^{0}" /etc/services || echo "{0} 7000/tcp" >> /etc/services\n'
            .format(name))

def _ShellActivationScript(name: str) -> str:
    return '#!/bin/sh\ngrep -q /bin/{0} /etc/shells || add-shell /bin/{0}\n'.format(name)

def _EmptyFileScript(name: str) -> str:
    return '#!/bin/sh\ntouch /usr/share/{}/.installed\n'.format(name)

# Returns [(name, {ScriptKind : text})] whose per-class package counts equal counts exactly.
# Class counts exceed the number of scripted packages because some scripts mix classes:
#  - every rejected package also probes with grep (TextProcessing)
#  - the remaining overlap goes to user/group packages that also create a directory
def CorpusScriptPlan(counts: dict = None) -> List[Tuple[str, Dict[ScriptKind, str]]]:
    counts = dict(kReferenceCorpusCounts if (counts is None) else counts)
    rejected = counts['ConfigurationChange'] + counts['ShellActivation']
    safe_memberships = (counts['FilesystemChange'] + counts['EmptyScript']
                        + counts['TextProcessing'] + counts['EmptyFileCreation']
                        + counts['UserGroupCreation'] - rejected)
    user_group_with_directory = safe_memberships - (counts['scripted'] - rejected)
    filesystem_only = counts['FilesystemChange'] - user_group_with_directory
    text_only = counts['TextProcessing'] - rejected
    if ((min(user_group_with_directory, filesystem_only, text_only) < 0)
            or (user_group_with_directory > counts['UserGroupCreation'])):
        errors.Error(InvalidSpec('corpus counts cannot be realized: {}'.format(counts)))
    plan = [('plain{}'.format(index), {}) for index in range(counts['scriptless'])]
    for index in range(counts['UserGroupCreation']):
        name = 'svc{}'.format(index)
        plan.append((name, {ScriptKind.kPreInstall :
                            _UserGroupScript(name, index < user_group_with_directory)}))
    for prefix, number, script_builder in (
            ('fs', filesystem_only, _FilesystemScript),
            ('empty', counts['EmptyScript'], _EmptyScript),
            ('text', text_only, _TextProcessingScript),
            ('conf', counts['ConfigurationChange'], _ConfigurationChangeScript),
            ('shell', counts['ShellActivation'], _ShellActivationScript),
            ('touch', counts['EmptyFileCreation'], _EmptyFileScript)):
        for index in range(number):
            name = '{}{}'.format(prefix, index)
            plan.append((name, {ScriptKind.kPostInstall : script_builder(name)}))
    return plan
# End CorpusScriptPlan

def CorpusPackageSpec(name: str, scripts: Dict[ScriptKind, str],
                      architecture: str = 'x86_64') -> PackageSpec:
    content = 'fixture package {}\n'.format(name).encode('utf-8')
    return PackageSpec(pkginfo=PkgInfo(pkgname=name, pkgver='1.0-r0', arch=architecture,
                                       size=len(content)),
                       scripts=scripts,
                       data_entries=[archive.RegularFile('usr/share/{}/README'.format(name),
                                                         content)])
# End CorpusPackageSpec

def GenerateCorpus(signer: SigningKeypair, architecture: str = 'x86_64',
                   counts: dict = None) -> List[bytes]:
    CheckType(signer, 'signer', SigningKeypair)
    plan = CorpusScriptPlan(counts)
    apks = [BuildPackage(CorpusPackageSpec(name, scripts, architecture), signer)
            for name, scripts in plan]
    logger.Log('Info: generated corpus of {} packages'.format(len(apks)))
    return apks
# End GenerateCorpus
