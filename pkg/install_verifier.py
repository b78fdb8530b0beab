'''
Simulated installation of sanitized packages into an InMemoryFilesystem, followed by the
checks an IMA-appraising target would make: every installed regular file and script must
carry a security.ima envelope that verifies under the repository key, and the configuration
files written by sanitized scripts must match the repository's predicted configuration.
'''

from dataclasses import dataclass, field
from enum import Enum
import posixpath
from typing import List

import archive
from archive import TarType
import consts
from errors import MalformedEnvelope, SimulationUnsupported
import keystore
from keystore import PublicKey, SignatureEnvelope
import logger
from package import ApkPackage, ScriptKind
from sanitizer import PredictedConfig
import script_simulator
from script_simulator import FsError, InMemoryFilesystem
from type_checker import CheckType, CheckType2

class Verdict(Enum):
    kTrusted = 'Trusted'
    kIntegrityViolation = 'IntegrityViolation'

@dataclass
class InstallVerdict:
    '''
    Member variables:
     - packages: list of (name, version), in installation order
     - files_checked: int
     - verified_paths: list of str
     - signature_failures: list of str (paths whose signature is missing or does not verify,
       or that could not be installed)
     - script_failures: list of str
     - config_match: bool (every script ran to completion, and the configuration files equal
       the prediction; all of them once a sanitized preamble was installed)
    '''
    packages: list = field(default_factory=list)
    files_checked: int = 0
    verified_paths: List[str] = field(default_factory=list)
    signature_failures: List[str] = field(default_factory=list)
    script_failures: List[str] = field(default_factory=list)
    config_match: bool = True

    @property
    def verdict(self) -> Verdict:
        if ((len(self.signature_failures) == 0) and self.config_match):
            return Verdict.kTrusted
        return Verdict.kIntegrityViolation

    def ToJson(self) -> dict:
        return {'packages' : ['{}-{}'.format(name, version) for name, version in self.packages],
                'files_checked' : self.files_checked,
                'signature_failures' : list(self.signature_failures),
                'script_failures' : list(self.script_failures),
                'config_match' : self.config_match, 'verdict' : self.verdict.value}
# End class InstallVerdict

def ScriptPath(pkg: ApkPackage, kind: ScriptKind) -> str:
    return posixpath.join(consts.kScriptsDirectory,
                          '{}-{}{}'.format(pkg.name, pkg.version, kind.filename))

def _ExtractEntry(fs: InMemoryFilesystem, entry: archive.TarEntry):
    path = '/' + entry.path.lstrip('/')
    if (entry.typeflag == TarType.kDirectory):
        fs.MakeDirectory(path, parents=True, mode=entry.mode)
        node = fs.Get(path)
    elif (entry.typeflag == TarType.kSymlink):
        fs.MakeDirectory(posixpath.dirname(path), parents=True)
        fs.Symlink(entry.link_target, path, force=True)
        node = fs.Get(path)
    elif (entry.IsRegular()):
        if (fs.Exists(path)):
            fs.Remove(path)
        fs.WriteFile(path, entry.content, mode=entry.mode, create_parents=True)
        node = fs.Get(path)
    else:
        # Hard links are materialized as copies of their target, which must be installed already
        fs.Copy('/' + entry.link_target.lstrip('/'), path)
        node = fs.Get(path)
    node.uid = entry.uid
    node.gid = entry.gid
    for record in entry.pax_records:
        if (record.key.startswith(consts.kXattrPaxPrefix)):
            node.xattrs[record.key[len(consts.kXattrPaxPrefix) :]] = record.value
# End _ExtractEntry

def _RunScript(fs: InMemoryFilesystem, pkg: ApkPackage, kind: ScriptKind, report: InstallVerdict):
    if (kind not in pkg.scripts):
        return
    try:
        result = script_simulator.RunScript(pkg.scripts[kind], fs)
    except SimulationUnsupported as e:
        report.script_failures.append('{}-{} {}: {}'.format(pkg.name, pkg.version, kind.value, e))
        return
    if (result.exit_status != 0):
        report.script_failures.append('{}-{} {} exited with status {}: {}'.format(
                pkg.name, pkg.version, kind.value, result.exit_status, result.stderr))
# End _RunScript

# pre-install, data extraction, post-install; scripts are stored with their xattrs
def InstallPackage(fs: InMemoryFilesystem, pkg: ApkPackage, report: InstallVerdict):
    CheckType(fs, 'fs', InMemoryFilesystem)
    CheckType(pkg, 'pkg', ApkPackage)
    _RunScript(fs, pkg, ScriptKind.kPreInstall, report)
    for entry in pkg.data_entries:
        try:
            _ExtractEntry(fs, entry)
        except FsError as e:
            logger.Log('Warning: {}-{}: cannot install {}: {}'.format(pkg.name, pkg.version,
                                                                     entry.path, e))
            report.signature_failures.append('/' + entry.path.lstrip('/'))
    for kind in pkg.scripts:
        script_entry = pkg.GetScriptEntry(kind)
        _ExtractEntry(fs, archive.TarEntry(ScriptPath(pkg, kind).lstrip('/'),
                                           mode=script_entry.mode, content=script_entry.content,
                                           pax_records=script_entry.pax_records))
    _RunScript(fs, pkg, ScriptKind.kPostInstall, report)
    report.packages.append((pkg.name, pkg.version))
# End InstallPackage

# A sanitized preamble follows the shebang line, if any
def CarriesPreamble(pkg: ApkPackage) -> bool:
    CheckType(pkg, 'pkg', ApkPackage)
    for text in pkg.scripts.values():
        lines = text.splitlines()
        if ((len(lines) > 0) and lines[0].startswith('#!')):
            lines = lines[1 :]
        if (lines[: 1] == [consts.kSanitizedMarker]):
            return True
    return False
# End CarriesPreamble

def _VerifyPath(fs: InMemoryFilesystem, path: str, trusted_keys: List[PublicKey],
                report: InstallVerdict):
    report.files_checked += 1
    raw_envelope = fs.GetXattr(path, consts.kImaXattrName)
    if (raw_envelope is None):
        logger.Log('Warning: {}: no {} signature'.format(path, consts.kImaXattrName))
        report.signature_failures.append(path)
        return
    try:
        envelope = SignatureEnvelope.Parse(raw_envelope)
    except MalformedEnvelope as e:
        logger.Log('Warning: {}: {}'.format(path, e))
        report.signature_failures.append(path)
        return
    if (not keystore.VerifyEnvelope(envelope, fs.ReadFile(path), trusted_keys)):
        logger.Log('Warning: {}: signature does not verify'.format(path))
        report.signature_failures.append(path)
        return
    report.verified_paths.append(path)
# End _VerifyPath

# Installs packages in the given order into fs (a fresh filesystem if None), then appraises
# every regular file that was installed or written
def VerifyInstall(packages: List[ApkPackage], trusted_keys: List[PublicKey],
                  predicted: PredictedConfig = None, fs: InMemoryFilesystem = None) -> InstallVerdict:
    CheckType2(packages, 'packages', (list, tuple), ApkPackage)
    CheckType2(trusted_keys, 'trusted_keys', (list, tuple), PublicKey)
    if (predicted is not None):
        CheckType(predicted, 'predicted', PredictedConfig)
    fs = InMemoryFilesystem() if (fs is None) else fs
    report = InstallVerdict()
    for pkg in packages:
        InstallPackage(fs, pkg, report)
    for path, node in sorted(fs.nodes.items()):
        if (node.kind == script_simulator.kFile):
            _VerifyPath(fs, path, trusted_keys, report)
    # A failed script leaves the produced configuration unknown
    report.config_match = (len(report.script_failures) == 0)
    if (predicted is not None):
        produced = fs.ConfigSnapshot()
        if (not any(CarriesPreamble(pkg) for pkg in packages)):
            # Nothing was supposed to write them; only check what was written
            produced = {path : content for path, content in produced.items()
                        if content is not None}
        report.config_match = report.config_match and all(
                content == predicted.files[path].encode('utf-8')
                for path, content in produced.items())
    logger.Log('Info: verified install of {} packages: {} files verified, {} signature failures, '
               '{} script failures'.format(len(report.packages), len(report.verified_paths),
                                            len(report.signature_failures),
                                            len(report.script_failures)))
    return report
# End VerifyInstall
