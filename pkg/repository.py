'''
Repositories: one per deployed security policy.

A repository owns a signing key, the last quorum-accepted upstream index, the sanitized
index it serves, the identity set learned from its packages and the predicted configuration
derived from it. All of that is kept in one sealed blob per repository, bound to a monotonic
counter, so a restart restores exactly the last sealed state and a substituted older blob
is detected.

Packages live in an untrusted on-disk cache:
    <cache_dir>/<repository_id>/original/<name>-<version>.apk
    <cache_dir>/<repository_id>/sanitized/<name>-<version>.apk
    <cache_dir>/<repository_id>/staging/<name>-<version>.apk   (until the refresh commits)
Every read from the cache is checked against the size and control segment SHA-1 held in
sealed state; a mismatching file is deleted and its package re-fetched on the next refresh.
A refresh sanitizes into the staging directory and moves files into place under the writer
lock, together with the new index, so readers never see an index and files that disagree.

Refresh pipeline: quorum index fetch -> upstream signature check -> diff -> download and
verify changed packages -> recompute identities -> sanitize -> sign the new index -> seal.
'''

from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import Enum
import json
import os
import os.path
import re
import threading
import time
from typing import Dict, List, Set, Tuple

import consts
import errors
from errors import (CacheCorrupted, NotYetInitialized, StaleSeal, TsrError, UnknownPackage,
                    UnknownRepository, UpstreamSignatureInvalid)
import file_manip
import helper
import keystore
from keystore import FileMonotonicCounter, PublicKey, SealedBlob, SigningKeypair
import logger
import metadata_index
from metadata_index import IndexEntry, MetadataIndex
import mirrors
import package
import policy as policy_module
from policy import SecurityPolicy
import sanitizer
from sanitizer import PackageIdentities, PredictedConfig, SanitizationContext, SanitizationOutcome
from type_checker import CheckType

kRepositoryIdPattern = re.compile(r'^[0-9a-f]{32}$')
kIndexDescriptionTemplate = 'TSR repository {}'

# ================================ Locking ================================

class ReadWriteLock:
    '''
    Many readers or one writer. Waiting writers block new readers, so a refresh is not
    starved by a steady stream of downloads.
    '''

    def __init__(self):
        self._condition = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer_active = False
        self._writers_waiting = 0

    @contextmanager
    def Reading(self):
        with self._condition:
            while (self._writer_active or (self._writers_waiting > 0)):
                self._condition.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._condition:
                self._readers -= 1
                if (self._readers == 0):
                    self._condition.notify_all()
    # End Reading

    @contextmanager
    def Writing(self):
        with self._condition:
            self._writers_waiting += 1
            while (self._writer_active or (self._readers > 0)):
                self._condition.wait()
            self._writers_waiting -= 1
            self._writer_active = True
        try:
            yield
        finally:
            with self._condition:
                self._writer_active = False
                self._condition.notify_all()
    # End Writing
# End class ReadWriteLock

# ================================= Types =================================

@dataclass(frozen=True)
class RepositorySettings:
    '''
    Service-wide settings every repository is created with.

    Member variables:
     - state_dir, cache_dir: str
     - sealing_key: bytes (32-byte master key; per-repository keys are derived from it)
     - signing_algorithm: str
     - request_timeout_ms, max_index_bytes, download_workers: int
     - refresh_ttl: int (seconds)
     - allow_insecure_mirrors: bool
     - transport: mirrors.Transport or None (None means RequestsTransport)
    '''
    state_dir: str
    cache_dir: str
    sealing_key: bytes
    signing_algorithm: str = consts.kAlgorithmRsa2048
    request_timeout_ms: int = consts.kDefaultRequestTimeoutMs
    max_index_bytes: int = consts.kDefaultMaxIndexBytes
    download_workers: int = consts.kDefaultDownloadWorkers
    refresh_ttl: int = consts.kDefaultRefreshTtlSeconds
    allow_insecure_mirrors: bool = False
    transport: mirrors.Transport = None

    def __repr__(self) -> str:
        return 'RepositorySettings(state_dir={!r}, cache_dir={!r})'.format(self.state_dir,
                                                                          self.cache_dir)
# End class RepositorySettings

class CacheKind(Enum):
    kOriginal = consts.kOriginalCacheDirectory
    kSanitized = consts.kSanitizedCacheDirectory
    kStaging = consts.kStagingCacheDirectory

@dataclass(frozen=True)
class CacheEntry:
    '''
    Member variables:
     - kind: CacheKind
     - name, version: str
     - path: str
     - expected_control_sha1: bytes (20)
     - expected_size: int
    '''
    kind: CacheKind
    name: str
    version: str
    path: str
    expected_control_sha1: bytes
    expected_size: int

    # Returns the cached bytes, or raises CacheCorrupted (deleting the file) on any mismatch
    def Load(self) -> bytes:
        data = helper.ReadBytes(self.path)
        if (data is None):
            errors.Error(CacheCorrupted('{}: cached {} package missing'.format(
                    self.path, self.kind.value)))
        try:
            checksum_ok = (package.ControlSegmentSha1(data) == self.expected_control_sha1)
        except TsrError:
            checksum_ok = False
        if ((len(data) != self.expected_size) or not checksum_ok):
            file_manip.RemoveFileIfExists(self.path)
            errors.Error(CacheCorrupted('{}: cached {} package does not match sealed state'
                                        .format(self.path, self.kind.value)))
        return data
    # End Load
# End class CacheEntry

@dataclass
class PackageRecord:
    '''
    What the repository remembers about one upstream package.

    Member variables:
     - name, version: str
     - upstream_checksum: bytes, upstream_size: int (from the upstream index)
     - outcome: SanitizationOutcome or None (None until sanitized)
     - reject_reason: str or None
     - classes: list of str (script class names)
     - warnings: list of str
     - identities: PackageIdentities
     - sanitized_checksum: bytes or None, sanitized_size: int
    '''
    name: str
    version: str
    upstream_checksum: bytes
    upstream_size: int
    identities: PackageIdentities
    outcome: SanitizationOutcome = None
    reject_reason: str = None
    classes: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    sanitized_checksum: bytes = None
    sanitized_size: int = 0

    @property
    def filename(self) -> str:
        return consts.kPackageFilenameTemplate.format(self.name, self.version)

    @property
    def creates_identities(self) -> bool:
        return (len(self.identities.users) + len(self.identities.groups)
                + len(self.identities.memberships)) > 0

    def IsServable(self) -> bool:
        return (self.outcome is not None) and (self.outcome != SanitizationOutcome.kRejected) \
                and (self.sanitized_checksum is not None)

    def ToJson(self) -> dict:
        return {'name' : self.name, 'version' : self.version,
                'upstream_checksum' : self.upstream_checksum.hex(),
                'upstream_size' : self.upstream_size,
                'identities' : self.identities.ToJson(),
                'outcome' : None if (self.outcome is None) else self.outcome.value,
                'reject_reason' : self.reject_reason, 'classes' : list(self.classes),
                'warnings' : list(self.warnings),
                'sanitized_checksum' : None if (self.sanitized_checksum is None)
                                       else self.sanitized_checksum.hex(),
                'sanitized_size' : self.sanitized_size}
    # End ToJson

    @staticmethod
    def FromJson(data: dict) -> 'PackageRecord':
        return PackageRecord(
                name=data['name'], version=data['version'],
                upstream_checksum=bytes.fromhex(data['upstream_checksum']),
                upstream_size=data['upstream_size'],
                identities=PackageIdentities.FromJson(data['identities']),
                outcome=None if (data['outcome'] is None) else SanitizationOutcome(data['outcome']),
                reject_reason=data['reject_reason'], classes=list(data['classes']),
                warnings=list(data['warnings']),
                sanitized_checksum=None if (data['sanitized_checksum'] is None)
                                   else bytes.fromhex(data['sanitized_checksum']),
                sanitized_size=data['sanitized_size'])
    # End FromJson
# End class PackageRecord

@dataclass
class RefreshReport:
    packages_sanitized: int = 0
    packages_rejected: int = 0
    packages_failed: Dict[str, str] = field(default_factory=dict)
    index_version_hash: str = None
    identity_set_changed: bool = False

    def ToJson(self) -> dict:
        return {'packages_sanitized' : self.packages_sanitized,
                'packages_rejected' : self.packages_rejected,
                'packages_failed' : dict(self.packages_failed),
                'index_version_hash' : self.index_version_hash,
                'identity_set_changed' : self.identity_set_changed}
# End class RefreshReport

# =============================== Repository ===============================

class Repository:
    '''
    Member variables:
     - repository_id: str (32 hex characters)
     - policy: SecurityPolicy
     - signing_key: SigningKeypair
     - settings: RepositorySettings
     - upstream_index_bytes: bytes or None
     - sanitized_index_bytes: bytes or None
     - sanitized_index: MetadataIndex or None
     - identity_set: (list of UserSpec, list of GroupSpec)
     - predicted_config: PredictedConfig or None
     - records: dict {filename : PackageRecord}
     - pending: set of filenames to re-fetch on the next refresh
     - last_refresh: float (epoch seconds, 0 if never refreshed)
     - counter: FileMonotonicCounter
     - lock: ReadWriteLock (readers serve, the refresh commit writes)
     - refresh_mutex: threading.Lock (serializes refreshes)
    '''

    def __init__(self, repository_id: str, policy: SecurityPolicy, signing_key: SigningKeypair,
                 settings: RepositorySettings):
        CheckType(repository_id, 'repository_id', str)
        CheckType(policy, 'policy', SecurityPolicy)
        CheckType(signing_key, 'signing_key', SigningKeypair)
        CheckType(settings, 'settings', RepositorySettings)
        self.repository_id = repository_id
        self.policy = policy
        self.signing_key = signing_key
        self.settings = settings
        self.upstream_index_bytes = None
        self.sanitized_index_bytes = None
        self.sanitized_index = None
        self.identity_set = ([], [])
        self.predicted_config = None
        self.records: Dict[str, PackageRecord] = {}
        self.pending = set()
        self.last_refresh = 0.0
        self.counter = FileMonotonicCounter(
                CounterPath(settings.state_dir, repository_id),
                keystore.DeriveKey(settings.sealing_key, consts.kCounterKeyLabel + repository_id))
        self.lock = ReadWriteLock()
        self.refresh_mutex = threading.Lock()
        self._pending_lock = threading.Lock()
    # End __init__

    @property
    def public_key(self) -> PublicKey:
        return self.signing_key.public_key

    @property
    def sealing_key(self) -> bytes:
        return keystore.DeriveKey(self.settings.sealing_key,
                                  consts.kSealingKeyLabel + self.repository_id)

    def CachePath(self, kind: CacheKind, filename: str) -> str:
        return os.path.join(self.settings.cache_dir, self.repository_id, kind.value, filename)

    # ------------------------------ sealed state ------------------------------

    def _StateJson(self) -> dict:
        users, groups = self.identity_set
        return {
            'format_version' : consts.kStateFormatVersion,
            'repository_id' : self.repository_id,
            'policy' : self.policy.ToJson(),
            'signing_key' : keystore.ExportPrivateKeyPem(self.signing_key),
            'upstream_index' : None if (self.upstream_index_bytes is None)
                               else helper.B64Encode(self.upstream_index_bytes),
            'sanitized_index' : None if (self.sanitized_index_bytes is None)
                                else helper.B64Encode(self.sanitized_index_bytes),
            'identity_users' : [user.ToJson() for user in users],
            'identity_groups' : [group.ToJson() for group in groups],
            'predicted_config' : None if (self.predicted_config is None)
                                 else self.predicted_config.ToJson(),
            'records' : {filename : record.ToJson() for filename, record in self.records.items()},
            'pending' : sorted(self.pending),
            'last_refresh' : self.last_refresh}
    # End _StateJson

    # Must be called with the writer lock held (or before the repository is published)
    def Seal(self):
        state = json.dumps(self._StateJson(), sort_keys=True).encode('utf-8')
        blob = keystore.Seal(state, self.counter, self.sealing_key)
        file_manip.WriteBytesAtomically(blob.Serialize(),
                                        SealedStatePath(self.settings.state_dir, self.repository_id))
        logger.Log('Info: sealed repository {} at counter {}'.format(self.repository_id,
                                                                    blob.counter_value))
    # End Seal

    @staticmethod
    def FromState(state: dict, settings: RepositorySettings) -> 'Repository':
        if (state.get('format_version') != consts.kStateFormatVersion):
            errors.Error(TsrError('unsupported state format {}'.format(state.get('format_version'))))
        policy = policy_module.PolicyFromJson(state['policy'], settings.allow_insecure_mirrors)
        repo = Repository(state['repository_id'], policy,
                          keystore.LoadPrivateKeyPem(state['signing_key']), settings)
        if (state['upstream_index'] is not None):
            repo.upstream_index_bytes = helper.B64Decode(state['upstream_index'])
        if (state['sanitized_index'] is not None):
            repo.sanitized_index_bytes = helper.B64Decode(state['sanitized_index'])
            repo.sanitized_index = metadata_index.ParseIndex(repo.sanitized_index_bytes,
                                                             [repo.public_key])
        repo.identity_set = ([sanitizer.UserSpec.FromJson(user) for user in state['identity_users']],
                             [sanitizer.GroupSpec.FromJson(group)
                              for group in state['identity_groups']])
        if (state['predicted_config'] is not None):
            repo.predicted_config = PredictedConfig.FromJson(state['predicted_config'])
        repo.records = {filename : PackageRecord.FromJson(record)
                        for filename, record in state['records'].items()}
        repo.pending = set(state['pending'])
        repo.last_refresh = state['last_refresh']
        return repo
    # End FromState

    # ------------------------------- serving -------------------------------

    def _CheckArchitecture(self, architecture: str):
        if (architecture != self.policy.architecture):
            errors.Error(UnknownPackage('repository {} serves {}, not {}'.format(
                    self.repository_id, self.policy.architecture, architecture)))
    # End _CheckArchitecture

    def GetIndex(self, architecture: str = None) -> bytes:
        with self.lock.Reading():
            if (architecture is not None):
                self._CheckArchitecture(architecture)
            if (self.sanitized_index_bytes is None):
                errors.Error(NotYetInitialized('repository {} has not been refreshed yet'.format(
                        self.repository_id)))
            return self.sanitized_index_bytes
    # End GetIndex

    def _MarkPending(self, filename: str):
        with self._pending_lock:
            self.pending.add(filename)

    def GetPackageByFilename(self, filename: str, architecture: str = None) -> bytes:
        CheckType(filename, 'filename', str)
        with self.lock.Reading():
            if (architecture is not None):
                self._CheckArchitecture(architecture)
            if (self.sanitized_index is None):
                errors.Error(NotYetInitialized('repository {} has not been refreshed yet'.format(
                        self.repository_id)))
            entry = self.sanitized_index.FindByFilename(filename)
            if (entry is None):
                errors.Error(UnknownPackage('{} is not in repository {}'.format(
                        filename, self.repository_id)))
            cache_entry = CacheEntry(CacheKind.kSanitized, entry.name, entry.version,
                                     self.CachePath(CacheKind.kSanitized, filename),
                                     entry.checksum, entry.package_size)
            try:
                return cache_entry.Load()
            except CacheCorrupted:
                self._MarkPending(filename)
                raise
    # End GetPackageByFilename

    def GetPackage(self, name: str, version: str) -> bytes:
        CheckType(name, 'name', str)
        CheckType(version, 'version', str)
        return self.GetPackageByFilename(consts.kPackageFilenameTemplate.format(name, version))

    def ExportPredictedConfig(self) -> dict:
        with self.lock.Reading():
            if (self.predicted_config is None):
                errors.Error(NotYetInitialized('repository {} has not been refreshed yet'.format(
                        self.repository_id)))
            return self.predicted_config.ToJson()
    # End ExportPredictedConfig

    def Status(self) -> dict:
        with self.lock.Reading():
            servable = [record for record in self.records.values() if record.IsServable()]
            rejected = [record for record in self.records.values()
                        if (record.outcome == SanitizationOutcome.kRejected)]
            return {
                'repository_id' : self.repository_id,
                'key_id' : self.public_key.key_id_hex,
                'algorithm' : self.public_key.algorithm,
                'architecture' : self.policy.architecture,
                'mirrors' : len(self.policy.mirrors),
                'f' : self.policy.f,
                'upstream_index_hash' : None if (self.upstream_index_bytes is None)
                                        else helper.Sha256Hex(self.upstream_index_bytes),
                'index_hash' : None if (self.sanitized_index_bytes is None)
                               else helper.Sha256Hex(self.sanitized_index_bytes),
                'packages_indexed' : len(servable),
                'packages_rejected' : len(rejected),
                'packages_pending' : len(self.pending),
                'rejected' : {record.filename : record.reject_reason for record in rejected},
                'warnings' : {record.filename : record.warnings for record in self.records.values()
                              if record.warnings},
                'last_refresh' : self.last_refresh}
    # End Status

    def IsRefreshDue(self) -> bool:
        return (self.sanitized_index_bytes is None) or \
                (time.time() - self.last_refresh >= self.settings.refresh_ttl)

    # ------------------------------- refresh -------------------------------

    def _QuorumConfig(self) -> mirrors.QuorumConfig:
        cfg = mirrors.MakeQuorumConfig(list(self.policy.mirrors), self.policy.architecture,
                                       per_request_timeout=self.settings.request_timeout_ms,
                                       max_index_bytes=self.settings.max_index_bytes,
                                       transport=self.settings.transport,
                                       allow_insecure_mirrors=self.settings.allow_insecure_mirrors)
        return mirrors.MeasureLatencies(cfg)
    # End _QuorumConfig

    def _ParseUpstreamIndex(self, data: bytes) -> MetadataIndex:
        try:
            return metadata_index.ParseIndex(data, list(self.policy.trusted_signer_keys))
        except TsrError as e:
            errors.Error(UpstreamSignatureInvalid('upstream index rejected: {}'.format(e)))
    # End _ParseUpstreamIndex

    # Verifies a downloaded package and records what its scripts do
    def _AdmitOriginal(self, entry: IndexEntry, data: bytes) -> PackageRecord:
        pkg = package.ParseApk(data)
        package.VerifyPackage(pkg, list(self.policy.trusted_signer_keys))
        if ((pkg.name, pkg.version) != (entry.name, entry.version)):
            errors.Error(UnknownPackage('{} contains {}-{}'.format(entry.filename, pkg.name,
                                                                  pkg.version)))
        file_manip.WriteBytesAtomically(data, self.CachePath(CacheKind.kOriginal, entry.filename))
        return PackageRecord(name=entry.name, version=entry.version,
                             upstream_checksum=entry.checksum, upstream_size=entry.package_size,
                             identities=sanitizer.ExtractPackageIdentities(pkg))
    # End _AdmitOriginal

    def _LoadOriginal(self, record: PackageRecord) -> bytes:
        return CacheEntry(CacheKind.kOriginal, record.name, record.version,
                          self.CachePath(CacheKind.kOriginal, record.filename),
                          record.upstream_checksum, record.upstream_size).Load()

    def _Sanitize(self, record: PackageRecord, data: bytes,
                  context: SanitizationContext) -> PackageRecord:
        sanitized, report = sanitizer.SanitizePackage(package.ParseApk(data), context)
        record.outcome = report.outcome
        record.reject_reason = report.reject_reason
        record.classes = sorted(script_class.value for script_class in report.classes_found)
        record.warnings = list(report.warnings)
        if (report.IsRejected()):
            record.sanitized_checksum = None
            record.sanitized_size = 0
            return record
        # Readers still serve the sealed cache; _Commit moves this into place
        sanitized_bytes = package.SerializeApk(sanitized)
        file_manip.WriteBytesAtomically(sanitized_bytes,
                                        self.CachePath(CacheKind.kStaging, record.filename))
        record.sanitized_checksum = helper.Sha1(sanitized.control_segment_bytes)
        record.sanitized_size = len(sanitized_bytes)
        return record
    # End _Sanitize

    def _Download(self, cfg, entries: List[IndexEntry], records: Dict[str, PackageRecord],
                  report: RefreshReport) -> Dict[str, bytes]:
        fetched, failed = mirrors.FetchPackages(cfg, entries, self.settings.download_workers)
        admitted = {}
        for filename, error in failed.items():
            report.packages_failed[filename] = str(error)
        entries_by_filename = {entry.filename : entry for entry in entries}
        for filename in sorted(fetched):
            try:
                records[filename] = self._AdmitOriginal(entries_by_filename[filename],
                                                        fetched[filename])
                admitted[filename] = fetched[filename]
            except TsrError as e:
                report.packages_failed[filename] = str(e)
                records.pop(filename, None)
        return admitted
    # End _Download

    def Refresh(self) -> RefreshReport:
        with self.refresh_mutex:
            return self._RefreshLocked()

    def _ClearStaging(self):
        staging_dir = os.path.join(self.settings.cache_dir, self.repository_id,
                                   CacheKind.kStaging.value)
        for filename in file_manip.ListFilesInDirectory(staging_dir):
            file_manip.RemoveFileIfExists(os.path.join(staging_dir, filename))
    # End _ClearStaging

    def _RefreshLocked(self) -> RefreshReport:
        self._ClearStaging()
        try:
            return self._RefreshStaged()
        finally:
            self._ClearStaging()
    # End _RefreshLocked

    # Swaps in the new state. The cache changes here too, so a reader sees either the old
    # index with the old files, or the new index with the new files.
    # Must be called with the writer lock held
    #  - staged: file names sanitized by this refresh, waiting in the staging directory
    #  - retried: the pending set this refresh started from
    #  - failed: file names this refresh could not fetch or sanitize
    #  - current: file names in the upstream index
    def _Commit(self, records: Dict[str, PackageRecord], staged: Set[str], retried: Set[str],
                failed: Set[str], current: Set[str]):
        old_servable = set(filename for filename, record in self.records.items()
                           if record.IsServable())
        new_servable = set(filename for filename, record in records.items()
                           if record.IsServable())
        for filename in sorted(staged):
            file_manip.MoveFile(self.CachePath(CacheKind.kStaging, filename),
                                self.CachePath(CacheKind.kSanitized, filename))
        for filename in sorted(old_servable - new_servable):
            file_manip.RemoveFileIfExists(self.CachePath(CacheKind.kSanitized, filename))
        self.records = records
        with self._pending_lock:
            # Files readers found corrupted while the refresh ran stay pending,
            # unless this refresh replaced them
            marked_meanwhile = self.pending - retried - staged
            self.pending = (marked_meanwhile | failed) & current
    # End _Commit

    def _RefreshStaged(self) -> RefreshReport:
        report = RefreshReport()
        cfg = self._QuorumConfig()
        quorum = mirrors.FetchIndexQuorum(cfg)
        with self._pending_lock:
            pending = set(self.pending)
        if ((quorum.index_bytes == self.upstream_index_bytes) and (len(pending) == 0)
                and (self.sanitized_index_bytes is not None)):
            logger.Log('Info: repository {}: upstream unchanged'.format(self.repository_id))
            self.last_refresh = time.time()
            report.index_version_hash = helper.Sha256Hex(self.sanitized_index_bytes)
            return report
        upstream = self._ParseUpstreamIndex(quorum.index_bytes)
        current = {entry.filename : entry for entry in upstream.entries
                   if (entry.arch in (self.policy.architecture, 'noarch'))
                   and self.policy.IsPackageAllowed(entry.name)}

        records = {filename : replace(record) for filename, record in self.records.items()
                   if (filename in current)
                   and (record.upstream_checksum == current[filename].checksum)}
        # Only refreshes read the original cache; sanitized files wait for _Commit
        for filename in set(self.records) - set(records):
            file_manip.RemoveFileIfExists(self.CachePath(CacheKind.kOriginal, filename))
        to_fetch = sorted((set(current) - set(records)) | (pending & set(current)))
        for filename in to_fetch:
            records.pop(filename, None)
        originals = self._Download(cfg, [current[filename] for filename in to_fetch], records,
                                   report)

        users, groups = sanitizer.MergeIdentities(
                [record.identities for record in records.values()],
                list(self.policy.initial_users), list(self.policy.initial_groups))
        predicted = sanitizer.PredictConfig(users, groups)
        report.identity_set_changed = (self.predicted_config is None) or \
                (predicted.ToJson() != self.predicted_config.ToJson())
        to_sanitize = set(originals)
        if (report.identity_set_changed):
            to_sanitize |= set(filename for filename, record in records.items()
                               if record.creates_identities and not record.identities.rejected)
        to_sanitize |= set(filename for filename, record in records.items()
                           if (record.outcome is None))

        context = SanitizationContext(predicted, self.signing_key)
        staged = set()
        for filename in sorted(to_sanitize):
            record = records[filename]
            try:
                data = originals[filename] if (filename in originals) \
                        else self._LoadOriginal(record)
                self._Sanitize(record, data, context)
            except TsrError as e:
                report.packages_failed[filename] = str(e)
                del records[filename]
                continue
            if (record.outcome == SanitizationOutcome.kRejected):
                report.packages_rejected += 1
            else:
                report.packages_sanitized += 1
                staged.add(filename)

        index_entries = [IndexEntry(checksum=record.sanitized_checksum, name=record.name,
                                    version=record.version, arch=current[filename].arch,
                                    package_size=record.sanitized_size,
                                    installed_size=current[filename].installed_size,
                                    depends=current[filename].depends,
                                    extra_lines=current[filename].extra_lines)
                         for filename, record in records.items() if record.IsServable()]
        index_bytes = metadata_index.GenerateIndexFromEntries(
                metadata_index.SortEntries(index_entries), self.signing_key,
                kIndexDescriptionTemplate.format(self.repository_id))
        sanitized_index = metadata_index.ParseIndex(index_bytes, [self.public_key])

        with self.lock.Writing():
            self.upstream_index_bytes = quorum.index_bytes
            self.sanitized_index_bytes = index_bytes
            self.sanitized_index = sanitized_index
            self.identity_set = (users, groups)
            self.predicted_config = predicted
            self._Commit(records, staged, pending, set(report.packages_failed), set(current))
            self.last_refresh = time.time()
            self.Seal()
        report.index_version_hash = helper.Sha256Hex(index_bytes)
        logger.Log('Info: repository {} refreshed: {} sanitized, {} rejected, {} failed'.format(
                self.repository_id, report.packages_sanitized, report.packages_rejected,
                len(report.packages_failed)))
        return report
    # End _RefreshStaged

    # Keeps the policy and signing key, discards everything learned from upstream
    def Reinitialize(self):
        with self.refresh_mutex, self.lock.Writing():
            self._ClearStaging()
            for filename in self.records:
                file_manip.RemoveFileIfExists(self.CachePath(CacheKind.kOriginal, filename))
                file_manip.RemoveFileIfExists(self.CachePath(CacheKind.kSanitized, filename))
            self.upstream_index_bytes = None
            self.sanitized_index_bytes = None
            self.sanitized_index = None
            self.identity_set = ([], [])
            self.predicted_config = None
            self.records = {}
            self.pending = set()
            self.last_refresh = 0.0
            self.Seal()
    # End Reinitialize
# End class Repository

# =============================== Persistence ===============================

def SealedStatePath(state_dir: str, repository_id: str) -> str:
    return os.path.join(state_dir, repository_id + consts.kSealedStateSuffix)

def CounterPath(state_dir: str, repository_id: str) -> str:
    return os.path.join(state_dir, repository_id + consts.kCounterSuffix)

def IsRepositoryId(repository_id: str) -> bool:
    return isinstance(repository_id, str) and (kRepositoryIdPattern.match(repository_id) is not None)

def LoadRepository(repository_id: str, settings: RepositorySettings,
                   check_freshness: bool = True) -> Repository:
    data = helper.ReadBytes(SealedStatePath(settings.state_dir, repository_id))
    if (data is None):
        errors.Error(TsrError('repository {}: sealed state missing'.format(repository_id)))
    counter = FileMonotonicCounter(
            CounterPath(settings.state_dir, repository_id),
            keystore.DeriveKey(settings.sealing_key, consts.kCounterKeyLabel + repository_id))
    sealing_key = keystore.DeriveKey(settings.sealing_key,
                                     consts.kSealingKeyLabel + repository_id)
    state_bytes = keystore.Unseal(SealedBlob.Parse(data), counter, sealing_key,
                                  check_freshness=check_freshness)
    state = json.loads(state_bytes.decode('utf-8'))
    if (state.get('repository_id') != repository_id):
        errors.Error(TsrError('sealed state of {} names repository {}'.format(
                repository_id, state.get('repository_id'))))
    return Repository.FromState(state, settings)
# End LoadRepository

# Unseals every repository under state_dir. Failures are collected per repository, not raised.
def Restore(settings: RepositorySettings) -> Tuple[Dict[str, Repository], Dict[str, Exception]]:
    CheckType(settings, 'settings', RepositorySettings)
    repositories, failures = {}, {}
    sealed_ids = set(filename[: -len(consts.kSealedStateSuffix)] for filename in
                     file_manip.ListFilesInDirectory(settings.state_dir, consts.kSealedStateSuffix))
    counter_ids = set(filename[: -len(consts.kCounterSuffix)] for filename in
                      file_manip.ListFilesInDirectory(settings.state_dir, consts.kCounterSuffix))
    for repository_id in sorted(sealed_ids | counter_ids):
        if (not IsRepositoryId(repository_id)):
            continue
        try:
            repositories[repository_id] = LoadRepository(repository_id, settings)
        except (TsrError, ValueError, KeyError) as e:
            logger.Log('Error: cannot restore repository {}: {}: {}'.format(
                    repository_id, type(e).__name__, e))
            failures[repository_id] = e
    logger.Log('Info: restored {} repositories, {} failures'.format(len(repositories),
                                                                   len(failures)))
    return repositories, failures
# End Restore

# ================================ Registry ================================

class RepositoryRegistry:
    '''
    All repositories of one service instance.

    Member variables:
     - settings: RepositorySettings
     - repositories: dict {repository_id : Repository}
     - failures: dict {repository_id : Exception} (repositories that could not be restored)
    '''

    def __init__(self, settings: RepositorySettings):
        CheckType(settings, 'settings', RepositorySettings)
        self.settings = settings
        self.repositories: Dict[str, Repository] = {}
        self.failures: Dict[str, Exception] = {}
        self._lock = threading.Lock()

    def Restore(self) -> Dict[str, Exception]:
        repositories, failures = Restore(self.settings)
        with self._lock:
            self.repositories = repositories
            self.failures = failures
        return dict(failures)
    # End Restore

    def DeployPolicy(self, policy: SecurityPolicy or str or bytes) -> Tuple[str, PublicKey]:
        if (not isinstance(policy, SecurityPolicy)):
            policy = policy_module.LoadPolicy(policy, self.settings.allow_insecure_mirrors)
        repository_id = os.urandom(consts.kRepositoryIdBytes).hex()
        signing_key = keystore.GenerateKeypair(self.settings.signing_algorithm)
        repo = Repository(repository_id, policy, signing_key, self.settings)
        repo.Seal()
        with self._lock:
            self.repositories[repository_id] = repo
        logger.Log('Info: deployed repository {} ({} mirrors, f={}, key {})'.format(
                repository_id, len(policy.mirrors), policy.f, signing_key.public_key.key_id_hex))
        return repository_id, signing_key.public_key
    # End DeployPolicy

    def Get(self, repository_id: str) -> Repository:
        with self._lock:
            if (repository_id in self.repositories):
                return self.repositories[repository_id]
            failure = self.failures.get(repository_id)
        if (isinstance(failure, StaleSeal)):
            errors.Error(StaleSeal('repository {} needs operator re-initialization'.format(
                    repository_id)))
        errors.Error(UnknownRepository('unknown repository "{}"'.format(repository_id)))
    # End Get

    def ListRepositoryIds(self) -> List[str]:
        with self._lock:
            return sorted(self.repositories)

    def Refresh(self, repository_id: str) -> RefreshReport:
        return self.Get(repository_id).Refresh()

    # Refreshes on demand once the TTL has elapsed; returns None if no refresh was due
    def RefreshIfDue(self, repository_id: str) -> RefreshReport or None:
        repo = self.Get(repository_id)
        if (not repo.IsRefreshDue()):
            return None
        return repo.Refresh()
    # End RefreshIfDue

    def ForceReinitialize(self, repository_id: str) -> Repository:
        if (not IsRepositoryId(repository_id)):
            errors.Error(UnknownRepository('unknown repository "{}"'.format(repository_id)))
        repo = LoadRepository(repository_id, self.settings, check_freshness=False)
        repo.Reinitialize()
        with self._lock:
            self.repositories[repository_id] = repo
            self.failures.pop(repository_id, None)
        logger.Log('Warning: repository {} was re-initialized by the operator'.format(
                repository_id))
        return repo
    # End ForceReinitialize

    # Reseals every repository; called on shutdown
    def Flush(self):
        with self._lock:
            repositories = list(self.repositories.values())
        for repo in repositories:
            with repo.refresh_mutex, repo.lock.Writing():
                repo.Seal()
    # End Flush
# End class RepositoryRegistry
