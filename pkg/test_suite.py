'''
End-to-end properties of the whole service: classifier coverage of the reference corpus,
quorum safety and latency shape, order independence of sanitized installs, size overhead,
rollback and freeze defenses, install verification, restart persistence, cache speedup.

The full reference corpus test is marked slow: pytest -m "not slow" skips it.
'''

import itertools
import random
import time

import pytest

import archive
import consts
from errors import CacheCorrupted, QuorumUnreachable, StaleSeal
import file_manip
import helper
import install_verifier
from install_verifier import Verdict
import keystore
import metadata_index
import mirrors
import package
from package import ScriptKind
import package_generator
import repository
from repository import CacheKind, RepositoryRegistry
import sanitizer
from sanitizer import SanitizationContext, ScriptClass
import script_simulator
from script_simulator import InMemoryFilesystem
from testing_harness import (CHECK, DefaultInitialIdentities, ExpectError, FixedLatencyConfig,
                             FixtureSigner, IndexPath, MakePackage, MakePolicy, MakeSettings,
                             MakeTransport, MirrorBehaviour, MirrorContents, RunTests, UserScript,
                             kByzantineBehaviours)

Fresh = MirrorBehaviour.kFresh
Stale = MirrorBehaviour.kStale
Garbage = MirrorBehaviour.kGarbage
Down = MirrorBehaviour.kDown

kSmallCorpusCounts = {'scriptless' : 3, 'scripted' : 9, 'FilesystemChange' : 3, 'EmptyScript' : 1,
                      'TextProcessing' : 3, 'ConfigurationChange' : 1, 'EmptyFileCreation' : 1,
                      'UserGroupCreation' : 4, 'ShellActivation' : 1}

kUserCreatingScripts = {
    'redis' : UserScript('redis'),
    'nginx' : 'adduser -S -D nginx\naddgroup nginx www-data\n',
    'php' : 'addgroup -S -g 82 www-data\nadduser -S -D -G www-data php\n',
    'postgres' : 'adduser -S -D -u 70 postgres\n',
    'docker' : 'groupadd --gid=990 -r docker\n',
    'git' : 'useradd -r -s /sbin/nologin git\n',
    'mail' : '#!/bin/sh\naddgroup -S mail\nadduser -S -D -H -G mail postfix\n',
    'tor' : 'adduser -S -D -H -h /var/lib/tor -s /sbin/nologin -g Tor tor\n'}

def UpstreamContents(plain_version: str = '1.0-r0', plain_files: dict = None) -> dict:
    return MirrorContents([MakePackage('redis', scripts={ScriptKind.kPreInstall : UserScript('redis')}),
                           MakePackage('plain', plain_version, files=plain_files)])
# End UpstreamContents

def DeployOver(tmp_path, transport, urls, workers: int = 4):
    registry = RepositoryRegistry(MakeSettings(tmp_path, transport, workers=workers))
    repository_id, _ = registry.DeployPolicy(MakePolicy(urls))
    return registry, registry.Get(repository_id)
# End DeployOver

def Publish(transport, fresh: dict, stale: dict = None):
    for mirror in transport.mirror_map.values():
        mirror.fresh = fresh
        mirror.stale = fresh if (stale is None) else stale
# End Publish

def ServedEntries(repo) -> list:
    return list(metadata_index.ParseIndex(repo.GetIndex(), [repo.public_key]).entries)

def ExpectedConfig(predicted) -> dict:
    return {path : predicted.files[path].encode('utf-8') for path in consts.kConfigPaths}

# ============================== Classifier Coverage ==============================

@pytest.mark.slow
def TestReferenceCorpusRejectionRate(tmp_path):
    counts = package_generator.kReferenceCorpusCounts
    apks = package_generator.GenerateCorpus(FixtureSigner(), counts=counts)
    statistics = sanitizer.CorpusStatistics([package.ParseApk(apk) for apk in apks])
    CHECK(statistics.total == 11581)
    CHECK(statistics.without_scripts == 5531 + 5772)
    for script_class in ScriptClass:
        CHECK(statistics.class_counts[script_class] == counts.get(script_class.value, 0))
    CHECK(statistics.rejected == 28 and statistics.supported == 11553)
    CHECK(round(100.0 * statistics.rejected / statistics.total, 2) == 0.24)

    transport, urls = MakeTransport([Fresh], MirrorContents(apks))
    _, repo = DeployOver(tmp_path, transport, urls, workers=8)
    report = repo.Refresh()
    CHECK(report.packages_failed == {})
    CHECK(report.packages_rejected == 28 and report.packages_sanitized == 11553)
    served = set(entry.name for entry in ServedEntries(repo))
    CHECK(len(served) == 11553)
    CHECK(not any(name.startswith(('conf', 'shell')) for name in served))
# End TestReferenceCorpusRejectionRate

# ================================== Quorum ==================================

def TestQuorumSafety():
    fresh = UpstreamContents('1.1-r0')
    stale = UpstreamContents('1.0-r0')
    for mirror_count in (1, 3, 5):
        f = (mirror_count - 1) // 2
        for behaviours in itertools.product((Fresh, Stale, Garbage, Down), repeat=mirror_count):
            if (sum(behaviour in kByzantineBehaviours for behaviour in behaviours) > f):
                continue
            transport, urls = MakeTransport(list(behaviours), fresh, stale)
            cfg = FixedLatencyConfig(urls, transport)
            if (behaviours.count(Fresh) >= f + 1):
                result = mirrors.FetchIndexQuorum(cfg)
                CHECK(result.index_bytes == fresh[IndexPath()])
                CHECK(len(result.agreeing_mirrors) >= f + 1)
            else:
                ExpectError(QuorumUnreachable, mirrors.FetchIndexQuorum, cfg)
# End TestQuorumSafety

def TestQuorumContactsFastestMirrors():
    contents = UpstreamContents()
    for bad_behaviour in (Stale, Garbage, Down):
        for bad_count in range(3):
            # Disagreeing mirrors are the fastest: one escalation each
            transport, urls = MakeTransport([bad_behaviour] * bad_count + [Fresh] * (5 - bad_count),
                                            contents, UpstreamContents('0.9-r0'))
            result = mirrors.FetchIndexQuorum(FixedLatencyConfig(urls, transport))
            CHECK(result.contacted == 3 + bad_count)
            CHECK(len(transport.IndexGets()) == result.contacted)
            # Disagreeing mirrors are the slowest: never contacted
            transport, urls = MakeTransport([Fresh] * (5 - bad_count) + [bad_behaviour] * bad_count,
                                            contents, UpstreamContents('0.9-r0'))
            result = mirrors.FetchIndexQuorum(FixedLatencyConfig(urls, transport))
            CHECK(result.contacted == 3)
            CHECK(result.agreeing_mirrors == tuple(urls[: 3]))
# End TestQuorumContactsFastestMirrors

def TestQuorumFollowsMeasuredLatency():
    contents = UpstreamContents()
    # Latency order is the reverse of list order; the stale mirror answers fastest
    transport, urls = MakeTransport([Fresh, Fresh, Fresh, Fresh, Stale], contents,
                                    UpstreamContents('0.9-r0'), delays=[0.12, 0.09, 0.06, 0.03, 0.0])
    cfg = mirrors.MeasureLatencies(mirrors.MakeQuorumConfig(urls, 'x86_64', transport=transport))
    result = mirrors.FetchIndexQuorum(cfg)
    CHECK(result.contacted == 4)
    CHECK(result.agreeing_mirrors == (urls[3], urls[2], urls[1]))
    CHECK(result.index_bytes == contents[IndexPath()])
# End TestQuorumFollowsMeasuredLatency

# =============================== Determinism ===============================

def TestInstallOrderIndependence():
    corpus = [package.ParseApk(MakePackage(name, scripts={ScriptKind.kPreInstall : text}))
              for name, text in kUserCreatingScripts.items()]
    users, groups = sanitizer.CollectIdentities(corpus, DefaultInitialIdentities())
    context = SanitizationContext(sanitizer.PredictConfig(users, groups), FixtureSigner('repository'))
    sanitized = [sanitizer.SanitizePackage(pkg, context)[0] for pkg in corpus]
    expected = ExpectedConfig(context.predicted)
    rng = random.Random(1158)
    for _ in range(100):
        subset = rng.sample(sanitized, rng.randint(1, len(sanitized)))
        snapshots = []
        for _ in range(3):
            rng.shuffle(subset)
            fs = InMemoryFilesystem()
            for pkg in subset:
                result = script_simulator.RunScript(pkg.scripts[ScriptKind.kPreInstall], fs)
                CHECK(result.exit_status == 0)
            snapshots.append(fs.ConfigSnapshot())
        CHECK(all(snapshot == expected for snapshot in snapshots))
# End TestInstallOrderIndependence

# ================================ Size Overhead ================================

def DataTarSize(apk: bytes) -> int:
    return len(archive.SplitGzipStreams(apk)[2].decompressed_bytes)

def TestSizeOverhead():
    signer = FixtureSigner('repository', consts.kAlgorithmRsa2048)
    envelope_size = len(keystore.SignContent(signer, b'').Serialize())
    CHECK(envelope_size == 262)
    record_size = len(archive.PaxRecord(consts.kImaPaxKey, bytes(envelope_size)).Serialize())
    per_file = consts.kTarBlockSize + helper.PadToBlock(record_size, consts.kTarBlockSize)
    fixtures = {
        'many' : {'usr/share/many/part{}'.format(index) :
                  package_generator.FillerContent(64, 'many{}'.format(index)) for index in range(16)},
        'single' : {'usr/share/single/blob' : package_generator.FillerContent(1024, 'single')},
        'mixed' : {'usr/bin/mixed' : package_generator.FillerContent(300, 'mixed'),
                   'etc/mixed.conf' : b'', 'usr/share/mixed/README' : b'mixed\n'}}
    corpus = [package.ParseApk(MakePackage(name, files=files)) for name, files in fixtures.items()]
    corpus.append(package.ParseApk(MakePackage('redis', scripts={ScriptKind.kPreInstall : UserScript('redis')})))
    users, groups = sanitizer.CollectIdentities(corpus, DefaultInitialIdentities())
    context = SanitizationContext(sanitizer.PredictConfig(users, groups), signer)
    relative = {}
    for pkg in corpus:
        sanitized, report = sanitizer.SanitizePackage(pkg, context)
        signed_files = len([entry for entry in pkg.data_entries if entry.IsRegular()])
        expected = signed_files * per_file
        measured = (DataTarSize(package.SerializeApk(sanitized))
                    - DataTarSize(package.SerializeApk(pkg)))
        CHECK(abs(measured - expected) <= 0.05 * expected)
        CHECK(report.sanitized_size == len(package.SerializeApk(sanitized)))
        if (len(pkg.scripts) == 0):
            # Signatures do not compress
            CHECK(report.sanitized_size - report.original_size >= 0.95 * 256 * signed_files)
        relative[pkg.name] = (report.sanitized_size - report.original_size) / report.original_size
    CHECK(relative['many'] > relative['single'])
# End TestSizeOverhead

# ============================ Rollback and Freeze ============================

def TestReplayedCachedPackageIsDetected(tmp_path):
    transport, urls = MakeTransport([Fresh, Fresh, Fresh],
                                    UpstreamContents(plain_files={'usr/share/plain/README' : b'v1\n'}))
    _, repo = DeployOver(tmp_path, transport, urls)
    repo.Refresh()
    previous = repo.GetPackage('plain', '1.0-r0')
    # Republished under the same version
    Publish(transport, UpstreamContents(plain_files={'usr/share/plain/README' : b'v2\n'}))
    repo.Refresh()
    current = repo.GetPackage('plain', '1.0-r0')
    CHECK(current != previous)
    # The previous build is still validly signed by the repository
    package.VerifyPackage(package.ParseApk(previous), [repo.public_key])
    file_manip.WriteBytesAtomically(previous, repo.CachePath(CacheKind.kSanitized, 'plain-1.0-r0.apk'))
    ExpectError(CacheCorrupted, repo.GetPackage, 'plain', '1.0-r0')
# End TestReplayedCachedPackageIsDetected

def TestReplayedSealedStateIsStale(tmp_path):
    transport, urls = MakeTransport([Fresh, Fresh, Fresh], UpstreamContents())
    _, repo = DeployOver(tmp_path, transport, urls)
    repo.Refresh()
    sealed_path = repository.SealedStatePath(str(tmp_path / 'state'), repo.repository_id)
    previous_blob = helper.ReadBytes(sealed_path)
    Publish(transport, UpstreamContents('1.1-r0'))
    repo.Refresh()
    file_manip.WriteBytesAtomically(previous_blob, sealed_path)
    restarted = RepositoryRegistry(MakeSettings(tmp_path, transport))
    CHECK(isinstance(restarted.Restore()[repo.repository_id], StaleSeal))
    ExpectError(StaleSeal, restarted.Get, repo.repository_id)
# End TestReplayedSealedStateIsStale

def TestStaleMirrorCannotFreezeIndex(tmp_path):
    transport, urls = MakeTransport([Fresh, Fresh, Fresh], UpstreamContents('1.1-r0'),
                                    UpstreamContents('1.0-r0'))
    _, repo = DeployOver(tmp_path, transport, urls)
    repo.Refresh()
    served = repo.GetIndex()
    CHECK([(entry.name, entry.version) for entry in ServedEntries(repo)]
          == [('plain', '1.1-r0'), ('redis', '1.0-r0')])
    for byzantine_url in urls:
        for behaviour in kByzantineBehaviours:
            for url, mirror in transport.mirror_map.items():
                mirror.behaviour = behaviour if (url == byzantine_url) else Fresh
            repo.Refresh()
            CHECK(repo.GetIndex() == served)
# End TestStaleMirrorCannotFreezeIndex

# ============================ Install Verification ============================

def TestServedPackagesVerifyOnInstall(tmp_path):
    apks = package_generator.GenerateCorpus(FixtureSigner(), counts=kSmallCorpusCounts)
    transport, urls = MakeTransport([Fresh], MirrorContents(apks))
    _, repo = DeployOver(tmp_path, transport, urls)
    report = repo.Refresh()
    CHECK(report.packages_rejected == 2 and report.packages_sanitized == 10)
    wrong_key = FixtureSigner('other').public_key
    served = []
    for entry in ServedEntries(repo):
        pkg = package.ParseApk(repo.GetPackage(entry.name, entry.version))
        served.append(pkg)
        verdict = install_verifier.VerifyInstall([pkg], [repo.public_key], repo.predicted_config)
        CHECK(verdict.verdict == Verdict.kTrusted)
        CHECK(verdict.script_failures == [])
        verdict = install_verifier.VerifyInstall([pkg], [wrong_key], repo.predicted_config)
        CHECK(verdict.verdict == Verdict.kIntegrityViolation)
        CHECK(verdict.files_checked > 0)
        CHECK(len(verdict.signature_failures) == verdict.files_checked)
    CHECK(len(served) == 10)
    together = install_verifier.VerifyInstall(served, [repo.public_key], repo.predicted_config)
    CHECK(together.verdict == Verdict.kTrusted and together.config_match)
# End TestServedPackagesVerifyOnInstall

# ================================ Persistence ================================

def TestRestartPersistence(tmp_path):
    transport, urls = MakeTransport([Fresh, Fresh, Fresh], UpstreamContents())
    _, repo = DeployOver(tmp_path, transport, urls)
    repo.Refresh()
    sealed = helper.ReadBytes(repository.SealedStatePath(str(tmp_path / 'state'), repo.repository_id))
    CHECK(b'PRIVATE KEY' not in sealed)
    restarted = RepositoryRegistry(MakeSettings(tmp_path, transport))
    CHECK(restarted.Restore() == {})
    CHECK(restarted.ListRepositoryIds() == [repo.repository_id])
    restored = restarted.Get(repo.repository_id)
    CHECK(restored.public_key.ToPem() == repo.public_key.ToPem())
    CHECK(restored.GetIndex() == repo.GetIndex())
# End TestRestartPersistence

# ================================ Cache Speedup ================================

def TestCachedPackagesAreFast(tmp_path):
    contents = UpstreamContents()
    transport, urls = MakeTransport([MirrorBehaviour.kSlow], contents, delays=[0.05])
    _, repo = DeployOver(tmp_path, transport, urls)
    repo.Refresh()
    entry = metadata_index.ParseIndex(contents[IndexPath()], [FixtureSigner().public_key]) \
            .FindByFilename('redis-1.0-r0.apk')
    cfg = FixedLatencyConfig(urls, transport)
    context = SanitizationContext(repo.predicted_config, repo.signing_key)

    start_time = time.perf_counter()
    for _ in range(100):
        repo.GetPackage('redis', '1.0-r0')
    cached_seconds = time.perf_counter() - start_time

    start_time = time.perf_counter()
    for _ in range(100):
        data = mirrors.FetchPackage(cfg, entry)
        sanitizer.SanitizePackage(package.ParseApk(data), context)
    cold_seconds = time.perf_counter() - start_time
    CHECK(cold_seconds >= 10 * cached_seconds)
# End TestCachedPackagesAreFast

def main():
    RunTests(globals())

if (__name__ == '__main__'):
    main()
