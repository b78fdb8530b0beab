import archive
from errors import (InsufficientMirrors, InvalidPolicy, MalformedGzip, PackageUnavailable,
                    QuorumUnreachable, SizeMismatch)
import helper
import metadata_index
import mirrors
from mirrors import MirrorStatus, RequestsTransport, ResponseTooLarge, TransportError
from testing_harness import (CHECK, ExpectError, FixedLatencyConfig, FixtureSigner, HttpMirror,
                             IndexPath, MakePackage, MakeTransport, MirrorBehaviour, MirrorContents,
                             RunTests, kArchitecture)

Fresh = MirrorBehaviour.kFresh
Stale = MirrorBehaviour.kStale
Garbage = MirrorBehaviour.kGarbage
Down = MirrorBehaviour.kDown
Endless = MirrorBehaviour.kEndless

def Trees():
    fresh = MirrorContents([MakePackage('a', '1.1-r0'), MakePackage('b')])
    stale = MirrorContents([MakePackage('a', '1.0-r0'), MakePackage('b')])
    return fresh, stale
# End Trees

def Quorum(behaviours: list):
    fresh, stale = Trees()
    transport, urls = MakeTransport(behaviours, fresh, stale)
    return mirrors.FetchIndexQuorum(FixedLatencyConfig(urls, transport)), transport, fresh
# End Quorum

def IndexEntries(contents: dict) -> list:
    return list(metadata_index.ParseIndex(contents[IndexPath()], [FixtureSigner().public_key]).entries)

# ================================== Quorum ==================================

def TestQuorumAllHonest():
    result, transport, fresh = Quorum([Fresh, Fresh, Fresh])
    CHECK(result.index_bytes == fresh[IndexPath()])
    CHECK(result.contacted == 2)
    CHECK(len(transport.IndexGets()) == 2)
    CHECK(result.agreeing_mirrors == ('https://mirror0.example', 'https://mirror1.example'))
    CHECK(result.content_hash == helper.Sha256(fresh[IndexPath()]))
# End TestQuorumAllHonest

def TestQuorumSingleMirror():
    result, _, fresh = Quorum([Fresh])
    CHECK(result.contacted == 1 and result.index_bytes == fresh[IndexPath()])
# End TestQuorumSingleMirror

def TestQuorumEscalatesPastStaleMirror():
    result, transport, fresh = Quorum([Stale, Fresh, Fresh])
    CHECK(result.index_bytes == fresh[IndexPath()])
    CHECK(result.contacted == 3)
    CHECK(transport.IndexGets()[-1] == 'https://mirror2.example/x86_64/APKINDEX.tar.gz')
# End TestQuorumEscalatesPastStaleMirror

def TestQuorumFiveMirrorsTwoByzantine():
    result, _, fresh = Quorum([Stale, Garbage, Fresh, Fresh, Fresh])
    CHECK(result.index_bytes == fresh[IndexPath()])
    CHECK(result.contacted == 5)
    CHECK(len(result.agreeing_mirrors) == 3)
# End TestQuorumFiveMirrorsTwoByzantine

def TestQuorumStopsEarly():
    result, transport, _ = Quorum([Fresh, Garbage, Fresh, Fresh, Fresh])
    CHECK(result.contacted == 4)
    CHECK('https://mirror4.example/x86_64/APKINDEX.tar.gz' not in transport.IndexGets())
# End TestQuorumStopsEarly

def TestQuorumWithEndlessMirror():
    result, _, fresh = Quorum([Endless, Fresh, Fresh])
    CHECK(result.index_bytes == fresh[IndexPath()])
    CHECK(result.contacted == 3)
# End TestQuorumWithEndlessMirror

def TestQuorumUnreachable():
    ExpectError(QuorumUnreachable, Quorum, [Down, Down, Fresh])
    # Too many Byzantine mirrors: two distinct copies, neither with f+1 holders
    ExpectError(QuorumUnreachable, Quorum, [Stale, Garbage, Fresh])
# End TestQuorumUnreachable

def TestInsufficientMirrors():
    fresh, stale = Trees()
    transport, urls = MakeTransport([Down, Down, Fresh], fresh, stale)
    cfg = mirrors.MeasureLatencies(FixedLatencyConfig(urls, transport))
    CHECK([mirror.status for mirror in cfg.mirrors]
          == [MirrorStatus.kFailed, MirrorStatus.kFailed, MirrorStatus.kHealthy])
    ExpectError(InsufficientMirrors, mirrors.FetchIndexQuorum, cfg)
    CHECK(transport.IndexGets() == [])
# End TestInsufficientMirrors

# ============================ Latency and config ============================

def TestMeasureLatenciesOrdersMirrors():
    fresh, _ = Trees()
    transport, urls = MakeTransport([Fresh, Fresh, Fresh], fresh, delays=[0.08, 0.0, 0.04])
    cfg = mirrors.MeasureLatencies(mirrors.MakeQuorumConfig(urls, kArchitecture, transport=transport))
    CHECK(all(mirror.status == MirrorStatus.kHealthy for mirror in cfg.mirrors))
    CHECK([mirror.url for mirror in cfg.UsableMirrors()] == [urls[1], urls[2], urls[0]])
    CHECK(len(transport.heads) == 3)
# End TestMeasureLatenciesOrdersMirrors

def TestUnmeasuredMirrorsKeepListOrder():
    fresh, _ = Trees()
    transport, urls = MakeTransport([Fresh, Fresh, Fresh], fresh)
    cfg = mirrors.MakeQuorumConfig(urls, kArchitecture, transport=transport)
    CHECK([mirror.url for mirror in cfg.UsableMirrors()] == urls)
    CHECK(cfg.f == 1)
    CHECK(cfg.PackageUrl(cfg.mirrors[0], 'a-1.0-r0.apk') == 'https://mirror0.example/x86_64/a-1.0-r0.apk')
# End TestUnmeasuredMirrorsKeepListOrder

def TestMakeQuorumConfigValidation():
    ExpectError(InsufficientMirrors, mirrors.MakeQuorumConfig, [], kArchitecture)
    error = ExpectError(InvalidPolicy, mirrors.MakeQuorumConfig,
                        ['https://a.example', 'http://b.example', 'ftp://c.example'], kArchitecture)
    CHECK(len(error.diagnostics) == 2)
    cfg = mirrors.MakeQuorumConfig(['http://b.example'], kArchitecture, allow_insecure_mirrors=True)
    CHECK(isinstance(cfg.transport, RequestsTransport))
# End TestMakeQuorumConfigValidation

# ================================= Packages =================================

def TestFetchPackage():
    fresh, _ = Trees()
    transport, urls = MakeTransport([Fresh, Fresh, Fresh], fresh)
    entry = IndexEntries(fresh)[0]
    body = mirrors.FetchPackage(FixedLatencyConfig(urls, transport), entry)
    CHECK(body == fresh['x86_64/' + entry.filename])
    CHECK(len(transport.gets) == 1)
# End TestFetchPackage

def TestFetchPackageSkipsBadMirrors():
    fresh, stale = Trees()
    transport, urls = MakeTransport([Down, Fresh, Fresh], fresh, stale)
    entries = {entry.name : entry for entry in IndexEntries(fresh)}
    good = fresh['x86_64/b-1.0-r0.apk']
    start, end = archive.SplitGzipStreams(good)[1].byte_range
    corrupted = bytearray(good)
    corrupted[(start + end) // 2] ^= 0xff
    transport.mirror_map[urls[1]].overrides['x86_64/b-1.0-r0.apk'] = bytes(corrupted)
    cfg = FixedLatencyConfig(urls, transport)
    CHECK(mirrors.FetchPackage(cfg, entries['b']) == fresh['x86_64/b-1.0-r0.apk'])
    CHECK(len(transport.gets) == 3)
# End TestFetchPackageSkipsBadMirrors

def TestFetchPackageUnavailable():
    fresh, stale = Trees()
    transport, urls = MakeTransport([Stale, Endless, Down], fresh, stale)
    entry = [entry for entry in IndexEntries(fresh) if (entry.name == 'a')][0]
    error = ExpectError(PackageUnavailable, mirrors.FetchPackage, FixedLatencyConfig(urls, transport),
                        entry)
    CHECK(len(error.attempts) == 3)
    # The stale mirror has no a-1.1-r0.apk at all
    CHECK(isinstance(error.attempts[0].error, TransportError))
    CHECK(isinstance(error.attempts[1].error, SizeMismatch))
    transport.mirror_map[urls[0]].overrides['x86_64/a-1.1-r0.apk'] = b'x' * entry.package_size
    error = ExpectError(PackageUnavailable, mirrors.FetchPackage, FixedLatencyConfig(urls, transport),
                        entry)
    CHECK(isinstance(error.attempts[0].error, MalformedGzip))
# End TestFetchPackageUnavailable

def TestFetchPackages():
    fresh, _ = Trees()
    transport, urls = MakeTransport([Fresh, Fresh, Fresh], fresh)
    entries = IndexEntries(fresh)
    missing = metadata_index.IndexEntry(checksum=b'\x01' * 20, name='ghost', version='1.0-r0',
                                        arch=kArchitecture, package_size=10)
    fetched, failed = mirrors.FetchPackages(FixedLatencyConfig(urls, transport), entries + [missing],
                                            workers=4)
    CHECK(sorted(fetched) == sorted(entry.filename for entry in entries))
    CHECK(list(failed) == ['ghost-1.0-r0.apk'])
    CHECK(mirrors.FetchPackages(FixedLatencyConfig(urls, transport), []) == ({}, {}))
# End TestFetchPackages

# ============================== HTTP transport ==============================

def TestRequestsTransport():
    contents = {'x86_64/APKINDEX.tar.gz' : b'index bytes', 'x86_64/big.apk' : b'y' * 5000}
    with HttpMirror(contents, endless_paths=('x86_64/endless.apk',)) as mirror:
        transport = RequestsTransport()
        base = mirror.base_url
        CHECK(transport.Head(base + '/x86_64/APKINDEX.tar.gz', 2.0) == 200)
        CHECK(transport.Head(base + '/missing', 2.0) == 404)
        CHECK(transport.Get(base + '/x86_64/APKINDEX.tar.gz', 2.0, 1024) == b'index bytes')
        ExpectError(TransportError, transport.Get, base + '/missing', 2.0, 1024)
        ExpectError(ResponseTooLarge, transport.Get, base + '/x86_64/big.apk', 2.0, 4999)
        ExpectError(ResponseTooLarge, transport.Get, base + '/x86_64/endless.apk', 2.0, 100000)
    ExpectError(TransportError, RequestsTransport().Get, base + '/x86_64/APKINDEX.tar.gz', 0.5, 1024)
# End TestRequestsTransport

def TestQuorumOverHttp():
    fresh, stale = Trees()
    with HttpMirror(fresh) as first, HttpMirror(stale) as second, HttpMirror(fresh) as third:
        urls = [first.base_url, second.base_url, third.base_url]
        cfg = mirrors.MeasureLatencies(mirrors.MakeQuorumConfig(urls, kArchitecture,
                                                                allow_insecure_mirrors=True))
        result = mirrors.FetchIndexQuorum(cfg)
        CHECK(result.index_bytes == fresh[IndexPath()])
        CHECK(set(result.agreeing_mirrors) == {first.base_url, third.base_url})
# End TestQuorumOverHttp

def main():
    RunTests(globals())

if (__name__ == '__main__'):
    main()
