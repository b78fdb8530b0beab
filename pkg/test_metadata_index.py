import base64
import hashlib

import archive
import consts
from errors import MalformedIndex, SignatureInvalid, UntrustedSigner
import metadata_index
from metadata_index import IndexEntry
import package
from testing_harness import CHECK, ExpectError, FixtureSigner, MakePackage, RunTests

def Parsed(names_and_versions) -> list:
    result = []
    for name, version in names_and_versions:
        apk_bytes = MakePackage(name, version)
        result.append((package.ParseApk(apk_bytes), apk_bytes))
    return result
# End Parsed

def Entry(name: str, version: str = '1.0-r0', checksum_byte: int = 1) -> IndexEntry:
    return IndexEntry(checksum=bytes([checksum_byte]) * 20, name=name, version=version,
                      arch='x86_64', package_size=100)

def Index(entries: list) -> metadata_index.MetadataIndex:
    signer = FixtureSigner('index')
    return metadata_index.ParseIndex(
            metadata_index.GenerateIndexFromEntries(entries, signer, 'test'), [signer.public_key])
# End Index

def TestEmptyIndex():
    signer = FixtureSigner('index')
    data = metadata_index.GenerateIndex([], signer, 'empty repository')
    index = metadata_index.ParseIndex(data, [signer.public_key])
    CHECK(index.entries == ())
    CHECK(index.description == 'empty repository')
    CHECK(index.signature.key_id == signer.key_id)
    CHECK(index.content_hash == hashlib.sha256(b'').digest())
# End TestEmptyIndex

def TestRoundTrip():
    signer = FixtureSigner('index')
    packages = Parsed([('zlib', '1.3-r0'), ('busybox', '1.36-r1'), ('musl', '1.2.4-r2')])
    index = metadata_index.ParseIndex(metadata_index.GenerateIndex(packages, signer, 'main'),
                                      [signer.public_key])
    expected = metadata_index.SortEntries([metadata_index.IndexEntryForPackage(pkg, apk_bytes)
                                           for pkg, apk_bytes in packages])
    CHECK(list(index.entries) == expected)
    CHECK([entry.name for entry in index.entries] == ['busybox', 'musl', 'zlib'])
    CHECK(index.FindEntry('musl', '1.2.4-r2').filename == 'musl-1.2.4-r2.apk')
    CHECK(index.FindByFilename('zlib-1.3-r0.apk').name == 'zlib')
    CHECK(index.FindEntry('musl', '9') is None)
# End TestRoundTrip

def TestChecksumAndSize():
    apk_bytes = MakePackage('pad', files={'data' : b'p' * 1000})
    pkg = package.ParseApk(apk_bytes)
    signer = FixtureSigner('index')
    index = metadata_index.ParseIndex(metadata_index.GenerateIndex([(pkg, apk_bytes)], signer, 'x'),
                                      [signer.public_key])
    entry = index.entries[0]
    CHECK(entry.package_size == len(apk_bytes))
    control_stream = archive.SplitGzipStreams(apk_bytes)[1].compressed_bytes
    CHECK(entry.checksum == hashlib.sha1(control_stream).digest())
    CHECK(entry.installed_size == 1000)
# End TestChecksumAndSize

def TestStanzaFormat():
    entry = IndexEntry(checksum=bytes(range(20)), name='redis', version='7.2.4-r0', arch='x86_64',
                       package_size=1000, installed_size=2048, depends=('musl', 'so:libc'),
                       extra_lines=('o:redis', 'm:Someone <someone@example.org>'))
    CHECK(entry.SerializeStanza() ==
          'C:Q1{}\nP:redis\nV:7.2.4-r0\nA:x86_64\nS:1000\nI:2048\nD:musl so:libc\n'
          'o:redis\nm:Someone <someone@example.org>\n\n'.format(
                  base64.b64encode(bytes(range(20))).decode('ascii')))
    CHECK(metadata_index.ParseIndexBody(entry.SerializeStanza()) == [entry])
# End TestStanzaFormat

def TestSortedOutput():
    body = metadata_index.SerializeIndexBody([Entry('b'), Entry('a')])
    CHECK(body.index('P:a') < body.index('P:b'))
# End TestSortedOutput

def TestSignatureStripped():
    signer = FixtureSigner('index')
    data = metadata_index.GenerateIndexFromEntries([Entry('a')], signer, 'x')
    body_stream = archive.SplitGzipStreams(data)[1].compressed_bytes
    ExpectError(SignatureInvalid, metadata_index.ParseIndex, body_stream, [signer.public_key])
    empty_signature = archive.CompressGzip(archive.WriteTar([], include_trailer=False))
    ExpectError(SignatureInvalid, metadata_index.ParseIndex, empty_signature + body_stream,
                [signer.public_key])
# End TestSignatureStripped

def TestUntrustedIndex():
    data = metadata_index.GenerateIndexFromEntries([Entry('a')], FixtureSigner('index'), 'x')
    ExpectError(UntrustedSigner, metadata_index.ParseIndex, data, [FixtureSigner('other').public_key])
# End TestUntrustedIndex

def TestBodySwapped():
    signer = FixtureSigner('index')
    original = archive.SplitGzipStreams(
            metadata_index.GenerateIndexFromEntries([Entry('a')], signer, 'x'))
    other = archive.SplitGzipStreams(
            metadata_index.GenerateIndexFromEntries([Entry('a'), Entry('evil')], signer, 'x'))
    ExpectError(SignatureInvalid, metadata_index.ParseIndex,
                original[0].compressed_bytes + other[1].compressed_bytes, [signer.public_key])
# End TestBodySwapped

def TestDuplicateStanzas():
    body = Entry('a').SerializeStanza() * 2
    ExpectError(MalformedIndex, metadata_index.ParseIndexBody, body)
    ExpectError(MalformedIndex, metadata_index.GenerateIndexFromEntries, [Entry('a'), Entry('a')],
                FixtureSigner('index'), 'x')
    # Signed index with duplicate stanzas is still rejected after verification
    signer = FixtureSigner('index')
    body_stream = archive.CompressGzip(archive.WriteTar(
            [archive.RegularFile(consts.kDescriptionFilename, b'x'),
             archive.RegularFile(consts.kIndexFilename, body.encode())]))
    data = package.BuildSignatureSegment(signer, body_stream) + body_stream
    ExpectError(MalformedIndex, metadata_index.ParseIndex, data, [signer.public_key])
# End TestDuplicateStanzas

def TestMalformedStanzas():
    ExpectError(MalformedIndex, metadata_index.ParseIndexBody, 'P:a\nV:1\n\n')
    ExpectError(MalformedIndex, metadata_index.ParseIndexBody,
                Entry('a').SerializeStanza().replace('S:100', 'S:many'))
    ExpectError(MalformedIndex, metadata_index.ParseIndexBody,
                Entry('a').SerializeStanza().replace('C:Q1', 'C:Q2'))
    ExpectError(MalformedIndex, metadata_index.ParseIndexBody, 'garbage line\n\n')
    ExpectError(MalformedIndex, IndexEntry, checksum=b'\x00' * 20, name='a', version='1',
                arch='x86_64', package_size=0)
# End TestMalformedStanzas

def TestDiffIdentity():
    index = Index([Entry('a'), Entry('b')])
    CHECK(metadata_index.DiffIndexes(index, index).IsEmpty())
# End TestDiffIdentity

def TestDiffVersionBump():
    old = Index([Entry('pkg', '1.0-r0'), Entry('other')])
    new = Index([Entry('pkg', '1.1-r0'), Entry('other')])
    changes = metadata_index.DiffIndexes(old, new)
    CHECK([entry.version for entry in changes.changed] == ['1.1-r0'])
    CHECK(changes.added == [] and changes.removed == [])
    rebuilt = Index([Entry('pkg', '1.0-r0', checksum_byte=9), Entry('other')])
    CHECK([entry.name for entry in metadata_index.DiffIndexes(old, rebuilt).changed] == ['pkg'])
# End TestDiffVersionBump

def TestDiffFromEmpty():
    new = Index([Entry('a'), Entry('b'), Entry('c')])
    CHECK(len(metadata_index.DiffIndexes(None, new).added) == 3)
    CHECK(len(metadata_index.DiffIndexes(Index([]), new).added) == 3)
# End TestDiffFromEmpty

def TestDiffIsAntisymmetric():
    first = Index([Entry('a'), Entry('b'), Entry('c', '1')])
    second = Index([Entry('b'), Entry('c', '2'), Entry('d')])
    forward = metadata_index.DiffIndexes(first, second)
    backward = metadata_index.DiffIndexes(second, first)
    CHECK(forward.added == backward.removed)
    CHECK(forward.removed == backward.added)
    CHECK([entry.name for entry in forward.changed] == [entry.name for entry in backward.changed])
# End TestDiffIsAntisymmetric

def main():
    RunTests(globals())

if (__name__ == '__main__'):
    main()
