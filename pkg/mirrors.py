'''
Fetching the metadata index and packages from upstream mirrors.

With m = 2f+1 mirrors, up to f of them may be Byzantine (serving stale or arbitrary data, or
nothing at all). The index is accepted only when f+1 mirrors served byte-identical copies,
so at least one honest mirror vouches for it. The fastest f+1 mirrors are asked first;
further mirrors are contacted one at a time only while no copy has f+1 holders.

Packages are fetched from a single mirror: they are checked against the size and control
segment SHA-1 listed in the quorum-accepted index, and the next mirror is tried on mismatch.
Every download is capped at the expected size, so an endless response cannot exhaust memory.
'''

from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
import time
from typing import Dict, List, Tuple
from urllib.parse import urlparse

import requests

import consts
import errors
from errors import (ChecksumMismatch, InsufficientMirrors, InvalidPolicy, PackageUnavailable,
                    QuorumUnreachable, SizeMismatch, TsrError)
import helper
import logger
from metadata_index import IndexEntry
import package
from type_checker import CheckType, CheckType2

# ================================ Transport ================================

class TransportError(Exception):
    pass

class ResponseTooLarge(TransportError):
    pass

class Transport(ABC):
    # Returns the HTTP status code
    @abstractmethod
    def Head(self, url: str, timeout_seconds: float) -> int:
        pass

    # Returns the response body, raising ResponseTooLarge as soon as it exceeds max_bytes
    @abstractmethod
    def Get(self, url: str, timeout_seconds: float, max_bytes: int) -> bytes:
        pass
# End class Transport

class RequestsTransport(Transport):
    '''
    Transport over a shared requests.Session.

    timeout_seconds bounds each socket operation and, separately, the whole transfer, so a
    mirror that trickles bytes cannot hold a download open indefinitely.
    '''

    def __init__(self, verify_tls: bool or str = True):
        self.session = requests.Session()
        self.session.verify = verify_tls

    def Head(self, url: str, timeout_seconds: float) -> int:
        try:
            response = self.session.head(url, timeout=timeout_seconds, allow_redirects=True)
        except requests.RequestException as e:
            raise TransportError(str(e))
        return response.status_code
    # End Head

    def Get(self, url: str, timeout_seconds: float, max_bytes: int) -> bytes:
        deadline = time.monotonic() + timeout_seconds
        try:
            with self.session.get(url, timeout=timeout_seconds, stream=True) as response:
                if (response.status_code != 200):
                    raise TransportError('{}: HTTP {}'.format(url, response.status_code))
                declared_length = response.headers.get('Content-Length')
                if ((declared_length is not None) and declared_length.isdigit()
                        and (int(declared_length) > max_bytes)):
                    raise ResponseTooLarge('{}: declared {} bytes, limit {}'.format(
                            url, declared_length, max_bytes))
                body = bytearray()
                for chunk in response.iter_content(chunk_size=consts.kDownloadChunkSize):
                    body += chunk
                    if (len(body) > max_bytes):
                        raise ResponseTooLarge('{}: more than {} bytes'.format(url, max_bytes))
                    if (time.monotonic() > deadline):
                        raise TransportError('{}: transfer timed out'.format(url))
                return bytes(body)
        except requests.RequestException as e:
            raise TransportError(str(e))
    # End Get
# End class RequestsTransport

# ================================== Types ==================================

class MirrorStatus(Enum):
    kUnknown = 'Unknown'
    kHealthy = 'Healthy'
    kFailed = 'Failed'

@dataclass(frozen=True)
class MirrorEndpoint:
    url: str
    measured_latency: float = None  # milliseconds
    status: MirrorStatus = MirrorStatus.kUnknown

@dataclass(frozen=True)
class QuorumConfig:
    '''
    Member variables:
     - mirrors: tuple of MirrorEndpoint
     - architecture: str
     - per_request_timeout: int (milliseconds)
     - max_index_bytes: int
     - transport: Transport
    '''
    mirrors: Tuple[MirrorEndpoint, ...]
    architecture: str
    per_request_timeout: int = consts.kDefaultRequestTimeoutMs
    max_index_bytes: int = consts.kDefaultMaxIndexBytes
    transport: Transport = None

    @property
    def f(self) -> int:
        return (len(self.mirrors) - 1) // 2

    @property
    def timeout_seconds(self) -> float:
        return self.per_request_timeout / 1000.0

    # Healthy mirrors, fastest first; mirrors never measured count as healthy in list order
    def UsableMirrors(self) -> List[MirrorEndpoint]:
        usable = [mirror for mirror in self.mirrors if (mirror.status != MirrorStatus.kFailed)]
        return sorted(usable, key=lambda mirror: (mirror.measured_latency is None,
                                                  mirror.measured_latency or 0.0))
    # End UsableMirrors

    def IndexUrl(self, mirror: MirrorEndpoint) -> str:
        return consts.kIndexPathTemplate.format(mirror.url.rstrip('/'), self.architecture)

    def PackageUrl(self, mirror: MirrorEndpoint, filename: str) -> str:
        return consts.kPackagePathTemplate.format(mirror.url.rstrip('/'), self.architecture,
                                                  filename)
# End class QuorumConfig

@dataclass(frozen=True)
class QuorumResult:
    index_bytes: bytes
    agreeing_mirrors: Tuple[str, ...]
    contacted: int
    content_hash: bytes

@dataclass(frozen=True)
class FetchAttempt:
    url: str
    error: Exception

def MakeQuorumConfig(urls: List[str], architecture: str,
                     per_request_timeout: int = consts.kDefaultRequestTimeoutMs,
                     max_index_bytes: int = consts.kDefaultMaxIndexBytes,
                     transport: Transport = None,
                     allow_insecure_mirrors: bool = False) -> QuorumConfig:
    CheckType2(urls, 'urls', (list, tuple), str)
    CheckType(architecture, 'architecture', str)
    CheckType(per_request_timeout, 'per_request_timeout', int)
    if (len(urls) == 0):
        errors.Error(InsufficientMirrors('no mirrors configured'))
    allowed_schemes = ('https', 'http') if allow_insecure_mirrors else ('https',)
    bad_urls = [url for url in urls if (urlparse(url).scheme not in allowed_schemes)]
    if (len(bad_urls) > 0):
        errors.Error(InvalidPolicy(['mirror "{}" does not use https'.format(url)
                                    for url in bad_urls]))
    return QuorumConfig(mirrors=tuple(MirrorEndpoint(url) for url in urls),
                        architecture=architecture, per_request_timeout=per_request_timeout,
                        max_index_bytes=max_index_bytes,
                        transport=transport if (transport is not None) else RequestsTransport())
# End MakeQuorumConfig

# =============================== Operations ===============================

def _Probe(cfg: QuorumConfig, mirror: MirrorEndpoint) -> MirrorEndpoint:
    start_time = time.perf_counter()
    try:
        status_code = cfg.transport.Head(cfg.IndexUrl(mirror), cfg.timeout_seconds)
    except TransportError as e:
        logger.Log('Warning: mirror {} failed latency probe: {}'.format(mirror.url, e))
        return replace(mirror, measured_latency=None, status=MirrorStatus.kFailed)
    latency = (time.perf_counter() - start_time) * 1000.0
    if (status_code >= 400):
        logger.Log('Warning: mirror {} answered HTTP {}'.format(mirror.url, status_code))
        return replace(mirror, measured_latency=None, status=MirrorStatus.kFailed)
    return replace(mirror, measured_latency=latency, status=MirrorStatus.kHealthy)
# End _Probe

# Probes every mirror once, in parallel. Never raises: failures are recorded per mirror.
def MeasureLatencies(cfg: QuorumConfig) -> QuorumConfig:
    CheckType(cfg, 'cfg', QuorumConfig)
    with ThreadPoolExecutor(max_workers=len(cfg.mirrors)) as executor:
        probed = list(executor.map(lambda mirror: _Probe(cfg, mirror), cfg.mirrors))
    return replace(cfg, mirrors=tuple(probed))
# End MeasureLatencies

def _FetchIndexCopy(cfg: QuorumConfig, mirror: MirrorEndpoint) -> bytes or None:
    try:
        return cfg.transport.Get(cfg.IndexUrl(mirror), cfg.timeout_seconds, cfg.max_index_bytes)
    except TransportError as e:
        logger.Log('Warning: index fetch from {} failed: {}'.format(mirror.url, e))
        return None
# End _FetchIndexCopy

def FetchIndexQuorum(cfg: QuorumConfig) -> QuorumResult:
    CheckType(cfg, 'cfg', QuorumConfig)
    needed = cfg.f + 1
    candidates = cfg.UsableMirrors()
    if (len(candidates) < needed):
        errors.Error(InsufficientMirrors('{} usable mirrors, quorum needs {}'.format(
                len(candidates), needed)))
    holders: Dict[bytes, List[str]] = {}
    copies: Dict[bytes, bytes] = {}

    def Record(mirror: MirrorEndpoint, body: bytes or None):
        if (body is None):
            return
        content_hash = helper.Sha256(body)
        holders.setdefault(content_hash, []).append(mirror.url)
        copies[content_hash] = body
    # End Record

    with ThreadPoolExecutor(max_workers=needed) as executor:
        first_round = candidates[: needed]
        for mirror, body in zip(first_round, executor.map(
                lambda mirror: _FetchIndexCopy(cfg, mirror), first_round)):
            Record(mirror, body)
    contacted = needed
    while (True):
        best_hash = max(holders, key=lambda content_hash: len(holders[content_hash]),
                        default=None)
        best_count = 0 if (best_hash is None) else len(holders[best_hash])
        if (best_count >= needed):
            logger.Log('Info: index quorum reached: {} of {} contacted mirrors agree'.format(
                    best_count, contacted))
            return QuorumResult(index_bytes=copies[best_hash],
                                agreeing_mirrors=tuple(holders[best_hash]), contacted=contacted,
                                content_hash=best_hash)
        remaining = len(candidates) - contacted
        if (best_count + remaining < needed):
            errors.Error(QuorumUnreachable(
                    'no index held by {} mirrors after contacting {} ({} distinct copies)'
                    .format(needed, contacted, len(holders))))
        mirror = candidates[contacted]
        Record(mirror, _FetchIndexCopy(cfg, mirror))
        contacted += 1
# End FetchIndexQuorum

def _CheckPackageBytes(body: bytes, entry: IndexEntry, url: str):
    if (len(body) != entry.package_size):
        raise SizeMismatch('{}: {} bytes, index lists {}'.format(url, len(body),
                                                                 entry.package_size))
    if (package.ControlSegmentSha1(body) != entry.checksum):
        raise ChecksumMismatch('{}: control segment checksum differs from the index'.format(url))
# End _CheckPackageBytes

# Tries usable mirrors fastest first. Raises PackageUnavailable listing every failed attempt.
def FetchPackage(cfg: QuorumConfig, entry: IndexEntry, filename: str = None) -> bytes:
    CheckType(cfg, 'cfg', QuorumConfig)
    CheckType(entry, 'entry', IndexEntry)
    filename = entry.filename if (filename is None) else filename
    attempts = []
    for mirror in cfg.UsableMirrors():
        url = cfg.PackageUrl(mirror, filename)
        try:
            body = cfg.transport.Get(url, cfg.timeout_seconds, entry.package_size)
            _CheckPackageBytes(body, entry, url)
            return body
        except ResponseTooLarge as e:
            attempts.append(FetchAttempt(url, SizeMismatch(str(e))))
        except (TransportError, TsrError) as e:
            attempts.append(FetchAttempt(url, e))
        logger.Log('Warning: {} rejected: {}'.format(url, attempts[-1].error))
    errors.Error(PackageUnavailable('{}: no mirror served a matching package'.format(filename),
                                    attempts))
# End FetchPackage

# Downloads in parallel. Returns ({filename : bytes}, {filename : PackageUnavailable}).
def FetchPackages(cfg: QuorumConfig, entries: List[IndexEntry],
                  workers: int = consts.kDefaultDownloadWorkers
                  ) -> Tuple[Dict[str, bytes], Dict[str, Exception]]:
    CheckType(cfg, 'cfg', QuorumConfig)
    CheckType2(entries, 'entries', (list, tuple), IndexEntry)
    CheckType(workers, 'workers', int)
    fetched, failed = {}, {}
    if (len(entries) == 0):
        return fetched, failed
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = {entry.filename : executor.submit(FetchPackage, cfg, entry) for entry in entries}
        for filename, future in futures.items():
            try:
                fetched[filename] = future.result()
            except PackageUnavailable as e:
                failed[filename] = e
    return fetched, failed
# End FetchPackages
