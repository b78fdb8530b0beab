'''
Shared helpers for the test files: CHECK, cached fixture signers, fixture packages and mirror
trees, a scripted in-memory mirror transport, and an in-process HTTP mirror.

Mirror behaviours of ScriptedTransport:
 - kFresh: serves the current mirror tree
 - kStale: serves an older (validly signed) mirror tree
 - kGarbage: serves random bytes for the index, the fresh tree otherwise
 - kSlow: serves the fresh tree after a delay
 - kEndless: every GET exceeds the byte cap
 - kDown: every request fails
'''

from enum import Enum
import functools
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
import inspect
import pathlib
import random
import tempfile
import threading
import time
from typing import Dict, List

import archive
import consts
import keystore
import logger
from keystore import SigningKeypair
import mirrors
from mirrors import ResponseTooLarge, Transport, TransportError
import package_generator
from package_generator import PackageSpec
from package import PkgInfo, ScriptKind
from policy import SecurityPolicy
from repository import RepositorySettings
from sanitizer import GroupSpec, UserSpec

kArchitecture = 'x86_64'
kTestSealingKey = bytes(range(32))

def CHECK(expr: bool):
    if (not expr):
        raise RuntimeError('CHECK failed: expression evaluated to False')
# End CHECK

# Calls function and returns the raised exception, which must be an instance of exception_type
def ExpectError(exception_type, function, *args, **kwargs) -> Exception:
    try:
        function(*args, **kwargs)
    except exception_type as e:
        return e
    raise RuntimeError('ExpectError failed: {} did not raise {}'.format(
            getattr(function, '__name__', function), exception_type.__name__))
# End ExpectError

# Runs every Test* function of a test module in definition order, for direct execution
# without pytest. Functions taking tmp_path get a fresh temporary directory.
def RunTests(module_globals: dict):
    logger.InitializeLog('test.log', 'debug', log_to_stderr=False)
    tests = [(name, function) for name, function in module_globals.items()
             if name.startswith('Test') and callable(function)]
    for name, function in tests:
        print('Running {}'.format(name))
        if ('tmp_path' in inspect.signature(function).parameters):
            with tempfile.TemporaryDirectory() as temp_dir:
                function(pathlib.Path(temp_dir))
        else:
            function()
    print('All {} tests completed successfully!\n'.format(len(tests)))
# End RunTests

# Key generation is slow for RSA; tests share one key per (name, algorithm)
@functools.lru_cache(maxsize=None)
def _CachedSigner(name: str, algorithm: str) -> SigningKeypair:
    return keystore.GenerateKeypair(algorithm)

def FixtureSigner(name: str = 'upstream',
                  algorithm: str = consts.kAlgorithmEd25519) -> SigningKeypair:
    return _CachedSigner(name, algorithm)
# End FixtureSigner

def MakePackage(name: str, version: str = '1.0-r0', scripts: dict = None, files: dict = None,
                signer: SigningKeypair = None, architecture: str = kArchitecture,
                depends: tuple = ()) -> bytes:
    files = {'usr/share/{}/README'.format(name) : 'fixture {}\n'.format(name).encode('utf-8')} \
            if (files is None) else files
    entries = [archive.RegularFile(path, content) for path, content in files.items()]
    spec = PackageSpec(pkginfo=PkgInfo(pkgname=name, pkgver=version, arch=architecture,
                                       size=sum(len(content) for content in files.values()),
                                       depends=depends),
                       scripts={ScriptKind(kind) if isinstance(kind, str) else kind : text
                                for kind, text in (scripts or {}).items()},
                       data_entries=entries)
    return package_generator.BuildPackage(spec, signer or FixtureSigner())
# End MakePackage

def UserScript(name: str) -> str:
    return '#!/bin/sh\naddgroup -S {0}\nadduser -S -D -H -s /sbin/nologin -G {0} {0}\n' \
           .format(name)

def MirrorContents(apks: List[bytes], signer: SigningKeypair = None,
                   architecture: str = kArchitecture) -> Dict[str, bytes]:
    return package_generator.BuildMirrorContents(apks, signer or FixtureSigner(), architecture)

def IndexPath(architecture: str = kArchitecture) -> str:
    return '{}/APKINDEX.tar.gz'.format(architecture)

def MirrorUrls(count: int) -> List[str]:
    return ['https://mirror{}.example'.format(index) for index in range(count)]

def MakePolicy(mirror_urls: List[str], signer: SigningKeypair = None,
               initial_users: tuple = (), initial_groups: tuple = (),
               allowlist: tuple = None, blocklist: tuple = None) -> SecurityPolicy:
    return SecurityPolicy(mirrors=tuple(mirror_urls),
                          trusted_signer_keys=((signer or FixtureSigner()).public_key,),
                          initial_users=tuple(initial_users), initial_groups=tuple(initial_groups),
                          architecture=kArchitecture, allowlist=allowlist, blocklist=blocklist)
# End MakePolicy

def DefaultInitialIdentities():
    return ((UserSpec(name='root', explicit_uid=0, primary_group='root', home='/root',
                      shell='/bin/sh'),),
            (GroupSpec(name='root', explicit_gid=0),))

def PolicyYaml(mirror_urls: List[str], signer: SigningKeypair = None) -> str:
    lines = ['mirrors:'] + ['  - {}'.format(url) for url in mirror_urls]
    lines += ['signers_keys:', '  - |']
    lines += ['    ' + line for line in (signer or FixtureSigner()).public_key.ToPem().splitlines()]
    lines += ['architecture: {}'.format(kArchitecture),
              'initial_users:',
              '  - {name: root, uid: 0, group: root, home: /root, shell: /bin/sh}',
              'initial_groups:',
              '  - {name: root, gid: 0}']
    return '\n'.join(lines) + '\n'
# End PolicyYaml

def MakeSettings(tmp_path, transport: Transport = None, workers: int = 2,
                 algorithm: str = consts.kAlgorithmEd25519, refresh_ttl: int = 300,
                 allow_insecure_mirrors: bool = False) -> RepositorySettings:
    return RepositorySettings(state_dir=str(tmp_path / 'state'), cache_dir=str(tmp_path / 'cache'),
                              sealing_key=kTestSealingKey, signing_algorithm=algorithm,
                              request_timeout_ms=2000, download_workers=workers,
                              refresh_ttl=refresh_ttl, transport=transport,
                              allow_insecure_mirrors=allow_insecure_mirrors)
# End MakeSettings

# ============================== Scripted Mirrors ==============================

class MirrorBehaviour(Enum):
    kFresh = 'fresh'
    kStale = 'stale'
    kGarbage = 'garbage'
    kSlow = 'slow'
    kEndless = 'endless'
    kDown = 'down'

kByzantineBehaviours = (MirrorBehaviour.kStale, MirrorBehaviour.kGarbage)

class ScriptedMirror:
    '''
    Member variables:
     - behaviour: MirrorBehaviour
     - fresh: dict {relative path : bytes}
     - stale: dict {relative path : bytes}
     - delay_seconds: float
     - overrides: dict {relative path : bytes} served regardless of behaviour
    '''

    def __init__(self, behaviour: MirrorBehaviour, fresh: dict, stale: dict = None,
                 delay_seconds: float = 0.0):
        self.behaviour = behaviour
        self.fresh = fresh
        self.stale = stale if (stale is not None) else fresh
        self.delay_seconds = delay_seconds
        self.overrides = {}
# End class ScriptedMirror

class ScriptedTransport(Transport):
    '''
    In-memory Transport over a set of ScriptedMirror, keyed by base URL.
    Records every GET and HEAD so tests can count contacted mirrors.
    '''

    def __init__(self, mirror_map: Dict[str, ScriptedMirror]):
        self.mirror_map = dict(mirror_map)
        self.gets: List[str] = []
        self.heads: List[str] = []
        self._lock = threading.Lock()

    def _Resolve(self, url: str):
        for base_url, mirror in self.mirror_map.items():
            if (url.startswith(base_url.rstrip('/') + '/')):
                return mirror, url[len(base_url.rstrip('/')) + 1 :]
        raise TransportError('{}: unknown host'.format(url))
    # End _Resolve

    def Head(self, url: str, timeout_seconds: float) -> int:
        with self._lock:
            self.heads.append(url)
        mirror, _ = self._Resolve(url)
        if (mirror.behaviour == MirrorBehaviour.kDown):
            raise TransportError('{}: connection refused'.format(url))
        time.sleep(mirror.delay_seconds)
        return 200
    # End Head

    def Get(self, url: str, timeout_seconds: float, max_bytes: int) -> bytes:
        with self._lock:
            self.gets.append(url)
        mirror, relative_path = self._Resolve(url)
        behaviour = mirror.behaviour
        if (behaviour == MirrorBehaviour.kDown):
            raise TransportError('{}: connection refused'.format(url))
        if (behaviour == MirrorBehaviour.kEndless):
            raise ResponseTooLarge('{}: more than {} bytes'.format(url, max_bytes))
        time.sleep(mirror.delay_seconds)
        if (relative_path in mirror.overrides):
            body = mirror.overrides[relative_path]
        elif ((behaviour == MirrorBehaviour.kGarbage) and relative_path.endswith('APKINDEX.tar.gz')):
            body = random.Random(url).randbytes(512)
        else:
            tree = mirror.stale if (behaviour == MirrorBehaviour.kStale) else mirror.fresh
            if (relative_path not in tree):
                raise TransportError('{}: HTTP 404'.format(url))
            body = tree[relative_path]
        if (len(body) > max_bytes):
            raise ResponseTooLarge('{}: more than {} bytes'.format(url, max_bytes))
        return body
    # End Get

    def IndexGets(self) -> List[str]:
        with self._lock:
            return [url for url in self.gets if url.endswith('APKINDEX.tar.gz')]
# End class ScriptedTransport

def MakeTransport(behaviours: List[MirrorBehaviour], fresh: dict, stale: dict = None,
                  delays: List[float] = None) -> (ScriptedTransport, List[str]):
    urls = MirrorUrls(len(behaviours))
    delays = delays or [0.0] * len(behaviours)
    transport = ScriptedTransport({url : ScriptedMirror(behaviour, fresh, stale, delay)
                                   for url, behaviour, delay in zip(urls, behaviours, delays)})
    return transport, urls
# End MakeTransport

# Quorum config with fixed latencies: mirror i is (i+1) ms away, so UsableMirrors keeps list order
def FixedLatencyConfig(urls: List[str], transport: Transport) -> mirrors.QuorumConfig:
    return mirrors.QuorumConfig(
            mirrors=tuple(mirrors.MirrorEndpoint(url, float(index + 1), mirrors.MirrorStatus.kHealthy)
                          for index, url in enumerate(urls)),
            architecture=kArchitecture, per_request_timeout=2000, transport=transport)
# End FixedLatencyConfig

# ============================== HTTP Mirror ==============================

class _MirrorRequestHandler(BaseHTTPRequestHandler):
    protocol_version = 'HTTP/1.1'

    def log_message(self, format, *args):
        pass

    def _Body(self) -> bytes or None:
        return self.server.contents.get(self.path.lstrip('/'))

    def do_HEAD(self):
        body = self._Body()
        self.send_response(200 if (body is not None) else 404)
        self.send_header('Content-Length', str(len(body or b'')))
        self.end_headers()

    def do_GET(self):
        if (self.path.lstrip('/') in self.server.endless_paths):
            # Chunked, never-ending body
            self.send_response(200)
            self.send_header('Transfer-Encoding', 'chunked')
            self.end_headers()
            chunk = b'x' * 4096
            try:
                while (True):
                    self.wfile.write('{:x}\r\n'.format(len(chunk)).encode('ascii') + chunk + b'\r\n')
            except (BrokenPipeError, ConnectionResetError):
                return
        body = self._Body()
        if (body is None):
            self.send_response(404)
            self.send_header('Content-Length', '0')
            self.end_headers()
            return
        self.send_response(200)
        self.send_header('Content-Length', str(len(body)))
        self.end_headers()
        self.wfile.write(body)
    # End do_GET
# End class _MirrorRequestHandler

class HttpMirror:
    '''
    A plain-HTTP mirror on 127.0.0.1 serving a dict of relative path -> bytes.
    Use as a context manager; base_url is valid inside the block.
    '''

    def __init__(self, contents: Dict[str, bytes], endless_paths: tuple = ()):
        self.server = ThreadingHTTPServer(('127.0.0.1', 0), _MirrorRequestHandler)
        self.server.daemon_threads = True
        self.server.contents = dict(contents)
        self.server.endless_paths = set(endless_paths)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        return 'http://127.0.0.1:{}'.format(self.server.server_address[1])

    def __enter__(self) -> 'HttpMirror':
        self.thread.start()
        return self

    def __exit__(self, *exc_info):
        self.server.shutdown()
        self.server.server_close()
# End class HttpMirror
