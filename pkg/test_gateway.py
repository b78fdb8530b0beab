import datetime
from http import HTTPStatus
import http.client
import ipaddress
import json

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID
import requests

import consts
from errors import (BindFailure, CacheCorrupted, InsufficientMirrors, InvalidPolicy,
                    NotYetInitialized, StaleSeal, TsrError, UnknownPackage, UnknownRepository,
                    UpstreamSignatureInvalid)
import file_manip
import gateway
from gateway import Gateway
import keystore
import metadata_index
from package import ScriptKind
from repository import CacheKind, RepositoryRegistry
from service_config import ServiceConfig
from testing_harness import (CHECK, ExpectError, FixtureSigner, MakePackage, MakeTransport,
                             MirrorBehaviour, MirrorContents, PolicyYaml, RunTests, UserScript,
                             kTestSealingKey)

def MakeConfig(tmp_path, tls_cert: str = None, tls_key: str = None, port: int = 0) -> ServiceConfig:
    return ServiceConfig(listen_host='127.0.0.1', listen_port=port, tls_cert=tls_cert,
                         tls_key=tls_key, state_dir=str(tmp_path / 'state'),
                         cache_dir=str(tmp_path / 'cache'), sealing_key_source='TSR_TEST_KEY',
                         refresh_ttl=300, signing_algorithm=consts.kAlgorithmEd25519,
                         request_timeout_ms=2000, download_workers=2,
                         max_index_bytes=consts.kDefaultMaxIndexBytes, log_level='debug',
                         log_file='test.log', allow_plain_http=(tls_cert is None),
                         allow_insecure_mirrors=False)
# End MakeConfig

def MakeGateway(tmp_path):
    contents = MirrorContents([MakePackage('redis', scripts={ScriptKind.kPreInstall : UserScript('redis')}),
                               MakePackage('plain')])
    transport, urls = MakeTransport([MirrorBehaviour.kFresh] * 3, contents)
    settings = gateway.MakeRepositorySettings(MakeConfig(tmp_path), kTestSealingKey, transport)
    return Gateway(RepositoryRegistry(settings)), transport, urls
# End MakeGateway

def Deploy(gw: Gateway, urls: list, signer=None) -> str:
    response = gw.Handle('POST', '/v1/policies', PolicyYaml(urls, signer).encode('utf-8'),
                         'application/yaml; charset=utf-8')
    CHECK(response.status == HTTPStatus.CREATED)
    return json.loads(response.body)['repository_id']
# End Deploy

def Body(response) -> dict:
    return json.loads(response.body)

def IndexPath(repository_id: str, architecture: str = 'x86_64') -> str:
    return '/v1/repos/{}/{}/APKINDEX.tar.gz'.format(repository_id, architecture)

# ============================== Request logic ==============================

def TestStatusForError():
    for error, status in ((InvalidPolicy(['x']), 400), (UnknownRepository('x'), 404),
                          (UnknownPackage('x'), 404), (NotYetInitialized('x'), 503),
                          (StaleSeal('x'), 503), (CacheCorrupted('x'), 503),
                          (InsufficientMirrors('x'), 502), (UpstreamSignatureInvalid('x'), 502),
                          (TsrError('x'), 500), (ValueError('x'), 500)):
        CHECK(gateway.StatusForError(error) == status)
# End TestStatusForError

def TestRouting(tmp_path):
    gw, _, _ = MakeGateway(tmp_path)
    repository_id = 'a' * 32
    for method, path, handler, segments in (
            ('GET', '/healthz', gw.Health, []),
            ('GET', '/v1/attestation', gw.Attestation, []),
            ('POST', '/v1/policies', gw.DeployPolicy, []),
            ('GET', IndexPath(repository_id), gw.GetIndex, [repository_id, 'x86_64']),
            ('GET', '/v1/repos/{}/x86_64/redis-1.0-r0.apk'.format(repository_id), gw.GetPackage,
             [repository_id, 'x86_64', 'redis-1.0-r0.apk']),
            ('GET', '/v1/repos/{}/key'.format(repository_id), gw.GetKey, [repository_id]),
            ('GET', '/v1/repos/{}/status?verbose=1'.format(repository_id), gw.Status, [repository_id]),
            ('GET', '/v1/repos/{}/config'.format(repository_id), gw.PredictedConfig, [repository_id]),
            ('POST', '/v1/repos/{}/refresh'.format(repository_id), gw.Refresh, [repository_id])):
        CHECK(gw.Route(method, path) == (handler, segments))
    for method, path in (('GET', '/'), ('GET', '/v1/repos//key'), ('PUT', '/v1/policies'),
                         ('GET', '/v1/policies'), ('POST', '/v1/repos/{}/key'.format(repository_id))):
        CHECK(gw.Route(method, path) == (None, None))
        CHECK(gw.Handle(method, path).status == HTTPStatus.NOT_FOUND)
# End TestRouting

def TestDeployAndServe(tmp_path):
    gw, transport, urls = MakeGateway(tmp_path)
    repository_id = Deploy(gw, urls)
    repo = gw.registry.Get(repository_id)
    key = gw.Handle('GET', '/v1/repos/{}/key'.format(repository_id))
    CHECK(key.status == HTTPStatus.OK and key.content_type == 'application/x-pem-file')
    CHECK(keystore.PublicKey.Load(key.body) == repo.public_key)
    # The first index request refreshes the repository
    index = gw.Handle('GET', IndexPath(repository_id))
    CHECK(index.status == HTTPStatus.OK)
    parsed = metadata_index.ParseIndex(index.body, [repo.public_key])
    CHECK([entry.name for entry in parsed.entries] == ['plain', 'redis'])
    index_gets = len(transport.IndexGets())
    CHECK(gw.Handle('GET', IndexPath(repository_id)).body == index.body)
    CHECK(len(transport.IndexGets()) == index_gets)
    apk = gw.Handle('GET', '/v1/repos/{}/x86_64/redis-1.0-r0.apk'.format(repository_id))
    CHECK(apk.status == HTTPStatus.OK and apk.body == repo.GetPackage('redis', '1.0-r0'))
    status = Body(gw.Handle('GET', '/v1/repos/{}/status'.format(repository_id)))
    CHECK(status['repository_id'] == repository_id and status['packages_indexed'] == 2)
    config = Body(gw.Handle('GET', '/v1/repos/{}/config'.format(repository_id)))
    CHECK(config['uids']['redis'] == 100)
    report = Body(gw.Handle('POST', '/v1/repos/{}/refresh'.format(repository_id)))
    CHECK(report['packages_sanitized'] == 0 and report['packages_failed'] == {})
    health = Body(gw.Handle('GET', '/healthz'))
    CHECK(health == {'status' : 'ok', 'repositories' : 1, 'unavailable' : []})
    CHECK(Body(gw.Handle('GET', '/v1/attestation'))['mode'] == 'simulated')
# End TestDeployAndServe

def TestDeployRejections(tmp_path):
    gw, _, urls = MakeGateway(tmp_path)
    response = gw.Handle('POST', '/v1/policies', PolicyYaml(urls).encode('utf-8'), 'text/plain')
    CHECK(response.status == HTTPStatus.UNSUPPORTED_MEDIA_TYPE)
    response = gw.Handle('POST', '/v1/policies', b'mirrors: [http://plain.example]\n',
                         'application/yaml')
    CHECK(response.status == HTTPStatus.BAD_REQUEST)
    body = Body(response)
    CHECK(body['error'] == 'InvalidPolicy')
    CHECK('architecture: missing' in body['diagnostics'])
    CHECK(gw.registry.ListRepositoryIds() == [])
    # JSON policies are accepted too
    document = {'mirrors' : urls, 'signers_keys' : [FixtureSigner().public_key.ToPem()],
                'architecture' : 'x86_64'}
    response = gw.Handle('POST', '/v1/policies', json.dumps(document).encode('utf-8'),
                         'application/json')
    CHECK(response.status == HTTPStatus.CREATED)
# End TestDeployRejections

def TestErrorResponses(tmp_path):
    gw, _, urls = MakeGateway(tmp_path)
    repository_id = Deploy(gw, urls)
    for path, status, error in (
            (IndexPath('b' * 32), 404, 'UnknownRepository'),
            (IndexPath(repository_id, 'aarch64'), 404, 'UnknownPackage'),
            ('/v1/repos/{}/config'.format(repository_id), 503, 'NotYetInitialized'),
            ('/v1/repos/{}/x86_64/redis-1.0-r0.apk'.format(repository_id), 503, 'NotYetInitialized'),
            ('/v1/repos/{}/x86_64/notes.txt'.format(repository_id), 404, 'UnknownPackage')):
        response = gw.Handle('GET', path)
        CHECK(response.status == status)
        CHECK(Body(response)['error'] == error)
    gw.Handle('GET', IndexPath(repository_id))
    response = gw.Handle('GET', '/v1/repos/{}/x86_64/ghost-1.0-r0.apk'.format(repository_id))
    CHECK(response.status == HTTPStatus.NOT_FOUND)
# End TestErrorResponses

def TestUntrustedUpstreamIsBadGateway(tmp_path):
    gw, _, urls = MakeGateway(tmp_path)
    repository_id = Deploy(gw, urls, FixtureSigner('someone-else'))
    response = gw.Handle('GET', IndexPath(repository_id))
    CHECK(response.status == HTTPStatus.BAD_GATEWAY)
    CHECK(Body(response)['error'] == 'UpstreamSignatureInvalid')
# End TestUntrustedUpstreamIsBadGateway

def TestPreviousIndexServedWhenRefreshFails(tmp_path):
    gw, transport, urls = MakeGateway(tmp_path)
    repository_id = Deploy(gw, urls)
    first = gw.Handle('GET', IndexPath(repository_id))
    for mirror in transport.mirror_map.values():
        mirror.behaviour = MirrorBehaviour.kDown
    gw.registry.Get(repository_id).last_refresh -= 1000
    second = gw.Handle('GET', IndexPath(repository_id))
    CHECK(second.status == HTTPStatus.OK and second.body == first.body)
    # An explicit refresh reports the failure
    response = gw.Handle('POST', '/v1/repos/{}/refresh'.format(repository_id))
    CHECK(response.status == HTTPStatus.BAD_GATEWAY)
    CHECK(Body(response)['error'] == 'InsufficientMirrors')
# End TestPreviousIndexServedWhenRefreshFails

def TestNoIndexWhenMirrorsDown(tmp_path):
    gw, transport, urls = MakeGateway(tmp_path)
    for mirror in transport.mirror_map.values():
        mirror.behaviour = MirrorBehaviour.kDown
    repository_id = Deploy(gw, urls)
    CHECK(gw.Handle('GET', IndexPath(repository_id)).status == HTTPStatus.BAD_GATEWAY)
# End TestNoIndexWhenMirrorsDown

def TestCorruptedCacheIsUnavailable(tmp_path):
    gw, _, urls = MakeGateway(tmp_path)
    repository_id = Deploy(gw, urls)
    gw.Handle('GET', IndexPath(repository_id))
    repo = gw.registry.Get(repository_id)
    file_manip.WriteBytesAtomically(b'tampered', repo.CachePath(CacheKind.kSanitized, 'plain-1.0-r0.apk'))
    response = gw.Handle('GET', '/v1/repos/{}/x86_64/plain-1.0-r0.apk'.format(repository_id))
    CHECK(response.status == HTTPStatus.SERVICE_UNAVAILABLE)
    CHECK(Body(response)['error'] == 'CacheCorrupted')
    CHECK(gw.Handle('POST', '/v1/repos/{}/refresh'.format(repository_id)).status == HTTPStatus.OK)
    response = gw.Handle('GET', '/v1/repos/{}/x86_64/plain-1.0-r0.apk'.format(repository_id))
    CHECK(response.status == HTTPStatus.OK)
# End TestCorruptedCacheIsUnavailable

def TestUnexpectedErrorsAreHidden(tmp_path):
    gw, _, _ = MakeGateway(tmp_path)

    def Explode():
        raise KeyError('secret detail')

    gw.Health = Explode
    response = gw.Handle('GET', '/healthz')
    CHECK(response.status == HTTPStatus.INTERNAL_SERVER_ERROR)
    CHECK(b'secret detail' not in response.body)
# End TestUnexpectedErrorsAreHidden

# ================================ HTTP server ================================

def TestLiveServer(tmp_path):
    gw, _, urls = MakeGateway(tmp_path)
    server, thread = gateway.StartInBackground(MakeConfig(tmp_path), gw)
    try:
        base = 'http://127.0.0.1:{}'.format(server.server_address[1])
        CHECK(requests.get(base + '/healthz', timeout=5).json()['status'] == 'ok')
        response = requests.post(base + '/v1/policies', data=PolicyYaml(urls).encode('utf-8'),
                                 headers={'Content-Type' : 'application/yaml'}, timeout=5)
        CHECK(response.status_code == 201)
        repository_id = response.json()['repository_id']
        index = requests.get(base + IndexPath(repository_id), timeout=10)
        CHECK(index.status_code == 200)
        CHECK(index.headers['Content-Type'] == 'application/octet-stream')
        head = requests.head(base + IndexPath(repository_id), timeout=5)
        CHECK(head.status_code == 200 and head.content == b'')
        CHECK(int(head.headers['Content-Length']) == len(index.content))
        apk = requests.get(base + '/v1/repos/{}/x86_64/plain-1.0-r0.apk'.format(repository_id), timeout=5)
        CHECK(apk.content == gw.registry.Get(repository_id).GetPackage('plain', '1.0-r0'))
        CHECK(requests.get(base + '/nowhere', timeout=5).status_code == 404)
        connection = http.client.HTTPConnection('127.0.0.1', server.server_address[1], timeout=5)
        connection.putrequest('POST', '/v1/policies')
        connection.putheader('Content-Length', str(gateway.kMaxPolicyBytes + 1))
        connection.endheaders()
        CHECK(connection.getresponse().status == HTTPStatus.REQUEST_ENTITY_TOO_LARGE)
        connection.close()
    finally:
        server.shutdown()
        server.server_close()
    thread.join(timeout=5)
# End TestLiveServer

def TestBindFailure(tmp_path):
    gw, _, _ = MakeGateway(tmp_path)
    server, _ = gateway.StartInBackground(MakeConfig(tmp_path), gw)
    try:
        ExpectError(BindFailure, gateway.MakeServer,
                    MakeConfig(tmp_path, port=server.server_address[1]), gw)
    finally:
        server.shutdown()
        server.server_close()
# End TestBindFailure

def WriteSelfSignedCertificate(tmp_path) -> tuple:
    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, 'tsr-test')])
    now = datetime.datetime.now(datetime.timezone.utc)
    certificate = (x509.CertificateBuilder().subject_name(name).issuer_name(name)
                   .public_key(key.public_key()).serial_number(x509.random_serial_number())
                   .not_valid_before(now - datetime.timedelta(minutes=1))
                   .not_valid_after(now + datetime.timedelta(days=1))
                   .add_extension(x509.SubjectAlternativeName(
                           [x509.IPAddress(ipaddress.ip_address('127.0.0.1'))]), critical=False)
                   .sign(key, hashes.SHA256()))
    cert_path, key_path = str(tmp_path / 'cert.pem'), str(tmp_path / 'key.pem')
    file_manip.WriteBytesAtomically(certificate.public_bytes(serialization.Encoding.PEM), cert_path)
    file_manip.WriteBytesAtomically(key.private_bytes(serialization.Encoding.PEM,
                                                      serialization.PrivateFormat.PKCS8,
                                                      serialization.NoEncryption()), key_path)
    return cert_path, key_path
# End WriteSelfSignedCertificate

def TestTlsServer(tmp_path):
    gw, _, _ = MakeGateway(tmp_path)
    cert_path, key_path = WriteSelfSignedCertificate(tmp_path)
    config = MakeConfig(tmp_path, cert_path, key_path)
    CHECK(config.tls_enabled)
    server, _ = gateway.StartInBackground(config, gw)
    try:
        base = '127.0.0.1:{}'.format(server.server_address[1])
        response = requests.get('https://' + base + '/healthz', verify=False, timeout=5)
        CHECK(response.status_code == 200)
        ExpectError(requests.exceptions.ConnectionError, requests.get, 'http://' + base + '/healthz',
                    timeout=5)
    finally:
        server.shutdown()
        server.server_close()
# End TestTlsServer

def main():
    RunTests(globals())

if (__name__ == '__main__'):
    main()
