'''
HTTP(S) gateway: exposes every repository as a mirror-shaped tree plus a small JSON admin API.

    POST /v1/policies                                deploy a policy (YAML or JSON body)
    GET  /v1/repos/{id}/{arch}/APKINDEX.tar.gz       sanitized, repository-signed index
    GET  /v1/repos/{id}/{arch}/{name}-{version}.apk  sanitized package
    GET  /v1/repos/{id}/key                          repository public key (PEM)
    POST /v1/repos/{id}/refresh                      refresh now, returns the refresh report
    GET  /v1/repos/{id}/status                       status JSON
    GET  /v1/repos/{id}/config                       predicted passwd/group/shadow JSON
    GET  /v1/attestation                             attestation claim
    GET  /healthz

The repository id is the only credential. Package bodies are verified against sealed state
before the first byte is written.
'''

from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
import json
import signal
import ssl
import threading
from typing import Tuple

import consts
import errors
from errors import (BindFailure, CacheCorrupted, InvalidPolicy, NotYetInitialized,
                    QuorumUnreachable, StaleSeal, TsrError, UnknownPackage, UnknownRepository,
                    UpstreamSignatureInvalid)
import keystore
import logger
from repository import RepositoryRegistry, RepositorySettings
import service_config
from service_config import ServiceConfig
import simple_parser
from type_checker import CheckType

kMaxPolicyBytes = 1024 * 1024
kPolicyContentTypes = ('application/yaml', 'application/x-yaml', 'text/yaml', 'application/json')

kJsonContentType = 'application/json'
kPackageContentType = 'application/octet-stream'
kPemContentType = 'application/x-pem-file'

# Exception type -> HTTP status, most specific first
kErrorStatuses = [
        (InvalidPolicy, HTTPStatus.BAD_REQUEST),
        (UnknownRepository, HTTPStatus.NOT_FOUND),
        (UnknownPackage, HTTPStatus.NOT_FOUND),
        (NotYetInitialized, HTTPStatus.SERVICE_UNAVAILABLE),
        (StaleSeal, HTTPStatus.SERVICE_UNAVAILABLE),
        (CacheCorrupted, HTTPStatus.SERVICE_UNAVAILABLE),
        (QuorumUnreachable, HTTPStatus.BAD_GATEWAY),
        (UpstreamSignatureInvalid, HTTPStatus.BAD_GATEWAY),
        (TsrError, HTTPStatus.INTERNAL_SERVER_ERROR)]

def StatusForError(e: Exception) -> HTTPStatus:
    for error_type, status in kErrorStatuses:
        if (isinstance(e, error_type)):
            return status
    return HTTPStatus.INTERNAL_SERVER_ERROR
# End StatusForError

def MakeRepositorySettings(config: ServiceConfig, sealing_key: bytes,
                           transport=None) -> RepositorySettings:
    CheckType(config, 'config', ServiceConfig)
    return RepositorySettings(state_dir=config.state_dir, cache_dir=config.cache_dir,
                              sealing_key=sealing_key,
                              signing_algorithm=config.signing_algorithm,
                              request_timeout_ms=config.request_timeout_ms,
                              max_index_bytes=config.max_index_bytes,
                              download_workers=config.download_workers,
                              refresh_ttl=config.refresh_ttl,
                              allow_insecure_mirrors=config.allow_insecure_mirrors,
                              transport=transport)
# End MakeRepositorySettings

class Response:
    '''
    Member variables:
     - status: HTTPStatus
     - body: bytes
     - content_type: str
    '''

    def __init__(self, status: HTTPStatus, body: bytes, content_type: str):
        self.status = status
        self.body = body
        self.content_type = content_type

    @staticmethod
    def Json(document, status: HTTPStatus = HTTPStatus.OK) -> 'Response':
        body = (json.dumps(document, indent=2, sort_keys=True) + '\n').encode('utf-8')
        return Response(status, body, kJsonContentType)

    @staticmethod
    def Error(e: Exception) -> 'Response':
        document = {'error' : type(e).__name__, 'message' : str(e)}
        if (isinstance(e, InvalidPolicy)):
            document['diagnostics'] = e.diagnostics
        return Response.Json(document, StatusForError(e))
    # End Error
# End class Response

class Gateway:
    '''
    Routing and request logic, independent of the HTTP plumbing.

    Member variables:
     - registry: RepositoryRegistry
    '''

    def __init__(self, registry: RepositoryRegistry):
        CheckType(registry, 'registry', RepositoryRegistry)
        self.registry = registry

    # ------------------------------ Handlers ------------------------------

    def Health(self) -> Response:
        return Response.Json({'status' : 'ok',
                              'repositories' : len(self.registry.ListRepositoryIds()),
                              'unavailable' : sorted(self.registry.failures)})

    def Attestation(self) -> Response:
        return Response.Json(keystore.GetAttestationClaim())

    def DeployPolicy(self, body: bytes, content_type: str) -> Response:
        media_type = content_type.split(';')[0].strip().lower()
        if ((media_type != '') and (media_type not in kPolicyContentTypes)):
            return Response.Json({'error' : 'UnsupportedMediaType',
                                  'message' : 'unsupported content type "{}"'.format(media_type)},
                                 HTTPStatus.UNSUPPORTED_MEDIA_TYPE)
        repository_id, public_key = self.registry.DeployPolicy(body)
        return Response.Json({'repository_id' : repository_id,
                              'public_key_pem' : public_key.ToPem()}, HTTPStatus.CREATED)
    # End DeployPolicy

    # A due refresh that fails still serves the previous index, if there is one
    def GetIndex(self, repository_id: str, architecture: str) -> Response:
        repo = self.registry.Get(repository_id)
        if (architecture != repo.policy.architecture):
            errors.Error(UnknownPackage('repository {} serves {}, not {}'.format(
                    repository_id, repo.policy.architecture, architecture)))
        try:
            self.registry.RefreshIfDue(repository_id)
        except TsrError as e:
            if (repo.sanitized_index_bytes is None):
                raise
            logger.Log('Warning: repository {}: refresh failed, serving previous index: {}'
                       .format(repository_id, e))
        return Response(HTTPStatus.OK, repo.GetIndex(architecture), kPackageContentType)
    # End GetIndex

    def GetPackage(self, repository_id: str, architecture: str, filename: str) -> Response:
        if (not filename.endswith('.apk')):
            errors.Error(UnknownPackage('no such file: {}'.format(filename)))
        repo = self.registry.Get(repository_id)
        return Response(HTTPStatus.OK, repo.GetPackageByFilename(filename, architecture),
                        kPackageContentType)
    # End GetPackage

    def GetKey(self, repository_id: str) -> Response:
        repo = self.registry.Get(repository_id)
        return Response(HTTPStatus.OK, repo.public_key.ToPem().encode('ascii'), kPemContentType)

    def Refresh(self, repository_id: str) -> Response:
        return Response.Json(self.registry.Refresh(repository_id).ToJson())

    def Status(self, repository_id: str) -> Response:
        return Response.Json(self.registry.Get(repository_id).Status())

    def PredictedConfig(self, repository_id: str) -> Response:
        return Response.Json(self.registry.Get(repository_id).ExportPredictedConfig())

    # ------------------------------ Routing ------------------------------

    # Returns (handler, captured path segments) or (None, None)
    def Route(self, method: str, path: str):
        path = path.split('?', 1)[0]
        if (method == 'GET'):
            routes = [(consts.kRouteHealth, self.Health),
                      (consts.kRouteAttestation, self.Attestation),
                      (consts.kRouteIndex.format('{}', '{}'), self.GetIndex),
                      (consts.kRouteKey.format('{}'), self.GetKey),
                      (consts.kRouteStatus.format('{}'), self.Status),
                      (consts.kRouteConfig.format('{}'), self.PredictedConfig),
                      (consts.kRoutePackage.format('{}', '{}', '{}'), self.GetPackage)]
        elif (method == 'POST'):
            routes = [(consts.kRouteDeployPolicy, self.DeployPolicy),
                      (consts.kRouteRefresh.format('{}'), self.Refresh)]
        else:
            return None, None
        for route_template, handler in routes:
            if (route_template == path):
                return handler, []
            if ('{}' in route_template):
                segments = simple_parser.MatchRoute(path, route_template)
                if (segments is not None):
                    return handler, segments
        return None, None
    # End Route

    def Handle(self, method: str, path: str, body: bytes = b'', content_type: str = '') -> Response:
        handler, segments = self.Route(method, path)
        if (handler is None):
            return Response.Json({'error' : 'NotFound', 'message' : 'no route for {} {}'.format(
                    method, path)}, HTTPStatus.NOT_FOUND)
        try:
            if (handler == self.DeployPolicy):
                return self.DeployPolicy(body, content_type)
            return handler(*segments)
        except TsrError as e:
            return Response.Error(e)
        except Exception as e:
            logger.Log('Error: unhandled {} on {} {}: {}'.format(type(e).__name__, method, path, e))
            return Response.Json({'error' : 'InternalError', 'message' : 'internal error'},
                                 HTTPStatus.INTERNAL_SERVER_ERROR)
    # End Handle
# End class Gateway

class TsrRequestHandler(BaseHTTPRequestHandler):
    protocol_version = 'HTTP/1.1'
    server_version = 'TSR/1'

    def log_message(self, format, *args):
        logger.Log('Debug: {} {}'.format(self.address_string(), format % args))

    def _Send(self, response: Response):
        self.send_response(response.status)
        self.send_header('Content-Type', response.content_type)
        self.send_header('Content-Length', str(len(response.body)))
        self.end_headers()
        if (self.command != 'HEAD'):
            self.wfile.write(response.body)
    # End _Send

    def _ReadBody(self) -> bytes or None:
        length_header = self.headers.get('Content-Length', '0')
        if (not simple_parser.IsInt(length_header) or (int(length_header) < 0)):
            self._Send(Response.Json({'error' : 'BadRequest', 'message' : 'bad Content-Length'},
                                     HTTPStatus.BAD_REQUEST))
            return None
        if (int(length_header) > kMaxPolicyBytes):
            self._Send(Response.Json({'error' : 'PayloadTooLarge',
                                      'message' : 'body exceeds {} bytes'.format(kMaxPolicyBytes)},
                                     HTTPStatus.REQUEST_ENTITY_TOO_LARGE))
            self.close_connection = True
            return None
        return self.rfile.read(int(length_header))
    # End _ReadBody

    def do_GET(self):
        self._Send(self.server.gateway.Handle('GET', self.path))

    def do_HEAD(self):
        self._Send(self.server.gateway.Handle('GET', self.path))

    def do_POST(self):
        body = self._ReadBody()
        if (body is None):
            return
        self._Send(self.server.gateway.Handle('POST', self.path, body,
                                              self.headers.get('Content-Type', '')))
    # End do_POST
# End class TsrRequestHandler

class TsrServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: Tuple[str, int], gateway: Gateway):
        super().__init__(address, TsrRequestHandler)
        self.gateway = gateway
# End class TsrServer

def MakeServer(config: ServiceConfig, gateway: Gateway) -> TsrServer:
    CheckType(config, 'config', ServiceConfig)
    CheckType(gateway, 'gateway', Gateway)
    try:
        server = TsrServer((config.listen_host, config.listen_port), gateway)
    except OSError as e:
        errors.Error(BindFailure('cannot listen on {}:{}: {}'.format(
                config.listen_host, config.listen_port, e)))
    if (config.tls_enabled):
        context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        context.minimum_version = ssl.TLSVersion.TLSv1_2
        context.load_cert_chain(config.tls_cert, config.tls_key)
        server.socket = context.wrap_socket(server.socket, server_side=True)
    else:
        logger.Log('Warning: serving plain HTTP; TLS is disabled')
    return server
# End MakeServer

# Runs the server on a background thread; returns (server, thread). Used by tests and embedding.
def StartInBackground(config: ServiceConfig, gateway: Gateway) -> Tuple[TsrServer, threading.Thread]:
    server = MakeServer(config, gateway)
    thread = threading.Thread(target=server.serve_forever, name='tsr-gateway', daemon=True)
    thread.start()
    return server, thread
# End StartInBackground

# Restores sealed state, serves until SIGINT/SIGTERM, then flushes sealed state
def Serve(config: ServiceConfig, transport=None):
    CheckType(config, 'config', ServiceConfig)
    sealing_key = service_config.LoadSealingKey(config.sealing_key_source)
    registry = RepositoryRegistry(MakeRepositorySettings(config, sealing_key, transport))
    failures = registry.Restore()
    for repository_id, failure in failures.items():
        logger.Log('Warning: repository {} unavailable: {}'.format(repository_id, failure))
    server = MakeServer(config, Gateway(registry))

    def Shutdown(signal_number, frame):
        logger.Log('Info: received signal {}, shutting down'.format(signal_number))
        threading.Thread(target=server.shutdown, daemon=True).start()
    # End Shutdown

    signal.signal(signal.SIGTERM, Shutdown)
    signal.signal(signal.SIGINT, Shutdown)
    logger.Log('Info: serving {} repositories on {}://{}:{}'.format(
            len(registry.ListRepositoryIds()), 'https' if config.tls_enabled else 'http',
            config.listen_host, config.listen_port))
    try:
        server.serve_forever()
    finally:
        server.server_close()
        registry.Flush()
        logger.Log('Info: sealed state flushed, gateway stopped')
# End Serve
