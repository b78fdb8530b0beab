'''
Service configuration.

The config file uses "Key phrase: value" lines, e.g.:

    # TSR service config
    Listen address: 127.0.0.1:8443
    State directory: /var/lib/tsr/state
    Sealing key source: /etc/tsr/sealing.key

Values come from, highest precedence first:
 1. command-line flags: --ListenAddress=0.0.0.0:8443
 2. the config file
 3. environment variables: TSR_LISTENADDRESS
 4. kDefaultConfigValues
'''

from collections import OrderedDict
from dataclasses import dataclass
import os
import os.path
import re

import consts
import errors
from errors import InvalidConfig
import file_manip
import helper
import logger
import simple_parser
from type_checker import CheckType

kDefaultConfigFilename = 'tsr.config'
kEnvironmentPrefix = 'TSR_'
kFlagPattern = re.compile(r'^--([A-Za-z]+)=(.*)$')
kSealingKeyHexPattern = re.compile(r'^[0-9a-fA-F]{64}$')

kServiceConfigTemplate = \
'''# TSR service config

# Note: all blank lines and lines beginning with '#' are ignored
# Values after the colons may be modified, values before the
# colons are keyphrases and should be kept as-is.

# Network
Listen address: {}
TLS certificate: {}
TLS key: {}

# Persistent state; the sealing key source is a key file path or an environment variable name
State directory: {}
Cache directory: {}
Sealing key source: {}

# Repository behaviour
Refresh TTL seconds: {}
Signing algorithm: {}
Request timeout ms: {}
Download workers: {}
Max index bytes: {}

# Logging
Log level: {}
Log file: {}

# Test setups only
Allow plain HTTP: {}
Allow insecure mirrors: {}'''

# Map of keyphrases from config file to keywords used in the config_values dictionary
kConfigKeyphraseToKeywordOrderedMap = OrderedDict([
        ('Listen address', 'ListenAddress'),
        ('TLS certificate', 'TlsCertificate'),
        ('TLS key', 'TlsKey'),
        ('State directory', 'StateDirectory'),
        ('Cache directory', 'CacheDirectory'),
        ('Sealing key source', 'SealingKeySource'),
        ('Refresh TTL seconds', 'RefreshTtl'),
        ('Signing algorithm', 'SigningAlgorithm'),
        ('Request timeout ms', 'RequestTimeoutMs'),
        ('Download workers', 'DownloadWorkers'),
        ('Max index bytes', 'MaxIndexBytes'),
        ('Log level', 'LogLevel'),
        ('Log file', 'LogFile'),
        ('Allow plain HTTP', 'AllowPlainHttp'),
        ('Allow insecure mirrors', 'AllowInsecureMirrors')])
kKeywords = list(kConfigKeyphraseToKeywordOrderedMap.values())

kIntKeywords = ('RefreshTtl', 'RequestTimeoutMs', 'DownloadWorkers', 'MaxIndexBytes')
kBoolKeywords = ('AllowPlainHttp', 'AllowInsecureMirrors')

# Note: required values do not have a default value
kDefaultConfigValues = {
        'ListenAddress' : consts.kDefaultListenAddress,
        'TlsCertificate' : '',
        'TlsKey' : '',
        'StateDirectory' : 'state',
        'CacheDirectory' : 'cache',
        # 'SealingKeySource' : None,
        'RefreshTtl' : consts.kDefaultRefreshTtlSeconds,
        'SigningAlgorithm' : consts.kAlgorithmRsa2048,
        'RequestTimeoutMs' : consts.kDefaultRequestTimeoutMs,
        'DownloadWorkers' : consts.kDefaultDownloadWorkers,
        'MaxIndexBytes' : consts.kDefaultMaxIndexBytes,
        'LogLevel' : 'info',
        'LogFile' : logger.kDefaultLogFilename,
        'AllowPlainHttp' : False,
        'AllowInsecureMirrors' : False}

kRequiredConfigKeywords = ['SealingKeySource']

@dataclass(frozen=True)
class ServiceConfig:
    '''
    Member variables:
     - listen_host: str, listen_port: int
     - tls_cert, tls_key: str or None
     - state_dir, cache_dir: str
     - sealing_key_source: str (key file path or environment variable name)
     - refresh_ttl: int (seconds)
     - signing_algorithm: str
     - request_timeout_ms, download_workers, max_index_bytes: int
     - log_level: str, log_file: str
     - allow_plain_http, allow_insecure_mirrors: bool
    '''
    listen_host: str
    listen_port: int
    tls_cert: str
    tls_key: str
    state_dir: str
    cache_dir: str
    sealing_key_source: str
    refresh_ttl: int
    signing_algorithm: str
    request_timeout_ms: int
    download_workers: int
    max_index_bytes: int
    log_level: str
    log_file: str
    allow_plain_http: bool
    allow_insecure_mirrors: bool

    @property
    def tls_enabled(self) -> bool:
        return (self.tls_cert is not None) and (self.tls_key is not None)
# End class ServiceConfig

# Converts a raw string value to the type its keyword expects
def _ConvertValue(keyword: str, value: str, where: str):
    if (keyword in kIntKeywords):
        if (not simple_parser.IsInt(value) or (int(value) <= 0)):
            errors.Error(InvalidConfig('{}: {} must be a positive integer, got "{}"'.format(
                    where, keyword, value)))
        return int(value)
    if (keyword in kBoolKeywords):
        try:
            return simple_parser.ParseBool(value)
        except ValueError as e:
            errors.Error(InvalidConfig('{}: {}: {}'.format(where, keyword, e)))
    return value
# End _ConvertValue

# Returns a (keyword, value) pair, or None for blank and comment lines
def ParseServiceConfigLine(line: str, where: str = 'config') -> tuple or None:
    CheckType(line, 'line', str)
    try:
        parse_result = simple_parser.ParseKeyValueLine(line)
    except ValueError as e:
        errors.Error(InvalidConfig('{}: {}'.format(where, e)))
    if (parse_result is None):
        return None
    keyphrase, value = parse_result
    if (keyphrase not in kConfigKeyphraseToKeywordOrderedMap):
        errors.Error(InvalidConfig('{}: unknown key phrase "{}"'.format(where, keyphrase)))
    keyword = kConfigKeyphraseToKeywordOrderedMap[keyphrase]
    return keyword, _ConvertValue(keyword, value, where)
# End ParseServiceConfigLine

def ReadConfigFile(config_path: str) -> dict:
    CheckType(config_path, 'config_path', str)
    if (not os.path.isfile(config_path)):
        errors.Error(InvalidConfig('config file {} does not exist'.format(config_path)))
    config_values = {}
    for line_number, line in enumerate(helper.ReadFile(config_path), start=1):
        parse_result = ParseServiceConfigLine(line, '{}:{}'.format(config_path, line_number))
        if (parse_result):
            keyword, value = parse_result
            config_values[keyword] = value
    return config_values
# End ReadConfigFile

def ReadEnvironment(environ: dict) -> dict:
    config_values = {}
    for keyword in kKeywords:
        variable = kEnvironmentPrefix + keyword.upper()
        if (variable in environ):
            config_values[keyword] = _ConvertValue(keyword, environ[variable], variable)
    return config_values
# End ReadEnvironment

# Flags look like "--ListenAddress=0.0.0.0:8443". Returns (config_values, remaining arguments).
def SplitConfigFlags(arguments: list) -> tuple:
    config_values, remaining = {}, []
    for argument in arguments:
        match = kFlagPattern.match(argument)
        if (match and (match.group(1) in kKeywords)):
            config_values[match.group(1)] = _ConvertValue(match.group(1), match.group(2),
                                                          'flag ' + argument)
        else:
            remaining.append(argument)
    return config_values, remaining
# End SplitConfigFlags

def _ParseListenAddress(address: str) -> tuple:
    host, separator, port = address.rpartition(':')
    if ((separator == '') or (host == '') or not simple_parser.IsInt(port)
            or not (0 <= int(port) <= 65535)):
        errors.Error(InvalidConfig('listen address must be host:port, got "{}"'.format(address)))
    return host, int(port)
# End _ParseListenAddress

# Update and Validate config values:
# 1. Verifies that all required config values are present.
# 2. Checks enumerated values and the TLS pair.
# 3. Creates missing state and cache directories, raising if they are not writable.
def ValidateConfigValues(config_values: dict) -> ServiceConfig:
    for keyword in kRequiredConfigKeywords:
        if (config_values.get(keyword) in (None, '')):
            errors.Error(InvalidConfig('missing required config value: "{}"'.format(keyword)))
    if (config_values['LogLevel'] not in logger.kLogLevels):
        errors.Error(InvalidConfig('unknown log level "{}"'.format(config_values['LogLevel'])))
    if (config_values['SigningAlgorithm'] not in consts.kAlgorithmIds):
        errors.Error(InvalidConfig('unknown signing algorithm "{}"'.format(
                config_values['SigningAlgorithm'])))
    tls_cert = config_values['TlsCertificate'] or None
    tls_key = config_values['TlsKey'] or None
    if ((tls_cert is None) != (tls_key is None)):
        errors.Error(InvalidConfig('TLS certificate and TLS key must be given together'))
    if ((tls_cert is None) and not config_values['AllowPlainHttp']):
        errors.Error(InvalidConfig('TLS is required; set "Allow plain HTTP: True" only for tests'))
    for keyword in ('StateDirectory', 'CacheDirectory'):
        if (not file_manip.IsDirectoryWritable(config_values[keyword])):
            errors.Error(InvalidConfig('{} "{}" is not writable'.format(keyword,
                                                                       config_values[keyword])))
    listen_host, listen_port = _ParseListenAddress(config_values['ListenAddress'])
    return ServiceConfig(listen_host=listen_host, listen_port=listen_port,
                         tls_cert=tls_cert, tls_key=tls_key,
                         state_dir=config_values['StateDirectory'],
                         cache_dir=config_values['CacheDirectory'],
                         sealing_key_source=config_values['SealingKeySource'],
                         refresh_ttl=config_values['RefreshTtl'],
                         signing_algorithm=config_values['SigningAlgorithm'],
                         request_timeout_ms=config_values['RequestTimeoutMs'],
                         download_workers=config_values['DownloadWorkers'],
                         max_index_bytes=config_values['MaxIndexBytes'],
                         log_level=config_values['LogLevel'],
                         log_file=config_values['LogFile'],
                         allow_plain_http=config_values['AllowPlainHttp'],
                         allow_insecure_mirrors=config_values['AllowInsecureMirrors'])
# End ValidateConfigValues

# config_path None means: use kDefaultConfigFilename if it exists, else no file
def LoadServiceConfig(config_path: str = None, flag_values: dict = None,
                      environ: dict = None) -> ServiceConfig:
    config_values = dict(kDefaultConfigValues)
    config_values.update(ReadEnvironment(os.environ if (environ is None) else environ))
    if (config_path is None) and os.path.isfile(kDefaultConfigFilename):
        config_path = kDefaultConfigFilename
    if (config_path is not None):
        config_values.update(ReadConfigFile(config_path))
    config_values.update(flag_values or {})
    return ValidateConfigValues(config_values)
# End LoadServiceConfig

def FormatServiceConfig(config_values: dict) -> str:
    values = dict(kDefaultConfigValues)
    values.update(config_values)
    return kServiceConfigTemplate.format(*[values.get(keyword, '') for keyword in kKeywords])
# End FormatServiceConfig

def WriteServiceConfig(config_values: dict, config_path: str = kDefaultConfigFilename):
    CheckType(config_values, 'config_values', dict)
    helper.WriteToFile(FormatServiceConfig(config_values), config_path)
# End WriteServiceConfig

# The source is a key file path if such a file exists, otherwise an environment variable name.
# Either holds 64 hex characters.
def LoadSealingKey(sealing_key_source: str, environ: dict = None) -> bytes:
    CheckType(sealing_key_source, 'sealing_key_source', str)
    environ = os.environ if (environ is None) else environ
    if (os.path.isfile(sealing_key_source)):
        text = ''.join(helper.ReadFile(sealing_key_source)).strip()
        where = 'sealing key file {}'.format(sealing_key_source)
    elif (sealing_key_source in environ):
        text = environ[sealing_key_source].strip()
        where = 'environment variable {}'.format(sealing_key_source)
    else:
        errors.Error(InvalidConfig('sealing key source "{}" is neither a file nor a set '
                                   'environment variable'.format(sealing_key_source)))
    if (not kSealingKeyHexPattern.match(text)):
        errors.Error(InvalidConfig('{} must hold {} hex characters'.format(
                where, 2 * consts.kSealingKeySize)))
    return bytes.fromhex(text)
# End LoadSealingKey
