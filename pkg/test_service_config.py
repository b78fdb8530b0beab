import consts
from errors import InvalidConfig
import helper
import service_config
from testing_harness import CHECK, ExpectError, RunTests, kTestSealingKey

def MinimalValues(tmp_path, **overrides) -> dict:
    values = {'SealingKeySource' : 'TSR_TEST_KEY', 'AllowPlainHttp' : True,
              'StateDirectory' : str(tmp_path / 'state'), 'CacheDirectory' : str(tmp_path / 'cache')}
    values.update(overrides)
    return values
# End MinimalValues

def TestParseServiceConfigLine():
    CHECK(service_config.ParseServiceConfigLine('') is None)
    CHECK(service_config.ParseServiceConfigLine('# comment: with colon') is None)
    CHECK(service_config.ParseServiceConfigLine('Listen address: 0.0.0.0:8443')
          == ('ListenAddress', '0.0.0.0:8443'))
    CHECK(service_config.ParseServiceConfigLine('Download workers: 8') == ('DownloadWorkers', 8))
    CHECK(service_config.ParseServiceConfigLine('Allow plain HTTP: yes') == ('AllowPlainHttp', True))
    CHECK(service_config.ParseServiceConfigLine('TLS key:') == ('TlsKey', ''))
    ExpectError(InvalidConfig, service_config.ParseServiceConfigLine, 'Colour: blue')
    ExpectError(InvalidConfig, service_config.ParseServiceConfigLine, 'no colon here')
    ExpectError(InvalidConfig, service_config.ParseServiceConfigLine, 'Download workers: 0')
    ExpectError(InvalidConfig, service_config.ParseServiceConfigLine, 'Refresh TTL seconds: soon')
    ExpectError(InvalidConfig, service_config.ParseServiceConfigLine, 'Allow plain HTTP: maybe')
# End TestParseServiceConfigLine

def TestWrittenConfigReadsBack(tmp_path):
    config_path = str(tmp_path / 'tsr.config')
    service_config.WriteServiceConfig(MinimalValues(tmp_path, RefreshTtl=60, LogLevel='debug'),
                                      config_path)
    config = service_config.LoadServiceConfig(config_path, environ={})
    CHECK((config.listen_host, config.listen_port) == ('127.0.0.1', 8443))
    CHECK(config.refresh_ttl == 60 and config.log_level == 'debug')
    CHECK(config.sealing_key_source == 'TSR_TEST_KEY')
    CHECK(config.state_dir == str(tmp_path / 'state'))
    CHECK(config.signing_algorithm == consts.kAlgorithmRsa2048)
    CHECK(config.download_workers == consts.kDefaultDownloadWorkers)
    CHECK(config.allow_plain_http and not config.allow_insecure_mirrors)
    CHECK(not config.tls_enabled)
    CHECK((tmp_path / 'cache').is_dir())
# End TestWrittenConfigReadsBack

def TestPrecedence(tmp_path):
    config_path = str(tmp_path / 'tsr.config')
    service_config.WriteServiceConfig(MinimalValues(tmp_path, DownloadWorkers=3, RefreshTtl=30),
                                      config_path)
    environ = {'TSR_DOWNLOADWORKERS' : '5', 'TSR_REFRESHTTL' : '10', 'TSR_REQUESTTIMEOUTMS' : '700'}
    flags, remaining = service_config.SplitConfigFlags(['--RefreshTtl=20', 'serve', '--Unknown=1'])
    CHECK(remaining == ['serve', '--Unknown=1'])
    config = service_config.LoadServiceConfig(config_path, flags, environ)
    # flags > file > environment > defaults
    CHECK(config.refresh_ttl == 20)
    CHECK(config.download_workers == 3)
    CHECK(config.request_timeout_ms == 700)
    CHECK(config.max_index_bytes == consts.kDefaultMaxIndexBytes)
# End TestPrecedence

def TestEnvironmentOnly(tmp_path):
    environ = {'TSR_SEALINGKEYSOURCE' : 'KEY', 'TSR_ALLOWPLAINHTTP' : 'true',
               'TSR_STATEDIRECTORY' : str(tmp_path / 's'), 'TSR_CACHEDIRECTORY' : str(tmp_path / 'c'),
               'TSR_LISTENADDRESS' : '[::1]:9000'}
    values = dict(service_config.kDefaultConfigValues)
    values.update(service_config.ReadEnvironment(environ))
    config = service_config.ValidateConfigValues(values)
    CHECK((config.listen_host, config.listen_port) == ('[::1]', 9000))
    CHECK(config.sealing_key_source == 'KEY')
    ExpectError(InvalidConfig, service_config.ReadEnvironment, {'TSR_MAXINDEXBYTES' : '-1'})
# End TestEnvironmentOnly

def TestMissingConfigFile(tmp_path):
    ExpectError(InvalidConfig, service_config.LoadServiceConfig, str(tmp_path / 'missing.config'),
                environ={})
# End TestMissingConfigFile

def TestValidation(tmp_path):
    def Validate(**overrides):
        values = dict(service_config.kDefaultConfigValues)
        values.update(MinimalValues(tmp_path, **overrides))
        return service_config.ValidateConfigValues(values)

    CHECK(Validate().listen_port == 8443)
    for overrides, fragment in (({'SealingKeySource' : ''}, 'SealingKeySource'),
                                ({'LogLevel' : 'loud'}, 'log level'),
                                ({'SigningAlgorithm' : 'DSA'}, 'signing algorithm'),
                                ({'TlsCertificate' : 'cert.pem'}, 'together'),
                                ({'AllowPlainHttp' : False}, 'TLS is required'),
                                ({'ListenAddress' : '8443'}, 'host:port'),
                                ({'ListenAddress' : 'localhost:99999'}, 'host:port')):
        error = ExpectError(InvalidConfig, Validate, **overrides)
        CHECK(fragment in str(error))
    blocker = tmp_path / 'file'
    blocker.write_text('not a directory')
    error = ExpectError(InvalidConfig, Validate, StateDirectory=str(blocker / 'state'))
    CHECK('not writable' in str(error))
    config = Validate(TlsCertificate='cert.pem', TlsKey='key.pem', AllowPlainHttp=False)
    CHECK(config.tls_enabled)
# End TestValidation

def TestLoadSealingKey(tmp_path):
    key_path = tmp_path / 'sealing.key'
    key_path.write_text(kTestSealingKey.hex() + '\n')
    CHECK(service_config.LoadSealingKey(str(key_path), environ={}) == kTestSealingKey)
    CHECK(service_config.LoadSealingKey('TSR_KEY', environ={'TSR_KEY' : kTestSealingKey.hex().upper()})
          == kTestSealingKey)
    ExpectError(InvalidConfig, service_config.LoadSealingKey, 'TSR_KEY', environ={})
    ExpectError(InvalidConfig, service_config.LoadSealingKey, 'TSR_KEY', environ={'TSR_KEY' : 'abcd'})
    helper.WriteToFile('zz' * 32, str(key_path))
    ExpectError(InvalidConfig, service_config.LoadSealingKey, str(key_path), environ={})
# End TestLoadSealingKey

def main():
    RunTests(globals())

if (__name__ == '__main__'):
    main()
