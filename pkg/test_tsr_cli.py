import contextlib
import glob
import io
import json
import os

import consts
from package import ScriptKind
import tsr_cli
from testing_harness import (CHECK, HttpMirror, MakePackage, MirrorContents, PolicyYaml, RunTests,
                             UserScript, kTestSealingKey)

kRedisSpec = '''
name: redis
version: 7.2.4-r0
arch: x86_64
signing_key: upstream.pem
files:
  - path: usr/bin/redis-server
    content: "binary placeholder"
scripts:
  pre-install: |
    addgroup -S redis
    adduser -S -D -H -s /sbin/nologin -G redis redis
'''

# Returns (exit code, parsed JSON stdout or raw text, stderr)
def Run(argv: list):
    stdout, stderr = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
        exit_code = tsr_cli.main(argv)
    try:
        output = json.loads(stdout.getvalue())
    except ValueError:
        output = stdout.getvalue()
    return exit_code, output, stderr.getvalue()
# End Run

def ServiceFlags(tmp_path) -> list:
    key_path = tmp_path / 'sealing.key'
    key_path.write_text(kTestSealingKey.hex())
    config_path = tmp_path / 'tsr.config'
    config_path.write_text('# empty\n')
    return ['--config=' + str(config_path),
            '--StateDirectory=' + str(tmp_path / 'state'),
            '--CacheDirectory=' + str(tmp_path / 'cache'),
            '--SealingKeySource=' + str(key_path),
            '--SigningAlgorithm=' + consts.kAlgorithmEd25519,
            '--LogFile=' + str(tmp_path / 'tsr.log'),
            '--AllowPlainHttp=true', '--AllowInsecureMirrors=true']
# End ServiceFlags

def TestUsageErrors():
    for argv in ([], ['bogus'], ['verify', 'only-one'], ['keygen', 'a', 'b', 'c'],
                 ['mkpkg', '/does/not/exist.yaml']):
        exit_code, _, stderr = Run(argv)
        CHECK(stderr.startswith('Error: '))
        CHECK(exit_code in (consts.kExitCodeUsage, consts.kExitCodeFailure))
    CHECK(Run([])[0] == consts.kExitCodeUsage)
    CHECK(Run(['verify', 'only-one'])[0] == consts.kExitCodeUsage)
    CHECK('usage: verify <apk_file> <public_key_pem...>' in Run(['verify', 'only-one'])[2])
# End TestUsageErrors

def TestFixtureVerbs(tmp_path):
    exit_code, output, _ = Run(['keygen', str(tmp_path / 'upstream'), consts.kAlgorithmEd25519])
    CHECK(exit_code == 0 and output['algorithm'] == consts.kAlgorithmEd25519)
    CHECK(os.path.isfile(str(tmp_path / 'upstream.pub.pem')))
    CHECK(Run(['keygen', str(tmp_path / 'x'), 'DSA'])[0] == consts.kExitCodeUsage)
    (tmp_path / 'redis.yaml').write_text(kRedisSpec)
    exit_code, output, _ = Run(['mkpkg', str(tmp_path / 'redis.yaml'), str(tmp_path / 'out')])
    CHECK(exit_code == 0)
    apk_path = str(tmp_path / 'out' / 'redis-7.2.4-r0.apk')
    CHECK(output['path'] == apk_path and output['size'] == os.path.getsize(apk_path))
    exit_code, output, _ = Run(['verify', apk_path, str(tmp_path / 'upstream.pub.pem')])
    CHECK(exit_code == 0 and output['package'] == 'redis-7.2.4-r0.apk')
    Run(['keygen', str(tmp_path / 'other'), consts.kAlgorithmEd25519])
    exit_code, _, stderr = Run(['verify', apk_path, str(tmp_path / 'other.pub.pem')])
    CHECK(exit_code == consts.kExitCodeFailure and 'UntrustedSigner' in stderr)
    exit_code, output, _ = Run(['mkindex', str(tmp_path / 'upstream.pem'), str(tmp_path / 'mirror'),
                                'x86_64', apk_path])
    CHECK(exit_code == 0)
    CHECK(output['files'] == ['x86_64/APKINDEX.tar.gz', 'x86_64/redis-7.2.4-r0.apk'])
    CHECK(os.path.isfile(str(tmp_path / 'mirror' / 'x86_64' / 'APKINDEX.tar.gz')))
    exit_code, output, _ = Run(['stats', str(tmp_path / 'out')])
    CHECK(exit_code == 0 and output['total'] == 1 and output['rejected'] == 0)
    CHECK(output['class_counts']['UserGroupCreation'] == 1)
# End TestFixtureVerbs

def TestRepositoryLifecycle(tmp_path):
    flags = ServiceFlags(tmp_path)
    contents = MirrorContents([MakePackage('redis', scripts={ScriptKind.kPreInstall : UserScript('redis')}),
                               MakePackage('plain')])
    with HttpMirror(contents) as mirror:
        (tmp_path / 'policy.yaml').write_text(PolicyYaml([mirror.base_url]))
        exit_code, deployed, _ = Run(flags + ['policy', 'deploy', str(tmp_path / 'policy.yaml')])
        CHECK(exit_code == 0)
        repository_id = deployed['repository_id']
        (tmp_path / 'repository.pub.pem').write_text(deployed['public_key_pem'])
        exit_code, report, _ = Run(flags + ['refresh', repository_id])
        CHECK(exit_code == 0 and report['packages_sanitized'] == 2)
    exit_code, status, _ = Run(flags + ['status', repository_id])
    CHECK(exit_code == 0 and status['packages_indexed'] == 2)
    CHECK(Run(flags + ['predicted-config', repository_id, str(tmp_path / 'config.json')])[0] == 0)
    exit_code, config, _ = Run(flags + ['predicted-config', repository_id])
    CHECK(config == json.loads((tmp_path / 'config.json').read_text()))
    sanitized = sorted(glob.glob(str(tmp_path / 'cache' / repository_id / 'sanitized' / '*.apk')))
    CHECK([os.path.basename(path) for path in sanitized] == ['plain-1.0-r0.apk', 'redis-1.0-r0.apk'])
    exit_code, verdict, _ = Run(['verify-install'] + sanitized
                                + [str(tmp_path / 'repository.pub.pem'), str(tmp_path / 'config.json')])
    CHECK(exit_code == 0 and verdict['verdict'] == 'Trusted')
    # Upstream packages are not signed per file by the repository
    upstream = str(tmp_path / 'redis-upstream.apk')
    with open(upstream, 'wb') as output_file:
        output_file.write(contents['x86_64/redis-1.0-r0.apk'])
    exit_code, verdict, _ = Run(['verify-install', upstream, str(tmp_path / 'repository.pub.pem'),
                                 str(tmp_path / 'config.json')])
    CHECK(exit_code == consts.kExitCodeFailure and verdict['verdict'] == 'IntegrityViolation')
    exit_code, output, _ = Run(flags + ['reinit', repository_id])
    CHECK(exit_code == 0 and output['repository_id'] == repository_id)
    CHECK(Run(flags + ['status', repository_id])[1]['index_hash'] is None)
    CHECK(Run(flags + ['status', 'f' * 32])[0] == consts.kExitCodeUsage)
    CHECK(Run(flags + ['policy', 'remove', 'x'])[0] == consts.kExitCodeUsage)
# End TestRepositoryLifecycle

def TestRegistryVerbsNeedSealingKey(tmp_path):
    flags = [flag for flag in ServiceFlags(tmp_path) if not flag.startswith('--SealingKeySource')]
    exit_code, _, stderr = Run(flags + ['status', 'f' * 32])
    CHECK(exit_code == consts.kExitCodeFailure and 'InvalidConfig' in stderr)
# End TestRegistryVerbsNeedSealingKey

def main():
    RunTests(globals())

if (__name__ == '__main__'):
    main()
