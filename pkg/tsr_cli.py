'''
Command-line interface for operating a TSR instance and producing test fixtures.
The general call format is:

 > python3 tsr_cli.py [--config=<file>] [--Keyword=value ...] <verb> <verb_parameters...>

Configuration keywords (see service_config.py) may be given as flags, in the config file,
or as TSR_<KEYWORD> environment variables, in that order of precedence.

Verbs that operate on repositories (policy, refresh, status, predicted-config, reinit)
open the sealed state in StateDirectory directly; run them while the server is stopped,
or use the HTTP API of a running server instead.

Output is JSON on stdout. Errors are logged and printed to stderr.
Exit codes: 0 success, 1 failure (including an IntegrityViolation verdict),
2 usage error or unknown repository.

Scroll down to DelegateFunctionCall() to see documentation of all supported verbs.
'''

import glob
import json
import os
import os.path
import sys
import traceback
from typing import List

import consts
from errors import TsrError, UnknownRepository
import file_manip
import gateway
import helper
import install_verifier
from install_verifier import Verdict
from keystore import PublicKey
import logger
import package
import package_generator
from repository import RepositoryRegistry
import sanitizer
from sanitizer import PredictedConfig
import service_config
from type_checker import CheckType

kLogFilename = 'tsr_cli.log'
kConfigFlagPrefix = '--config='

# Map of verb -> dictionary of properties indexed by the following string keywords:
# - NeedsRegistry: bool, the verb opens repository state (requires a valid service config)
# - MinParams, MaxParams: int, MaxParams None means unbounded
# - Usage: str
kFunctionInfoMap = {
    'serve' : {
        'NeedsRegistry' : False, 'MinParams' : 0, 'MaxParams' : 0,
        'Usage' : 'serve'},
    'policy' : {
        'NeedsRegistry' : True, 'MinParams' : 2, 'MaxParams' : 2,
        'Usage' : 'policy deploy <policy_file>'},
    'refresh' : {
        'NeedsRegistry' : True, 'MinParams' : 1, 'MaxParams' : 1,
        'Usage' : 'refresh <repository_id>'},
    'status' : {
        'NeedsRegistry' : True, 'MinParams' : 1, 'MaxParams' : 1,
        'Usage' : 'status <repository_id>'},
    'predicted-config' : {
        'NeedsRegistry' : True, 'MinParams' : 1, 'MaxParams' : 2,
        'Usage' : 'predicted-config <repository_id> [output_file]'},
    'reinit' : {
        'NeedsRegistry' : True, 'MinParams' : 1, 'MaxParams' : 1,
        'Usage' : 'reinit <repository_id>'},
    'verify' : {
        'NeedsRegistry' : False, 'MinParams' : 2, 'MaxParams' : None,
        'Usage' : 'verify <apk_file> <public_key_pem...>'},
    'verify-install' : {
        'NeedsRegistry' : False, 'MinParams' : 3, 'MaxParams' : None,
        'Usage' : 'verify-install <apk_file...> <repository_key_pem> <predicted_config_json>'},
    'mkpkg' : {
        'NeedsRegistry' : False, 'MinParams' : 1, 'MaxParams' : 2,
        'Usage' : 'mkpkg <spec_file> [output_directory]'},
    'keygen' : {
        'NeedsRegistry' : False, 'MinParams' : 1, 'MaxParams' : 2,
        'Usage' : 'keygen <path_prefix> [{}|{}]'.format(consts.kAlgorithmRsa2048,
                                                      consts.kAlgorithmEd25519)},
    'mkindex' : {
        'NeedsRegistry' : False, 'MinParams' : 4, 'MaxParams' : None,
        'Usage' : 'mkindex <signing_key_pem> <output_directory> <arch> <apk_file...>'},
    'corpus' : {
        'NeedsRegistry' : False, 'MinParams' : 2, 'MaxParams' : 3,
        'Usage' : 'corpus <signing_key_pem> <output_directory> [arch]'},
    'stats' : {
        'NeedsRegistry' : False, 'MinParams' : 1, 'MaxParams' : 1,
        'Usage' : 'stats <directory_of_apk_files>'},
}

class UsageError(Exception):
    pass

def CheckNumParams(function_name: str, params_list: List[str]):
    CheckType(params_list, 'params_list', list)
    info = kFunctionInfoMap[function_name]
    if ((len(params_list) < info['MinParams'])
            or ((info['MaxParams'] is not None) and (len(params_list) > info['MaxParams']))):
        raise UsageError('incorrect number of parameters for {}: {} given\n  usage: {}'.format(
                function_name, len(params_list), info['Usage']))
# End CheckNumParams

def WriteOutput(document):
    if (isinstance(document, str)):
        sys.stdout.write(document if document.endswith('\n') else document + '\n')
    else:
        sys.stdout.write(json.dumps(document, indent=2, sort_keys=True) + '\n')
    sys.stdout.flush()
# End WriteOutput

def ReadInputFile(path: str) -> bytes:
    data = helper.ReadBytes(path)
    if (data is None):
        raise UsageError('file "{}" does not exist'.format(path))
    return data
# End ReadInputFile

def LoadPublicKeys(paths: List[str]) -> List[PublicKey]:
    return [PublicKey.Load(ReadInputFile(path)) for path in paths]

def OpenRegistry(config: service_config.ServiceConfig) -> RepositoryRegistry:
    sealing_key = service_config.LoadSealingKey(config.sealing_key_source)
    registry = RepositoryRegistry(gateway.MakeRepositorySettings(config, sealing_key))
    registry.Restore()
    return registry
# End OpenRegistry

# Returns the process exit code
def DelegateFunctionCall(function_name: str, function_params: List[str],
                         config: service_config.ServiceConfig or None) -> int:
    CheckType(function_name, 'function_name', str)
    CheckType(function_params, 'function_params', list)
    CheckNumParams(function_name, function_params)
    registry = OpenRegistry(config) if kFunctionInfoMap[function_name]['NeedsRegistry'] else None
    # ======================================== Serve ========================================
    if (function_name == 'serve'):
        '''
        serve
         - Restores every sealed repository and serves the HTTP API until SIGINT/SIGTERM
         - Example: > python3 tsr_cli.py --config=tsr.config serve
        '''
        gateway.Serve(config)
    # ==================================== Policy Deploy ====================================
    elif (function_name == 'policy'):
        '''
        policy deploy <policy_file>
         - Creates a repository for the YAML or JSON policy
         - Output: {"repository_id": ..., "public_key_pem": ...}
        '''
        if (function_params[0] != 'deploy'):
            raise UsageError('unknown policy action "{}"'.format(function_params[0]))
        repository_id, public_key = registry.DeployPolicy(ReadInputFile(function_params[1]))
        WriteOutput({'repository_id' : repository_id, 'public_key_pem' : public_key.ToPem()})
    # ======================================= Refresh =======================================
    elif (function_name == 'refresh'):
        '''
        refresh <repository_id>
         - Fetches the upstream index by quorum and sanitizes what changed
         - Output: the refresh report
        '''
        WriteOutput(registry.Refresh(function_params[0]).ToJson())
    # ======================================= Status =======================================
    elif (function_name == 'status'):
        '''
        status <repository_id>
         - Output: repository id, key id, index hashes, package counts, warnings
        '''
        WriteOutput(registry.Get(function_params[0]).Status())
    # ================================== Predicted Config ==================================
    elif (function_name == 'predicted-config'):
        '''
        predicted-config <repository_id> [output_file]
         - Output: the predicted passwd/group/shadow document, to stdout or output_file
        '''
        document = registry.Get(function_params[0]).ExportPredictedConfig()
        if (len(function_params) == 2):
            helper.WriteToFile(json.dumps(document, indent=2, sort_keys=True) + '\n',
                               function_params[1])
        else:
            WriteOutput(document)
    # ======================================= Reinit =======================================
    elif (function_name == 'reinit'):
        '''
        reinit <repository_id>
         - Operator recovery for a repository whose sealed state is stale: keeps the policy and
           signing key, discards indexes and caches. The next refresh rebuilds everything.
        '''
        repo = registry.ForceReinitialize(function_params[0])
        WriteOutput({'repository_id' : repo.repository_id, 'key_id' : repo.public_key.key_id_hex})
    # ======================================= Verify =======================================
    elif (function_name == 'verify'):
        '''
        verify <apk_file> <public_key_pem...>
         - Checks the datahash and the control segment signature against the given keys
         - Output: {"package": ..., "signer_key_id": ...}
        '''
        pkg = package.ParseApk(ReadInputFile(function_params[0]))
        result = package.VerifyPackage(pkg, LoadPublicKeys(function_params[1 :]))
        WriteOutput({'package' : pkg.filename, 'signer_key_id' : result.signer_key_id.hex()})
    # ==================================== Verify Install ====================================
    elif (function_name == 'verify-install'):
        '''
        verify-install <apk_file...> <repository_key_pem> <predicted_config_json>
         - Installs the packages, in order, into a simulated root and appraises every file
         - Output: the install verdict; exit code 1 unless the verdict is Trusted
        '''
        *apk_paths, key_path, predicted_path = function_params
        predicted = PredictedConfig.FromJson(json.loads(ReadInputFile(predicted_path)))
        packages = [package.ParseApk(ReadInputFile(path)) for path in apk_paths]
        verdict = install_verifier.VerifyInstall(packages, LoadPublicKeys([key_path]), predicted)
        WriteOutput(verdict.ToJson())
        if (verdict.verdict != Verdict.kTrusted):
            return consts.kExitCodeFailure
    # ======================================== Mkpkg ========================================
    elif (function_name == 'mkpkg'):
        '''
        mkpkg <spec_file> [output_directory]
         - Builds and signs an upstream-style package from a YAML spec file
         - Output: {"path": ..., "size": ...}
        '''
        spec = package_generator.LoadPackageSpec(function_params[0])
        apk_bytes = package_generator.BuildPackage(spec)
        output_directory = function_params[1] if (len(function_params) == 2) else '.'
        output_path = os.path.join(output_directory, consts.kPackageFilenameTemplate.format(
                spec.pkginfo.pkgname, spec.pkginfo.pkgver))
        file_manip.WriteBytesAtomically(apk_bytes, output_path)
        WriteOutput({'path' : output_path, 'size' : len(apk_bytes)})
    # ======================================== Keygen ========================================
    elif (function_name == 'keygen'):
        '''
        keygen <path_prefix> [algorithm]
         - Writes a fixture signer: <path_prefix>.pem and <path_prefix>.pub.pem
        '''
        algorithm = function_params[1] if (len(function_params) == 2) else consts.kAlgorithmRsa2048
        if (algorithm not in consts.kAlgorithmIds):
            raise UsageError('unknown algorithm "{}"'.format(algorithm))
        signer = package_generator.WriteKeypair(function_params[0], algorithm)
        WriteOutput({'key_id' : signer.public_key.key_id_hex, 'algorithm' : algorithm})
    # ======================================= Mkindex =======================================
    elif (function_name == 'mkindex'):
        '''
        mkindex <signing_key_pem> <output_directory> <arch> <apk_file...>
         - Writes a signed mirror tree: <output_directory>/<arch>/{APKINDEX.tar.gz,*.apk}
        '''
        key_path, output_directory, architecture, *apk_paths = function_params
        contents = package_generator.BuildMirrorContents(
                [ReadInputFile(path) for path in apk_paths],
                package_generator.LoadKeypair(key_path), architecture)
        package_generator.WriteMirrorTree(contents, output_directory)
        WriteOutput({'files' : sorted(contents)})
    # ======================================= Corpus =======================================
    elif (function_name == 'corpus'):
        '''
        corpus <signing_key_pem> <output_directory> [arch]
         - Writes a mirror tree holding the reference corpus (one package per plan entry)
        '''
        signer = package_generator.LoadKeypair(function_params[0])
        architecture = function_params[2] if (len(function_params) == 3) else 'x86_64'
        apks = package_generator.GenerateCorpus(signer, architecture)
        package_generator.WriteMirrorTree(
                package_generator.BuildMirrorContents(apks, signer, architecture),
                function_params[1])
        WriteOutput({'packages' : len(apks)})
    # ======================================== Stats ========================================
    elif (function_name == 'stats'):
        '''
        stats <directory_of_apk_files>
         - Output: per-class package counts and the supported/rejected ratio
        '''
        paths = sorted(glob.glob(os.path.join(function_params[0], '*.apk')))
        packages = [package.ParseApk(ReadInputFile(path)) for path in paths]
        WriteOutput(sanitizer.CorpusStatistics(packages).ToJson())
    return consts.kExitCodeSuccess
# End DelegateFunctionCall

kUsageErrorString = ('ill-formed command-line call\n' +
  '  Check that the verb is spelled correctly and that the syntax is as follows:\n' +
  '  > python3 tsr_cli.py [--config=<file>] [--Keyword=value ...] <verb> <parameters...>\n' +
  '  verbs:\n' + ''.join('    {}\n'.format(info['Usage']) for info in kFunctionInfoMap.values()))

# Returns the process exit code
def main_impl(argv: List[str]) -> int:
    config_path = None
    arguments = []
    for argument in argv:
        if (argument.startswith(kConfigFlagPrefix)):
            config_path = argument[len(kConfigFlagPrefix) :]
        else:
            arguments.append(argument)
    flag_values, arguments = service_config.SplitConfigFlags(arguments)
    if ((len(arguments) == 0) or (arguments[0] not in kFunctionInfoMap)):
        raise UsageError(kUsageErrorString)
    function_name, *function_params = arguments
    config = None
    if (kFunctionInfoMap[function_name]['NeedsRegistry'] or (function_name == 'serve')):
        config = service_config.LoadServiceConfig(config_path, flag_values)
        logger.InitializeLog(config.log_file, config.log_level,
                             log_to_stderr=(function_name == 'serve'))
    else:
        logger.InitializeLog(kLogFilename, 'info', log_to_stderr=False)
    logger.Log('Info: tsr_cli {}'.format(' '.join([function_name] + function_params)))
    return DelegateFunctionCall(function_name, function_params, config)
# End main_impl

# Wrap main_impl so every failure maps to an exit code and a one-line stderr message
def main(argv: List[str] = None) -> int:
    argv = sys.argv[1 :] if (argv is None) else argv
    try:
        return main_impl(argv)
    except UsageError as e:
        sys.stderr.write('Error: {}\n'.format(e))
        return consts.kExitCodeUsage
    except UnknownRepository as e:
        sys.stderr.write('Error: {}: {}\n'.format(type(e).__name__, e))
        return consts.kExitCodeUsage
    except TsrError as e:
        sys.stderr.write('Error: {}: {}\n'.format(type(e).__name__, e))
        return consts.kExitCodeFailure
    except Exception as e:
        logger.Log(traceback.format_exc())
        sys.stderr.write('Error: {}: {}\n'.format(type(e).__name__, e))
        return consts.kExitCodeFailure
# End main

if (__name__ == '__main__'):
    sys.exit(main())
