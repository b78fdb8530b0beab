# First-time setup script for a TSR instance
#  1. Checks the python version is recent enough (3.8+)
#  2. Prompts the user for the listen address
#  3. Prompts the user for TLS certificate and key paths, and validates they exist
#  4. Prompts the user for the state and cache directories
#  5. Generates a sealing key file, unless one already exists
#  6. Validates and saves everything to tsr.config

import os
import os.path
import sys

import consts
from errors import InvalidConfig
import helper
import service_config

kSealingKeyFilename = 'sealing.key'

def Prompt(message: str, default: str) -> str:
    answer = input('{} (leave blank for default: "{}"): '.format(message, default)).strip().strip('"')
    return default if (answer == '') else answer
# End Prompt

def PromptExistingFile(message: str) -> str:
    while (True):
        path = input(message).strip().strip('"')
        if ((path == '') or os.path.isfile(path)):
            return path
        print('The given file "{}" does not exist, please paste the full path exactly'.format(path))
# End PromptExistingFile

def CreateSealingKey(key_path: str):
    helper.WriteToFile(os.urandom(consts.kSealingKeySize).hex() + '\n', key_path)
    os.chmod(key_path, 0o600)
# End CreateSealingKey

def main():
    print('Welcome to the first-time setup script for TSR!')

    # 1. Check python version
    print('\nStep 1: Checking python version...')
    if (sys.version_info < (3, 8)):
        print('Python {}.{} detected, Python 3.8 or later required'.format(*sys.version_info[:2]))
        sys.exit(1)
    print('Python {}.{} detected, success!'.format(*sys.version_info[:2]))

    config_values = {}
    # 2. Listen address
    print('\nStep 2: Network')
    config_values['ListenAddress'] = Prompt('Listen address as host:port', consts.kDefaultListenAddress)

    # 3. TLS
    print('\nStep 3: TLS')
    print('Clients only talk to TSR over TLS. Leave both paths blank to serve plain HTTP,')
    print('which is only suitable for local testing.')
    config_values['TlsCertificate'] = PromptExistingFile('TLS certificate (PEM) fullpath: ')
    config_values['TlsKey'] = PromptExistingFile('TLS private key (PEM) fullpath: ')
    if ((config_values['TlsCertificate'] == '') and (config_values['TlsKey'] == '')):
        print('WARNING: no TLS configured, the service will accept plain HTTP')
        config_values['AllowPlainHttp'] = True

    # 4. Directories
    print('\nStep 4: Tell TSR where to keep its sealed state and package cache')
    config_values['StateDirectory'] = Prompt('State directory', 'state')
    config_values['CacheDirectory'] = Prompt('Cache directory', 'cache')

    # 5. Sealing key
    print('\nStep 5: Sealing key')
    key_path = os.path.join(config_values['StateDirectory'], kSealingKeyFilename)
    config_values['SealingKeySource'] = Prompt('Sealing key file, or environment variable name',
                                               key_path)
    if ((config_values['SealingKeySource'] == key_path) and not os.path.isfile(key_path)):
        os.makedirs(config_values['StateDirectory'], exist_ok=True)
        CreateSealingKey(key_path)
        print('Generated a new sealing key in "{}"'.format(key_path))
        print('Keep this file: without it, no repository can be restored after a restart.')

    # 6. Validate and save
    values = dict(service_config.kDefaultConfigValues)
    values.update(config_values)
    try:
        service_config.ValidateConfigValues(values)
    except InvalidConfig as e:
        print('\nError: {}'.format(e))
        print('Please re-run this script.')
        sys.exit(1)
    service_config.WriteServiceConfig(config_values)
    print('\nConfig data saved to "{}".'.format(service_config.kDefaultConfigFilename))
    print('You can edit this file at any time later to update these settings.')
    print('\nSetup complete! Start the service with: python3 tsr_cli.py serve')
# End main

if __name__ == '__main__':
    main()
