# Runs a small synthetic corpus through classification, sanitization and install verification,
# entirely in-process. Run from the repository root: python3 Examples/example_sanitize_corpus.py

import os.path
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import consts
import install_verifier
import keystore
import logger
import package
import package_generator
import sanitizer
from sanitizer import SanitizationContext, UserSpec, GroupSpec

kCounts = {'scriptless' : 20, 'scripted' : 12, 'FilesystemChange' : 3, 'EmptyScript' : 2,
           'TextProcessing' : 4, 'ConfigurationChange' : 2, 'EmptyFileCreation' : 1,
           'UserGroupCreation' : 4, 'ShellActivation' : 1}

def main():
    logger.InitializeLog('example.log', 'info', log_to_stderr=False)
    upstream = keystore.GenerateKeypair(consts.kAlgorithmEd25519)
    repository_key = keystore.GenerateKeypair(consts.kAlgorithmEd25519)
    corpus = [package.ParseApk(apk) for apk in package_generator.GenerateCorpus(upstream, counts=kCounts)]

    statistics = sanitizer.CorpusStatistics(corpus)
    print('Classified {} packages, {} without scripts'.format(statistics.total,
                                                            statistics.without_scripts))
    for script_class, count in statistics.class_counts.items():
        print('  {:<20} {}'.format(script_class.value, count))
    print('Supported: {:.2%}\n'.format(statistics.supported_ratio))

    initial = ((UserSpec(name='root', explicit_uid=0, primary_group='root', home='/root',
                         shell='/bin/sh'),),
               (GroupSpec(name='root', explicit_gid=0),))
    users, groups = sanitizer.CollectIdentities(corpus, initial)
    context = SanitizationContext(sanitizer.PredictConfig(users, groups), repository_key)
    print('Predicted /etc/passwd:')
    print(context.predicted.passwd_content)

    sanitized = []
    for pkg in corpus:
        result, report = sanitizer.SanitizePackage(pkg, context)
        if (report.IsRejected()):
            print('Rejected {}-{}: {}'.format(pkg.name, pkg.version, report.reject_reason))
            continue
        sanitized.append(result)
    verdict = install_verifier.VerifyInstall(sanitized, [repository_key.public_key], context.predicted)
    print('\nInstalled {} sanitized packages: {} files checked, verdict {}'.format(
            len(verdict.packages), verdict.files_checked, verdict.verdict.value))
# End main

if (__name__ == '__main__'):
    main()
