import re

def InvertedDict(input_dict):
    return {value : key for key, value in input_dict.items()}

# ================================== Archive ==================================

kTarBlockSize = 512
kTarTrailerSize = 2 * kTarBlockSize
kUstarMagic = b'ustar\x00'
kUstarVersion = b'00'
kUstarNameFieldSize = 100

# Pax records that ReadTar folds into entry fields instead of keeping verbatim
kPaxPathKey = 'path'
kPaxLinkpathKey = 'linkpath'
kFieldPaxKeys = (kPaxPathKey, kPaxLinkpathKey)

# GNU tar maps "SCHILY.xattr.<name>" pax records onto filesystem xattrs
kXattrPaxPrefix = 'SCHILY.xattr.'
kImaXattrName = 'security.ima'
kImaPaxKey = kXattrPaxPrefix + kImaXattrName

kGzipMagic = b'\x1f\x8b'
kGzipCompressionLevel = 9

# ================================== Keystore =================================

kEnvelopeVersion = 0x01
kEnvelopeHeaderSize = 6
kKeyIdSize = 4

kAlgorithmRsa2048 = 'RSA-2048-SHA-256'
kAlgorithmEd25519 = 'Ed25519'
kAlgorithmIds = {kAlgorithmRsa2048 : 0x01, kAlgorithmEd25519 : 0x02}
kAlgorithmNames = InvertedDict(kAlgorithmIds)
kSignatureLengths = {kAlgorithmRsa2048 : 256, kAlgorithmEd25519 : 64}
# Token used in ".SIGN.<token>.<keyid>.pub" entry names
kSignatureNameTokens = {kAlgorithmRsa2048 : 'RSA', kAlgorithmEd25519 : 'ED25519'}

kSealedBlobMagic = b'TSRSEAL1'
kSealNonceSize = 12
kSealingKeySize = 32
kCounterFileMagic = b'TSRCTR1'
kCounterMacSize = 32

kSealingKeyLabel = 'tsr-repository-seal:'
kCounterKeyLabel = 'tsr-counter-mac:'

kAttestationClaim = {'mode' : 'simulated', 'claim' : 'simulated-enclave'}

# ================================== Package ==================================

kPkgInfoFilename = '.PKGINFO'
kSignatureEntryPrefix = '.SIGN.'
kPkgNamePattern = re.compile(r'^[a-z0-9._+-]+$')
kHexDigestPattern = re.compile(r'^[0-9a-f]{64}$')

# Script kind -> control segment file name, in the order scripts are emitted
kScriptFilenames = {
    'pre-install' : '.pre-install',
    'post-install' : '.post-install',
    'pre-upgrade' : '.pre-upgrade',
    'post-upgrade' : '.post-upgrade',
    'pre-deinstall' : '.pre-deinstall',
    'post-deinstall' : '.post-deinstall',
    'trigger' : '.trigger'}
kScriptKindsByFilename = InvertedDict(kScriptFilenames)

kControlFileMode = 0o644
kScriptFileMode = 0o755

# =================================== Index ===================================

kIndexFilename = 'APKINDEX'
kDescriptionFilename = 'DESCRIPTION'
kIndexChecksumPrefix = 'Q1'
kSha1DigestSize = 20

# ================================= Sanitizer =================================

kSanitizedMarker = '# TSR-SANITIZED v1'
kFirstAutoId = 100
kMaxAutoId = 65533
kDefaultPasswordField = '!'
kShadowLineTemplate = '{}:{}:0:0:99999:7:::'
kPasswdPath = '/etc/passwd'
kGroupPath = '/etc/group'
kShadowPath = '/etc/shadow'
kConfigPaths = (kPasswdPath, kGroupPath, kShadowPath)
kNonLoginShells = ('/sbin/nologin', '/bin/false', '/usr/sbin/nologin')
kIdentityNamePattern = re.compile(r'^[a-z_][a-z0-9_-]*$')
kDefaultHomeTemplate = '/home/{}'
kDefaultLoginShell = '/bin/sh'
kDefaultSystemShell = '/sbin/nologin'
kScriptsDirectory = '/lib/apk/db/scripts'

# Command table: command name -> script class name
kFilesystemChangeCommands = ['mkdir', 'rmdir', 'rm', 'mv', 'cp', 'ln', 'chmod', 'chown', 'install']
kEmptyScriptCommands = [':', 'true', 'false', 'echo', 'printf', 'exit', 'test', '[', 'set']
kTextProcessingCommands = ['grep', 'awk', 'cut', 'tr', 'sed']
kConfigurationChangeCommands = ['update-ca-certificates', 'setfattr']
kEmptyFileCreationCommands = ['touch']
kUserGroupCreationCommands = ['adduser', 'addgroup', 'useradd', 'groupadd']
kShellActivationCommands = ['add-shell', 'remove-shell']

# ================================== Mirrors ==================================

kIndexPathTemplate = '{}/{}/APKINDEX.tar.gz'  # base, arch
kPackagePathTemplate = '{}/{}/{}'  # base, arch, filename
kPackageFilenameTemplate = '{}-{}.apk'  # name, version
kDefaultRequestTimeoutMs = 5000
kDefaultMaxIndexBytes = 64 * 1024 * 1024
kDownloadChunkSize = 64 * 1024

# ================================= Repository ================================

kDefaultRefreshTtlSeconds = 300
kDefaultDownloadWorkers = 4
kRepositoryIdBytes = 16
kSealedStateSuffix = '.sealed'
kCounterSuffix = '.counter'
kOriginalCacheDirectory = 'original'
kSanitizedCacheDirectory = 'sanitized'
# Sanitized packages of an uncommitted refresh
kStagingCacheDirectory = 'staging'
kStateFormatVersion = 1

# ================================== Gateway ==================================

kDefaultListenAddress = '127.0.0.1:8443'
kRouteDeployPolicy = '/v1/policies'
kRouteHealth = '/healthz'
kRouteAttestation = '/v1/attestation'
kRouteIndex = '/v1/repos/{}/{}/APKINDEX.tar.gz'  # id, arch
kRoutePackage = '/v1/repos/{}/{}/{}'  # id, arch, filename
kRouteKey = '/v1/repos/{}/key'
kRouteRefresh = '/v1/repos/{}/refresh'
kRouteStatus = '/v1/repos/{}/status'
kRouteConfig = '/v1/repos/{}/config'

kExitCodeSuccess = 0
kExitCodeFailure = 1
kExitCodeUsage = 2
