'''
Exception hierarchy for the repository proxy.

Every error raised on purpose by this codebase derives from TsrError, which is a
RuntimeError so that callers written against plain RuntimeError keep working.
Messages are plain text and never contain key material.
'''

import logger

class TsrError(RuntimeError):
    pass

# ---------------------------------- archive ----------------------------------

class MalformedGzip(TsrError):
    def __init__(self, message: str, offset: int):
        super().__init__('{} (at byte offset {})'.format(message, offset))
        self.offset = offset

class MalformedTar(TsrError):
    pass

class PathTooLong(TsrError):
    pass

class NotARegularFile(TsrError):
    pass

# ---------------------------------- keystore ---------------------------------

class EntropyUnavailable(TsrError):
    pass

class MalformedEnvelope(TsrError):
    pass

class CounterFailure(TsrError):
    pass

class AuthenticationFailure(TsrError):
    pass

class StaleSeal(TsrError):
    pass

# ---------------------------------- package ----------------------------------

class MalformedPackage(TsrError):
    pass

class DatahashMismatch(TsrError):
    pass

class MissingPkgInfo(TsrError):
    pass

class UntrustedSigner(TsrError):
    pass

class SignatureInvalid(TsrError):
    pass

# ----------------------------------- index -----------------------------------

class MalformedIndex(TsrError):
    pass

# --------------------------------- sanitizer ---------------------------------

class ConflictingIdentity(TsrError):
    pass

# A user names a primary group that no package defines
class UndefinedIdentity(TsrError):
    pass

class UidExhaustion(TsrError):
    pass

class RewriteUnsupported(TsrError):
    pass

class SimulationUnsupported(TsrError):
    pass

# ---------------------------------- mirrors ----------------------------------

class QuorumUnreachable(TsrError):
    pass

# Raised before any index is fetched, when too few mirrors are usable for a quorum
class InsufficientMirrors(QuorumUnreachable):
    pass

class SizeMismatch(TsrError):
    pass

class ChecksumMismatch(TsrError):
    pass

class PackageUnavailable(TsrError):
    def __init__(self, message: str, attempts: list = None):
        super().__init__(message)
        self.attempts = attempts or []

# --------------------------------- repository --------------------------------

class InvalidPolicy(TsrError):
    def __init__(self, diagnostics: list):
        super().__init__('invalid policy: ' + '; '.join(diagnostics))
        self.diagnostics = list(diagnostics)

class NotYetInitialized(TsrError):
    pass

class UnknownPackage(TsrError):
    pass

class UnknownRepository(TsrError):
    pass

class CacheCorrupted(TsrError):
    pass

class UpstreamSignatureInvalid(TsrError):
    pass

# ---------------------------------- gateway ----------------------------------

class InvalidSpec(TsrError):
    pass

class InvalidConfig(TsrError):
    pass

class BindFailure(TsrError):
    pass

# Logs the error, then raises it
def Error(e: Exception):
    logger.Log('Error: {}: {}'.format(type(e).__name__, e))
    raise e
# End Error
