'''
Signing keys, file signature envelopes, and sealed state with monotonic counter freshness.

Everything signed in this codebase is signed over the SHA-256 digest of the content:
 - RSA-2048: PKCS#1 v1.5 over the prehashed SHA-256 digest (256-byte signatures)
 - Ed25519: signature over the 32-byte SHA-256 digest (64-byte signatures)

SignatureEnvelope wire format (6-byte header):
    version (1) | algorithm_id (1) | key_id (4) | signature

SealedBlob wire format:
    "TSRSEAL1" | nonce (12) | counter_value (8, big-endian) | AES-256-GCM ciphertext
The magic and counter value are bound as associated data, so any modification of the
nonce, counter or ciphertext makes decryption fail.

Counter file format:
    "TSRCTR1" | value (8, big-endian) | HMAC-SHA256 over the preceding bytes
The file counter resists rollback only against an adversary that lacks the sealing key.

Private key material leaves this module only as PEM handed to the sealed repository state,
or for simulated upstream signers in fixtures. It never appears in logs, errors, or reprs.
'''

from abc import ABC, abstractmethod
from dataclasses import dataclass
import os
import struct
import threading

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, hmac, serialization
from cryptography.hazmat.primitives.asymmetric import ed25519, padding, rsa, utils
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

import consts
import errors
from errors import (EntropyUnavailable, MalformedEnvelope, CounterFailure,
                    AuthenticationFailure, StaleSeal, InvalidConfig)
import file_manip
import helper
import logger
from type_checker import CheckType, CheckType2, CheckBytes

kRsaPublicExponent = 65537
kRsaKeySize = 2048

def _RandomBytes(num_bytes: int) -> bytes:
    try:
        return os.urandom(num_bytes)
    except NotImplementedError as e:
        errors.Error(EntropyUnavailable('no system randomness source: {}'.format(e)))
# End _RandomBytes

def _Digest(content: bytes) -> bytes:
    return helper.Sha256(content)

# ============================ Signature Envelope ============================

@dataclass(frozen=True)
class SignatureEnvelope:
    '''
    Member variables:
     - version: int (kEnvelopeVersion)
     - algorithm_id: int (see consts.kAlgorithmIds)
     - key_id: bytes (4 bytes)
     - signature: bytes
    '''
    version: int
    algorithm_id: int
    key_id: bytes
    signature: bytes

    @property
    def algorithm(self) -> str:
        return consts.kAlgorithmNames[self.algorithm_id]

    def Serialize(self) -> bytes:
        return bytes([self.version, self.algorithm_id]) + self.key_id + self.signature

    @staticmethod
    def Parse(data: bytes) -> 'SignatureEnvelope':
        CheckBytes(data, 'data')
        data = bytes(data)
        if (len(data) < consts.kEnvelopeHeaderSize):
            errors.Error(MalformedEnvelope('envelope shorter than header: {} bytes'.format(
                    len(data))))
        version, algorithm_id = data[0], data[1]
        if (version != consts.kEnvelopeVersion):
            errors.Error(MalformedEnvelope('unsupported envelope version: {}'.format(version)))
        if (algorithm_id not in consts.kAlgorithmNames):
            errors.Error(MalformedEnvelope('unknown algorithm id: {}'.format(algorithm_id)))
        algorithm = consts.kAlgorithmNames[algorithm_id]
        signature = data[consts.kEnvelopeHeaderSize :]
        if (len(signature) != consts.kSignatureLengths[algorithm]):
            errors.Error(MalformedEnvelope('{} signature has length {}, expected {}'.format(
                    algorithm, len(signature), consts.kSignatureLengths[algorithm])))
        return SignatureEnvelope(version, algorithm_id, data[2 : consts.kEnvelopeHeaderSize],
                                 signature)
    # End Parse
# End class SignatureEnvelope

# ================================ Public Keys ================================

class PublicKey:
    '''
    Member variables:
     - algorithm: str (kAlgorithmRsa2048 or kAlgorithmEd25519)
     - key_id: bytes (first 4 bytes of SHA-256 of the DER SubjectPublicKeyInfo)
     - der: bytes
     - _key: cryptography public key object
    '''

    def __init__(self, cryptography_key):
        if (isinstance(cryptography_key, rsa.RSAPublicKey)):
            if (cryptography_key.key_size != kRsaKeySize):
                raise ValueError('unsupported RSA key size: {}'.format(cryptography_key.key_size))
            self.algorithm = consts.kAlgorithmRsa2048
        elif (isinstance(cryptography_key, ed25519.Ed25519PublicKey)):
            self.algorithm = consts.kAlgorithmEd25519
        else:
            raise ValueError('unsupported public key type: {}'.format(
                    type(cryptography_key).__name__))
        self._key = cryptography_key
        self.der = cryptography_key.public_bytes(
                serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)
        self.key_id = helper.Sha256(self.der)[: consts.kKeyIdSize]

    # Accepts PEM (bytes or str) or DER bytes
    @staticmethod
    def Load(data: bytes or str) -> 'PublicKey':
        CheckType(data, 'data', (bytes, str))
        raw = data.encode('ascii') if isinstance(data, str) else data
        if (raw.lstrip().startswith(b'-----BEGIN')):
            return PublicKey(serialization.load_pem_public_key(raw.strip()))
        return PublicKey(serialization.load_der_public_key(raw))
    # End Load

    def ToPem(self) -> str:
        return self._key.public_bytes(serialization.Encoding.PEM,
                serialization.PublicFormat.SubjectPublicKeyInfo).decode('ascii')

    @property
    def key_id_hex(self) -> str:
        return self.key_id.hex()

    # Verifies a raw signature over SHA-256(content)
    def Verify(self, signature: bytes, content: bytes) -> bool:
        CheckBytes(signature, 'signature')
        CheckBytes(content, 'content')
        digest = _Digest(content)
        try:
            if (self.algorithm == consts.kAlgorithmRsa2048):
                self._key.verify(bytes(signature), digest, padding.PKCS1v15(),
                                 utils.Prehashed(hashes.SHA256()))
            else:
                self._key.verify(bytes(signature), digest)
        except InvalidSignature:
            return False
        return True
    # End Verify

    def __eq__(self, other) -> bool:
        return isinstance(other, PublicKey) and (self.der == other.der)

    def __hash__(self) -> int:
        return hash(self.der)

    def __repr__(self) -> str:
        return 'PublicKey({}, key_id={})'.format(self.algorithm, self.key_id_hex)
# End class PublicKey

# ================================ Signing Keys ================================

class SigningKeypair:
    '''
    Member variables:
     - algorithm: str
     - public_key: PublicKey
     - key_id: bytes (same as public_key.key_id)
     - _private_key: cryptography private key object (never serialized except for sealing)
    '''

    def __init__(self, private_key):
        self._private_key = private_key
        self.public_key = PublicKey(private_key.public_key())
        self.algorithm = self.public_key.algorithm
        self.key_id = self.public_key.key_id

    # Raw signature over SHA-256(content)
    def Sign(self, content: bytes) -> bytes:
        CheckBytes(content, 'content')
        digest = _Digest(content)
        if (self.algorithm == consts.kAlgorithmRsa2048):
            return self._private_key.sign(digest, padding.PKCS1v15(),
                                          utils.Prehashed(hashes.SHA256()))
        return self._private_key.sign(digest)
    # End Sign

    def __repr__(self) -> str:
        return 'SigningKeypair({}, key_id={})'.format(self.algorithm, self.key_id.hex())
# End class SigningKeypair

def GenerateKeypair(algorithm: str = consts.kAlgorithmRsa2048) -> SigningKeypair:
    CheckType(algorithm, 'algorithm', str)
    if (algorithm not in consts.kAlgorithmIds):
        raise ValueError('unknown signing algorithm: "{}"'.format(algorithm))
    _RandomBytes(1)
    try:
        if (algorithm == consts.kAlgorithmRsa2048):
            private_key = rsa.generate_private_key(
                    public_exponent=kRsaPublicExponent, key_size=kRsaKeySize)
        else:
            private_key = ed25519.Ed25519PrivateKey.generate()
    except (OSError, NotImplementedError) as e:
        errors.Error(EntropyUnavailable('key generation failed: {}'.format(e)))
    keypair = SigningKeypair(private_key)
    logger.Log('Info: generated {} signing key {}'.format(algorithm, keypair.key_id.hex()))
    return keypair
# End GenerateKeypair

# Only for the sealed repository state and for simulated upstream signers
def ExportPrivateKeyPem(key: SigningKeypair) -> str:
    CheckType(key, 'key', SigningKeypair)
    return key._private_key.private_bytes(
            serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption()).decode('ascii')
# End ExportPrivateKeyPem

def LoadPrivateKeyPem(pem: str or bytes) -> SigningKeypair:
    CheckType(pem, 'pem', (str, bytes))
    raw = pem.encode('ascii') if isinstance(pem, str) else pem
    return SigningKeypair(serialization.load_pem_private_key(raw, password=None))
# End LoadPrivateKeyPem

def SignContent(key: SigningKeypair, content: bytes) -> SignatureEnvelope:
    CheckType(key, 'key', SigningKeypair)
    return SignatureEnvelope(consts.kEnvelopeVersion, consts.kAlgorithmIds[key.algorithm],
                             key.key_id, key.Sign(content))
# End SignContent

# Raw detached signature, as carried by ".SIGN.*" entries of packages and indexes
def SignDetached(key: SigningKeypair, data: bytes) -> bytes:
    CheckType(key, 'key', SigningKeypair)
    return key.Sign(data)
# End SignDetached

# Returns True iff some key with the envelope's key id and algorithm verifies it over content
def VerifyEnvelope(envelope: SignatureEnvelope, content: bytes, keys: list) -> bool:
    CheckType(envelope, 'envelope', SignatureEnvelope)
    CheckBytes(content, 'content')
    CheckType2(keys, 'keys', (list, tuple), PublicKey)
    for public_key in keys:
        if ((public_key.key_id == envelope.key_id)
                and (public_key.algorithm == envelope.algorithm)
                and public_key.Verify(envelope.signature, content)):
            return True
    return False
# End VerifyEnvelope

# HKDF-SHA256 derivation of a 32-byte subkey from the configured sealing key
def DeriveKey(master_key: bytes, label: str) -> bytes:
    CheckBytes(master_key, 'master_key')
    CheckType(label, 'label', str)
    hkdf = HKDF(algorithm=hashes.SHA256(), length=consts.kSealingKeySize, salt=None,
                info=label.encode('utf-8'))
    return hkdf.derive(bytes(master_key))
# End DeriveKey

def GetAttestationClaim() -> dict:
    return dict(consts.kAttestationClaim)

# ============================= Monotonic Counters =============================

class MonotonicCounter(ABC):
    @abstractmethod
    def Read(self) -> int:
        pass

    # Returns the new value
    @abstractmethod
    def Increment(self) -> int:
        pass
# End class MonotonicCounter

class InMemoryMonotonicCounter(MonotonicCounter):
    def __init__(self, initial_value: int = 0):
        self._value = initial_value
        self._lock = threading.Lock()

    def Read(self) -> int:
        with self._lock:
            return self._value

    def Increment(self) -> int:
        with self._lock:
            self._value += 1
            return self._value
# End class InMemoryMonotonicCounter

class FileMonotonicCounter(MonotonicCounter):
    '''
    Member variables:
     - path: str
     - _mac_key: bytes
     - _lock: threading.Lock

    A missing counter file reads as 0.
    '''

    def __init__(self, path: str, mac_key: bytes):
        CheckType(path, 'path', str)
        CheckBytes(mac_key, 'mac_key')
        self.path = path
        self._mac_key = bytes(mac_key)
        self._lock = threading.Lock()

    def _Mac(self, data: bytes) -> bytes:
        mac = hmac.HMAC(self._mac_key, hashes.SHA256())
        mac.update(data)
        return mac.finalize()

    def _ReadUnlocked(self) -> int:
        try:
            contents = helper.ReadBytes(self.path)
        except OSError as e:
            errors.Error(CounterFailure('cannot read counter file {}: {}'.format(self.path, e)))
        if (contents is None):
            return 0
        magic_size = len(consts.kCounterFileMagic)
        expected_size = magic_size + 8 + consts.kCounterMacSize
        if ((len(contents) != expected_size) or not contents.startswith(consts.kCounterFileMagic)):
            errors.Error(CounterFailure('malformed counter file: {}'.format(self.path)))
        body, tag = contents[: magic_size + 8], contents[magic_size + 8 :]
        mac = hmac.HMAC(self._mac_key, hashes.SHA256())
        mac.update(body)
        try:
            mac.verify(tag)
        except InvalidSignature:
            errors.Error(CounterFailure('counter file MAC mismatch: {}'.format(self.path)))
        return struct.unpack('>Q', body[magic_size :])[0]
    # End _ReadUnlocked

    def Read(self) -> int:
        with self._lock:
            return self._ReadUnlocked()

    def Increment(self) -> int:
        with self._lock:
            new_value = self._ReadUnlocked() + 1
            body = consts.kCounterFileMagic + struct.pack('>Q', new_value)
            try:
                file_manip.WriteBytesAtomically(body + self._Mac(body), self.path)
            except OSError as e:
                errors.Error(CounterFailure('cannot write counter file {}: {}'.format(
                        self.path, e)))
            return new_value
    # End Increment
# End class FileMonotonicCounter

# ================================== Sealing ==================================

@dataclass(frozen=True)
class SealedBlob:
    '''
    Member variables:
     - nonce: bytes (12 bytes)
     - counter_value: int (unsigned 64-bit)
     - ciphertext: bytes (AES-256-GCM output, tag included)
    '''
    nonce: bytes
    counter_value: int
    ciphertext: bytes

    def Serialize(self) -> bytes:
        return (consts.kSealedBlobMagic + self.nonce + struct.pack('>Q', self.counter_value)
                + self.ciphertext)

    @staticmethod
    def Parse(data: bytes) -> 'SealedBlob':
        CheckBytes(data, 'data')
        data = bytes(data)
        header_size = len(consts.kSealedBlobMagic) + consts.kSealNonceSize + 8
        if ((len(data) < header_size) or not data.startswith(consts.kSealedBlobMagic)):
            errors.Error(AuthenticationFailure('malformed sealed blob'))
        nonce_start = len(consts.kSealedBlobMagic)
        counter_start = nonce_start + consts.kSealNonceSize
        counter_value = struct.unpack('>Q', data[counter_start : header_size])[0]
        return SealedBlob(data[nonce_start : counter_start], counter_value, data[header_size :])
    # End Parse
# End class SealedBlob

def _AssociatedData(counter_value: int) -> bytes:
    return consts.kSealedBlobMagic + struct.pack('>Q', counter_value)

def _CheckSealingKey(sealing_key: bytes):
    CheckBytes(sealing_key, 'sealing_key')
    if (len(sealing_key) != consts.kSealingKeySize):
        errors.Error(InvalidConfig('sealing key must be {} bytes'.format(consts.kSealingKeySize)))
# End _CheckSealingKey

# Increments the counter, then encrypts state bound to the new counter value
def Seal(state: bytes, counter: MonotonicCounter, sealing_key: bytes) -> SealedBlob:
    CheckBytes(state, 'state')
    CheckType(counter, 'counter', MonotonicCounter)
    _CheckSealingKey(sealing_key)
    try:
        counter_value = counter.Increment()
    except CounterFailure:
        raise
    except Exception as e:
        errors.Error(CounterFailure('counter increment failed: {}'.format(e)))
    nonce = _RandomBytes(consts.kSealNonceSize)
    ciphertext = AESGCM(bytes(sealing_key)).encrypt(
            nonce, bytes(state), _AssociatedData(counter_value))
    return SealedBlob(nonce, counter_value, ciphertext)
# End Seal

# check_freshness=False is reserved for operator-forced re-initialization
def Unseal(blob: SealedBlob, counter: MonotonicCounter, sealing_key: bytes,
           check_freshness: bool = True) -> bytes:
    CheckType(blob, 'blob', SealedBlob)
    CheckType(counter, 'counter', MonotonicCounter)
    _CheckSealingKey(sealing_key)
    try:
        state = AESGCM(bytes(sealing_key)).decrypt(
                blob.nonce, blob.ciphertext, _AssociatedData(blob.counter_value))
    except (InvalidTag, ValueError):
        errors.Error(AuthenticationFailure('sealed blob failed authentication'))
    if (check_freshness):
        current_value = counter.Read()
        if (blob.counter_value != current_value):
            errors.Error(StaleSeal('sealed blob counter {} does not match current counter {}'
                                   .format(blob.counter_value, current_value)))
    return state
# End Unseal
