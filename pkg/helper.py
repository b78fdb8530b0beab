import base64
import hashlib
import os
from typing import List

from type_checker import CheckType, CheckBytes

# ========================== Generic Helper Methods ==========================

# Read lines of a text file to a list of strings
# Safe against file not existing
def ReadFile(fullpath: str, retain_newlines: bool = True) -> List[str]:
    CheckType(fullpath, 'fullpath', str)
    CheckType(retain_newlines, 'retain_newlines', bool)
    try:
        with open(fullpath, encoding='utf-8') as input_file:
            lines = input_file.readlines()
        if (not retain_newlines):
            lines = [line.rstrip('\n') for line in lines]
        return lines
    except FileNotFoundError:
        return []
# End ReadFile

# Returns None if the file does not exist
def ReadBytes(fullpath: str) -> bytes or None:
    CheckType(fullpath, 'fullpath', str)
    try:
        with open(fullpath, 'rb') as input_file:
            return input_file.read()
    except FileNotFoundError:
        return None
# End ReadBytes

# Writes data to the file determined by fullpath
# Overwrites the given file if it already exists
# If data is a non-string iterable type, then it is written as newline-separated items
# Otherwise, str(data) is written directly to file
# Safe against directory not existing (creates directory if missing)
def WriteToFile(data, fullpath: str):
    parent_directory = os.path.dirname(fullpath)
    if (parent_directory != ''):
        os.makedirs(parent_directory, exist_ok = True)
    with open(fullpath, 'w', encoding='utf-8') as f:
        if (isinstance(data, str)):
            f.write(data)
        else:
            try:
                f.write('\n'.join(str(x) for x in data))
            except TypeError:
                f.write(str(data))
# End WriteToFile

# ============================ Digests and Encodings ============================

def Sha256(data: bytes) -> bytes:
    CheckBytes(data, 'data')
    return hashlib.sha256(data).digest()
# End Sha256

def Sha256Hex(data: bytes) -> str:
    CheckBytes(data, 'data')
    return hashlib.sha256(data).hexdigest()
# End Sha256Hex

def Sha1(data: bytes) -> bytes:
    CheckBytes(data, 'data')
    return hashlib.sha1(data).digest()
# End Sha1

def B64Encode(data: bytes) -> str:
    return base64.b64encode(data).decode('ascii')
# End B64Encode

def B64Decode(text: str) -> bytes:
    CheckType(text, 'text', str)
    return base64.b64decode(text.encode('ascii'), validate=True)
# End B64Decode

# Rounds size up to the next multiple of block_size
def PadToBlock(size: int, block_size: int) -> int:
    return -(-size // block_size) * block_size
# End PadToBlock

# Quotes a word for a POSIX shell using single quotes, unless it is purely "safe" characters
kShellSafeCharacters = frozenset(
        'abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789@%+=:,./-_')

def ShellQuote(word: str) -> str:
    CheckType(word, 'word', str)
    if ((word != '') and all(c in kShellSafeCharacters for c in word)):
        return word
    return "'" + word.replace("'", "'\\''") + "'"
# End ShellQuote
