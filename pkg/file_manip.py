'''
The purpose of this file is to provide file manipulation functions that do not generate errors,
but rather do what you would naturally expect them to do to fix whatever errors they encounter.
For example, when writing a file, missing parent directories are created rather than raising.
Note: we still raise if a write itself fails, since the caller must learn that its state was
not persisted (sealed state and cached packages depend on it).

Functions:
 - WriteBytesAtomically(data, destination_path)
 - MoveFile(source_path, destination_path)
 - RemoveFileIfExists(filepath)
 - ListFilesInDirectory(directory_path, suffix)
 - IsDirectoryWritable(directory_path)

'''

import os
import os.path
import tempfile

from type_checker import CheckType, CheckBytes

# Writes to a temporary file in the same directory, fsyncs, then renames over destination,
# so readers see either the old or the new content, never a torn file
def WriteBytesAtomically(data: bytes, destination_path: str):
    CheckBytes(data, 'data')
    CheckType(destination_path, 'destination_path', str)
    destination_directory: str = os.path.dirname(destination_path) or '.'
    os.makedirs(destination_directory, exist_ok = True)
    file_descriptor, temporary_path = tempfile.mkstemp(
            dir=destination_directory, prefix='.tmp-', suffix=os.path.basename(destination_path))
    try:
        with os.fdopen(file_descriptor, 'wb') as temporary_file:
            temporary_file.write(data)
            temporary_file.flush()
            os.fsync(temporary_file.fileno())
        os.replace(temporary_path, destination_path)
    except BaseException:
        RemoveFileIfExists(temporary_path)
        raise
# End WriteBytesAtomically

# Makes directories on path to destination if not exists
# Overwrites destination if exists, with a single rename
def MoveFile(source_path: str, destination_path: str):
    CheckType(source_path, 'source_path', str)
    CheckType(destination_path, 'destination_path', str)
    destination_directory: str = os.path.dirname(destination_path)
    if (destination_directory != ''):
        os.makedirs(destination_directory, exist_ok = True)
    os.replace(source_path, destination_path)
# End MoveFile

# Removes the file if it exists
# Does nothing if the file or the directory to the file does not exist
def RemoveFileIfExists(filepath: str):
    CheckType(filepath, 'filepath', str)
    if (os.path.isfile(filepath)):
        os.remove(filepath)
# End RemoveFileIfExists

# Returns the sorted names of regular files in the directory ending with suffix
# Returns an empty list if the directory does not exist
def ListFilesInDirectory(directory_path: str, suffix: str = ''):
    CheckType(directory_path, 'directory_path', str)
    if (not os.path.isdir(directory_path)):
        return []
    return sorted(f for f in os.listdir(directory_path)
                  if os.path.isfile(os.path.join(directory_path, f)) and f.endswith(suffix))
# End ListFilesInDirectory

# Creates the directory if missing, then checks that a file can be created inside it
def IsDirectoryWritable(directory_path: str) -> bool:
    CheckType(directory_path, 'directory_path', str)
    try:
        os.makedirs(directory_path, exist_ok = True)
        with tempfile.TemporaryFile(dir=directory_path):
            pass
        return True
    except OSError:
        return False
# End IsDirectoryWritable
