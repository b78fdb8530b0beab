'''
Interpreter for the script subset accepted by script_parser, running against an in-memory
filesystem. Used to check that installing sanitized packages in any order yields identical
configuration files, and by the install verifier.

User/group creation commands are simulated with the append semantics of the real tools
(next free id above the existing ones), so running unsanitized scripts in different orders
produces observably different configuration files.
'''

from dataclasses import dataclass, field
import posixpath
import re
from typing import Dict, List, Tuple

import consts
import errors
from errors import SimulationUnsupported
import sanitizer
import script_parser
from script_parser import AndOrList, IfBlock, PartKind, Pipeline, SimpleCommand, Word
from type_checker import CheckType, CheckBytes

kFile = 'file'
kDirectory = 'directory'
kSymlink = 'symlink'

@dataclass
class FsNode:
    '''
    Member variables:
     - kind: kFile, kDirectory or kSymlink
     - content: bytes (files only)
     - mode, uid, gid: int
     - link_target: str (symlinks only)
     - xattrs: dict {name : bytes}
    '''
    kind: str
    content: bytes = b''
    mode: int = 0o644
    uid: int = 0
    gid: int = 0
    link_target: str = None
    xattrs: Dict[str, bytes] = field(default_factory=dict)
# End class FsNode

class FsError(Exception):
    pass

class InMemoryFilesystem:
    '''
    A tree of FsNode keyed by normalized absolute path. Symlinks are stored, never followed.

    Member variables:
     - nodes: dict {path : FsNode}
    '''

    def __init__(self):
        # A target root always has /etc
        self.nodes: Dict[str, FsNode] = {'/' : FsNode(kDirectory, mode=0o755),
                                         '/etc' : FsNode(kDirectory, mode=0o755)}

    @staticmethod
    def Normalize(path: str, cwd: str = '/') -> str:
        CheckType(path, 'path', str)
        if (path == ''):
            raise FsError('empty path')
        return posixpath.normpath(posixpath.join(cwd, path)).replace('//', '/')
    # End Normalize

    def Exists(self, path: str) -> bool:
        return self.Normalize(path) in self.nodes

    def Get(self, path: str) -> FsNode or None:
        return self.nodes.get(self.Normalize(path))

    def IsFile(self, path: str) -> bool:
        node = self.Get(path)
        return (node is not None) and (node.kind == kFile)

    def IsDirectory(self, path: str) -> bool:
        node = self.Get(path)
        return (node is not None) and (node.kind == kDirectory)

    def _CheckParent(self, path: str, create_parents: bool):
        parent = posixpath.dirname(path)
        if (create_parents):
            self.MakeDirectory(parent, parents=True)
        elif (not self.IsDirectory(parent)):
            raise FsError('{}: no such directory'.format(parent))
    # End _CheckParent

    def MakeDirectory(self, path: str, parents: bool = False, mode: int = 0o755):
        path = self.Normalize(path)
        node = self.nodes.get(path)
        if (node is not None):
            if ((node.kind == kDirectory) and parents):
                return
            raise FsError('{}: already exists'.format(path))
        self._CheckParent(path, parents)
        self.nodes[path] = FsNode(kDirectory, mode=mode)
    # End MakeDirectory

    def ReadFile(self, path: str) -> bytes:
        node = self.Get(path)
        if ((node is None) or (node.kind != kFile)):
            raise FsError('{}: no such file'.format(path))
        return node.content
    # End ReadFile

    # Replaces content but keeps mode, owner and xattrs of an existing file, like O_TRUNC
    def WriteFile(self, path: str, content: bytes, append: bool = False, mode: int = 0o644,
                  create_parents: bool = False):
        CheckBytes(content, 'content')
        path = self.Normalize(path)
        node = self.nodes.get(path)
        if (node is None):
            self._CheckParent(path, create_parents)
            self.nodes[path] = FsNode(kFile, content=bytes(content), mode=mode)
            return
        if (node.kind != kFile):
            raise FsError('{}: not a regular file'.format(path))
        node.content = (node.content + bytes(content)) if append else bytes(content)
    # End WriteFile

    def Symlink(self, link_target: str, path: str, force: bool = False):
        path = self.Normalize(path)
        if (path in self.nodes):
            if (not force):
                raise FsError('{}: already exists'.format(path))
            self.Remove(path)
        self._CheckParent(path, False)
        self.nodes[path] = FsNode(kSymlink, mode=0o777, link_target=link_target)
    # End Symlink

    def Children(self, path: str) -> List[str]:
        prefix = self.Normalize(path).rstrip('/') + '/'
        return sorted(node_path for node_path in self.nodes
                      if node_path.startswith(prefix) and (node_path != prefix.rstrip('/')))
    # End Children

    def Remove(self, path: str, recursive: bool = False):
        path = self.Normalize(path)
        node = self.nodes.get(path)
        if (node is None):
            raise FsError('{}: no such file or directory'.format(path))
        if (path == '/'):
            raise FsError('refusing to remove /')
        children = self.Children(path) if (node.kind == kDirectory) else []
        if ((len(children) > 0) and not recursive):
            raise FsError('{}: directory not empty'.format(path))
        for child in children:
            del self.nodes[child]
        del self.nodes[path]
    # End Remove

    def Move(self, source: str, destination: str):
        source = self.Normalize(source)
        destination = self.Normalize(destination)
        if (source not in self.nodes):
            raise FsError('{}: no such file or directory'.format(source))
        if (self.IsDirectory(destination)):
            destination = posixpath.join(destination, posixpath.basename(source))
        self._CheckParent(destination, False)
        moved = [source] + (self.Children(source) if self.IsDirectory(source) else [])
        for old_path in moved:
            self.nodes[destination + old_path[len(source) :]] = self.nodes.pop(old_path)
    # End Move

    def Copy(self, source: str, destination: str, recursive: bool = False):
        source = self.Normalize(source)
        destination = self.Normalize(destination)
        node = self.nodes.get(source)
        if (node is None):
            raise FsError('{}: no such file or directory'.format(source))
        if ((node.kind == kDirectory) and not recursive):
            raise FsError('{}: is a directory'.format(source))
        if (self.IsDirectory(destination)):
            destination = posixpath.join(destination, posixpath.basename(source))
        self._CheckParent(destination, False)
        copied = [source] + (self.Children(source) if (node.kind == kDirectory) else [])
        for old_path in copied:
            original = self.nodes[old_path]
            self.nodes[destination + old_path[len(source) :]] = FsNode(
                    original.kind, original.content, original.mode, original.uid, original.gid,
                    original.link_target, dict(original.xattrs))
    # End Copy

    def SetXattr(self, path: str, name: str, value: bytes):
        node = self.Get(path)
        if (node is None):
            raise FsError('{}: no such file or directory'.format(path))
        node.xattrs[name] = bytes(value)
    # End SetXattr

    def GetXattr(self, path: str, name: str) -> bytes or None:
        node = self.Get(path)
        return None if (node is None) else node.xattrs.get(name)

    # Snapshot of the configuration files, for comparing install orders
    def ConfigSnapshot(self) -> Dict[str, bytes or None]:
        return {path : (self.ReadFile(path) if self.IsFile(path) else None)
                for path in consts.kConfigPaths}
# End class InMemoryFilesystem

# ================================ Interpreter ================================

@dataclass
class ScriptResult:
    exit_status: int
    stdout: str
    stderr: List[str]

class _ExitScript(Exception):
    def __init__(self, status: int):
        super().__init__(status)
        self.status = status

kPrintfEscapes = {'n' : '\n', 't' : '\t', '\\' : '\\', 'r' : '\r'}

def _UnescapePrintf(text: str) -> str:
    return re.sub(r'\\(.)', lambda match: kPrintfEscapes.get(match.group(1),
                                                            '\\' + match.group(1)), text)

class _Interpreter:
    def __init__(self, fs: InMemoryFilesystem, environment: Dict[str, str]):
        self.fs = fs
        self.variables = dict(environment)
        self.last_status = 0
        self.errexit = False
        self.stderr = []
        self.output = []
        self.current_command = None
        self.commands = {
            ':' : self.CmdTrue, 'true' : self.CmdTrue, 'false' : self.CmdFalse,
            'echo' : self.CmdEcho, 'printf' : self.CmdPrintf, 'exit' : self.CmdExit,
            'test' : self.CmdTest, '[' : self.CmdBracket, 'set' : self.CmdSet,
            'mkdir' : self.CmdMkdir, 'rmdir' : self.CmdRmdir, 'rm' : self.CmdRm,
            'mv' : self.CmdMv, 'cp' : self.CmdCp, 'ln' : self.CmdLn, 'chmod' : self.CmdChmod,
            'chown' : self.CmdChown, 'install' : self.CmdInstall, 'touch' : self.CmdTouch,
            'grep' : self.CmdGrep, 'cat' : self.CmdCat, 'setfattr' : self.CmdSetfattr,
            'adduser' : self.CmdAddUser, 'useradd' : self.CmdAddUser,
            'addgroup' : self.CmdAddGroup, 'groupadd' : self.CmdAddGroup}

    # ------------------------------ expansion ------------------------------

    def ExpandWord(self, word: Word) -> str:
        pieces = []
        for kind, text in word.parts:
            if (kind == PartKind.kLiteral):
                pieces.append(text)
            elif (kind == PartKind.kVariable):
                pieces.append(str(self.last_status) if (text == '?')
                              else self.variables.get(text, ''))
            else:
                errors.Error(SimulationUnsupported('parameter expansion "${{{}}}"'.format(text)))
        return ''.join(pieces)
    # End ExpandWord

    # ------------------------------ execution ------------------------------

    def RunItems(self, items: list, in_condition: bool = False) -> int:
        status = 0
        for item in items:
            if (isinstance(item, IfBlock)):
                status = self.RunIf(item)
            else:
                status = self.RunAndOr(item)
                if (self.errexit and (status != 0) and not in_condition):
                    raise _ExitScript(status)
        return status
    # End RunItems

    def RunIf(self, block: IfBlock) -> int:
        for condition, body in block.clauses:
            if (self.RunItems(condition, in_condition=True) == 0):
                return self.RunItems(body)
        if (block.else_body is not None):
            return self.RunItems(block.else_body)
        return 0
    # End RunIf

    def RunAndOr(self, and_or: AndOrList) -> int:
        status = self.RunPipeline(and_or.pipelines[0])
        for operator, pipeline in zip(and_or.operators, and_or.pipelines[1 :]):
            if ((operator == '&&') == (status == 0)):
                status = self.RunPipeline(pipeline)
        return status
    # End RunAndOr

    def RunPipeline(self, pipeline: Pipeline) -> int:
        stdin = ''
        status = 0
        for command in pipeline.commands:
            status, stdin = self.RunCommand(command, stdin)
        self.output.append(stdin)
        if (pipeline.negated):
            status = 0 if (status != 0) else 1
        self.last_status = status
        return status
    # End RunPipeline

    def RunCommand(self, command: SimpleCommand, stdin: str) -> Tuple[int, str]:
        assignments = {}
        for word in command.assignments:
            name, _, _ = word.value.partition('=')
            assignments[name] = self.ExpandWord(word)[len(name) + 1 :]
        if (len(command.words) == 0):
            self.variables.update(assignments)
            return 0, ''
        arguments = [self.ExpandWord(word) for word in command.words]
        name = command.name
        if (name not in self.commands):
            errors.Error(SimulationUnsupported('command "{}" is not simulated'.format(name)))
        saved_variables = dict(self.variables)
        self.current_command = command
        self.variables.update(assignments)
        try:
            status, stdout = self.commands[name](arguments[1 :], stdin)
        except FsError as e:
            self.stderr.append('{}: {}'.format(name, e))
            status, stdout = 1, ''
        finally:
            self.variables = saved_variables
        return self.ApplyRedirects(command, status, stdout)
    # End RunCommand

    def ApplyRedirects(self, command: SimpleCommand, status: int, stdout: str) -> Tuple[int, str]:
        for redirect in command.redirects:
            target = self.ExpandWord(redirect.target)
            descriptor = redirect.io_number if (redirect.io_number is not None) else 1
            if (redirect.operator in ('>&', '<&', '<')):
                continue
            if (target == script_parser.kNullDevice):
                if ((descriptor == 1) or (redirect.operator == '&>')):
                    stdout = ''
                continue
            if ((descriptor != 1) and (redirect.operator != '&>')):
                continue
            try:
                self.fs.WriteFile(target, stdout.encode('utf-8'), append=(redirect.operator == '>>'))
            except FsError as e:
                self.stderr.append(str(e))
                return 1, ''
            stdout = ''
        return status, stdout
    # End ApplyRedirects

    # ------------------------------- builtins -------------------------------

    def CmdTrue(self, arguments, stdin):
        return 0, ''

    def CmdFalse(self, arguments, stdin):
        return 1, ''

    def CmdEcho(self, arguments, stdin):
        if (arguments[: 1] == ['-n']):
            return 0, ' '.join(arguments[1 :])
        return 0, ' '.join(arguments) + '\n'

    def CmdPrintf(self, arguments, stdin):
        if (len(arguments) == 0):
            return 1, ''
        format_string, values = _UnescapePrintf(arguments[0]), arguments[1 :]
        if ('%' not in format_string):
            return 0, format_string
        if (format_string.count('%s') != format_string.count('%')):
            errors.Error(SimulationUnsupported('printf format "{}"'.format(arguments[0])))
        slots = format_string.count('%s')
        output = ''
        while (True):
            chunk = values[: slots]
            values = values[slots :]
            output += format_string.replace('%s', '{}').format(*(chunk + [''] * (slots - len(chunk))))
            if (len(values) == 0):
                break
        return 0, output
    # End CmdPrintf

    def CmdExit(self, arguments, stdin):
        raise _ExitScript(int(arguments[0]) if arguments else self.last_status)

    def CmdSet(self, arguments, stdin):
        for argument in arguments:
            if (argument.startswith('-') and ('e' in argument)):
                self.errexit = True
            elif (argument.startswith('+') and ('e' in argument)):
                self.errexit = False
        return 0, ''
    # End CmdSet

    def CmdBracket(self, arguments, stdin):
        if (arguments[-1 :] != [']']):
            return 2, ''
        return self.CmdTest(arguments[: -1], stdin)

    def CmdTest(self, arguments, stdin):
        negate = False
        if (arguments[: 1] == ['!']):
            negate, arguments = True, arguments[1 :]
        if (len(arguments) == 0):
            result = False
        elif (len(arguments) == 1):
            result = arguments[0] != ''
        elif (len(arguments) == 2):
            operator, operand = arguments
            file_tests = {'-e' : self.fs.Exists, '-f' : self.fs.IsFile,
                          '-d' : self.fs.IsDirectory,
                          '-x' : lambda path: self.fs.Exists(path) and bool(self.fs.Get(path).mode & 0o111),
                          '-L' : lambda path: self.fs.Exists(path) and self.fs.Get(path).kind == kSymlink,
                          '-s' : lambda path: self.fs.IsFile(path) and len(self.fs.ReadFile(path)) > 0}
            if (operator == '-z'):
                result = operand == ''
            elif (operator == '-n'):
                result = operand != ''
            elif (operator in file_tests):
                result = file_tests[operator](operand)
            else:
                errors.Error(SimulationUnsupported('test operator "{}"'.format(operator)))
        elif ((len(arguments) == 3) and (arguments[1] in ('=', '!=', '-eq', '-ne'))):
            left, operator, right = arguments
            if (operator in ('-eq', '-ne')):
                result = (int(left) == int(right)) == (operator == '-eq')
            else:
                result = (left == right) == (operator == '=')
        else:
            errors.Error(SimulationUnsupported('test expression {}'.format(arguments)))
        return (0 if (result != negate) else 1), ''
    # End CmdTest

    @staticmethod
    def SplitFlags(arguments: List[str]) -> Tuple[str, List[str]]:
        flags = ''
        operands = []
        for argument in arguments:
            if (argument.startswith('-') and (len(argument) > 1) and not operands):
                flags += argument[1 :]
            else:
                operands.append(argument)
        return flags, operands
    # End SplitFlags

    def CmdMkdir(self, arguments, stdin):
        mode = 0o755
        if ('-m' in arguments):
            index = arguments.index('-m')
            mode = int(arguments[index + 1], 8)
            arguments = arguments[: index] + arguments[index + 2 :]
        flags, paths = self.SplitFlags(arguments)
        for path in paths:
            self.fs.MakeDirectory(path, parents=('p' in flags), mode=mode)
        return 0, ''
    # End CmdMkdir

    def CmdRmdir(self, arguments, stdin):
        _, paths = self.SplitFlags(arguments)
        for path in paths:
            if (not self.fs.IsDirectory(path)):
                raise FsError('{}: not a directory'.format(path))
            self.fs.Remove(path)
        return 0, ''
    # End CmdRmdir

    def CmdRm(self, arguments, stdin):
        flags, paths = self.SplitFlags(arguments)
        for path in paths:
            if (not self.fs.Exists(path)):
                if ('f' in flags):
                    continue
                raise FsError('{}: no such file or directory'.format(path))
            if (self.fs.IsDirectory(path) and not (('r' in flags) or ('R' in flags))):
                raise FsError('{}: is a directory'.format(path))
            self.fs.Remove(path, recursive=True)
        return 0, ''
    # End CmdRm

    def CmdMv(self, arguments, stdin):
        _, paths = self.SplitFlags(arguments)
        for source in paths[: -1]:
            self.fs.Move(source, paths[-1])
        return 0, ''

    def CmdCp(self, arguments, stdin):
        flags, paths = self.SplitFlags(arguments)
        for source in paths[: -1]:
            self.fs.Copy(source, paths[-1], recursive=any(c in flags for c in 'rRa'))
        return 0, ''

    def CmdLn(self, arguments, stdin):
        flags, paths = self.SplitFlags(arguments)
        if ('s' not in flags):
            errors.Error(SimulationUnsupported('hard links'))
        self.fs.Symlink(paths[0], paths[1], force=('f' in flags))
        return 0, ''
    # End CmdLn

    def CmdChmod(self, arguments, stdin):
        _, operands = self.SplitFlags(arguments)
        if (not re.match(r'^[0-7]{3,4}$', operands[0])):
            errors.Error(SimulationUnsupported('symbolic mode "{}"'.format(operands[0])))
        for path in operands[1 :]:
            node = self.fs.Get(path)
            if (node is None):
                raise FsError('{}: no such file or directory'.format(path))
            node.mode = int(operands[0], 8)
        return 0, ''
    # End CmdChmod

    def LookupId(self, path: str, name: str) -> int:
        if (name.isdigit()):
            return int(name)
        if (self.fs.IsFile(path)):
            for line in self.fs.ReadFile(path).decode('utf-8').splitlines():
                fields = line.split(':')
                if ((len(fields) >= 3) and (fields[0] == name)):
                    return int(fields[2])
        raise FsError('unknown user or group "{}"'.format(name))
    # End LookupId

    def CmdChown(self, arguments, stdin):
        _, operands = self.SplitFlags(arguments)
        owner, _, group = operands[0].partition(':')
        for path in operands[1 :]:
            node = self.fs.Get(path)
            if (node is None):
                raise FsError('{}: no such file or directory'.format(path))
            if (owner != ''):
                node.uid = self.LookupId(consts.kPasswdPath, owner)
            if (group != ''):
                node.gid = self.LookupId(consts.kGroupPath, group)
        return 0, ''
    # End CmdChown

    def CmdInstall(self, arguments, stdin):
        mode = 0o755
        directory_mode = False
        operands = []
        index = 0
        while (index < len(arguments)):
            argument = arguments[index]
            if (argument == '-d'):
                directory_mode = True
            elif (argument == '-m'):
                mode = int(arguments[index + 1], 8)
                index += 1
            elif (argument in ('-o', '-g')):
                index += 1
            else:
                operands.append(argument)
            index += 1
        if (directory_mode):
            for path in operands:
                self.fs.MakeDirectory(path, parents=True, mode=mode)
            return 0, ''
        self.fs.Copy(operands[0], operands[1])
        destination = operands[1]
        if (self.fs.IsDirectory(destination)):
            destination = posixpath.join(destination, posixpath.basename(operands[0]))
        self.fs.Get(destination).mode = mode
        return 0, ''
    # End CmdInstall

    def CmdTouch(self, arguments, stdin):
        _, paths = self.SplitFlags(arguments)
        for path in paths:
            if (not self.fs.Exists(path)):
                self.fs.WriteFile(path, b'')
        return 0, ''
    # End CmdTouch

    def CmdCat(self, arguments, stdin):
        if (len(arguments) == 0):
            return 0, stdin
        return 0, ''.join(self.fs.ReadFile(path).decode('utf-8') for path in arguments)

    def CmdGrep(self, arguments, stdin):
        flags, operands = self.SplitFlags(arguments)
        if (set(flags) - set('qsE')):
            errors.Error(SimulationUnsupported('grep flags "{}"'.format(flags)))
        pattern, paths = operands[0], operands[1 :]
        text = stdin if (len(paths) == 0) else ''.join(
                self.fs.ReadFile(path).decode('utf-8') for path in paths if self.fs.IsFile(path))
        matches = [line for line in text.splitlines() if re.search(pattern, line)]
        output = '' if ('q' in flags) else ''.join(line + '\n' for line in matches)
        return (0 if matches else 1), output
    # End CmdGrep

    def CmdSetfattr(self, arguments, stdin):
        if ((len(arguments) != 5) or (arguments[0] != '-n') or (arguments[2] != '-v')):
            errors.Error(SimulationUnsupported('setfattr {}'.format(arguments)))
        value = arguments[3]
        raw = bytes.fromhex(value[2 :]) if value.startswith('0x') else value.encode('utf-8')
        self.fs.SetXattr(arguments[4], arguments[1], raw)
        return 0, ''
    # End CmdSetfattr

    # ----------------------- unsanitized identity tools -----------------------

    def ReadConfigLines(self, path: str) -> List[str]:
        return self.fs.ReadFile(path).decode('utf-8').splitlines() if self.fs.IsFile(path) else []

    def AppendConfigLine(self, path: str, line: str):
        self.fs.WriteFile(path, (line + '\n').encode('utf-8'), append=True, create_parents=True)

    def NextFreeId(self, path: str) -> int:
        used = set(int(line.split(':')[2]) for line in self.ReadConfigLines(path)
                   if len(line.split(':')) >= 3)
        next_id = consts.kFirstAutoId
        while (next_id in used):
            next_id += 1
        return next_id
    # End NextFreeId

    def HasEntry(self, path: str, name: str) -> bool:
        return any(line.split(':')[0] == name for line in self.ReadConfigLines(path))

    def AddGroupEntry(self, name: str, gid: int = None):
        if (not self.HasEntry(consts.kGroupPath, name)):
            gid = self.NextFreeId(consts.kGroupPath) if (gid is None) else gid
            self.AppendConfigLine(consts.kGroupPath, '{}:x:{}:'.format(name, gid))

    def AddMember(self, user: str, group: str):
        lines = self.ReadConfigLines(consts.kGroupPath)
        for index, line in enumerate(lines):
            fields = line.split(':')
            if (fields[0] == group):
                members = [member for member in fields[3].split(',') if member]
                if (user not in members):
                    fields[3] = ','.join(members + [user])
                lines[index] = ':'.join(fields)
                self.fs.WriteFile(consts.kGroupPath, ''.join(l + '\n' for l in lines).encode())
                return 0
        raise FsError('group "{}" does not exist'.format(group))
    # End AddMember

    # Option parsing is shared with the sanitizer so both read scripts the same way
    def CmdAddUser(self, arguments, stdin):
        try:
            identities = sanitizer.IdentitiesFromCommand(self.current_command)
        except ValueError as e:
            errors.Error(SimulationUnsupported(str(e)))
        for group in identities.groups:
            self.AddGroupEntry(group.name, group.explicit_gid)
        for user in identities.users:
            if (self.HasEntry(consts.kPasswdPath, user.name)):
                raise FsError('user "{}" already exists'.format(user.name))
            uid = self.NextFreeId(consts.kPasswdPath) if (user.explicit_uid is None) \
                    else user.explicit_uid
            gid = self.LookupId(consts.kGroupPath, user.primary_group)
            self.AppendConfigLine(consts.kPasswdPath, '{}:x:{}:{}:{}:{}:{}'.format(
                    user.name, uid, gid, user.gecos, user.home, user.shell))
            self.AppendConfigLine(consts.kShadowPath, consts.kShadowLineTemplate.format(
                    user.name, user.password_field))
        for user_name, group_name in identities.memberships:
            self.AddMember(user_name, group_name)
        return 0, ''
    # End CmdAddUser

    def CmdAddGroup(self, arguments, stdin):
        return self.CmdAddUser(arguments, stdin)
# End class _Interpreter

def RunScript(text: str, fs: InMemoryFilesystem, environment: Dict[str, str] = None) -> ScriptResult:
    CheckType(text, 'text', str)
    CheckType(fs, 'fs', InMemoryFilesystem)
    parsed = script_parser.ParseScript(text)
    if (not parsed.IsSupported()):
        errors.Error(SimulationUnsupported(parsed.unsupported_reason))
    interpreter = _Interpreter(fs, environment or {})
    try:
        status = interpreter.RunItems(parsed.items)
    except _ExitScript as e:
        status = e.status
    return ScriptResult(status, ''.join(interpreter.output), interpreter.stderr)
# End RunScript
