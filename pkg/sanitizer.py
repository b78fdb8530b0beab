'''
Package sanitization: classify install scripts, learn the users and groups a repository's
packages create, predict the resulting /etc/passwd, /etc/group and /etc/shadow, and rewrite
packages so installing any subset of them in any order yields the same configuration.

A sanitized package:
 - has every user/group creation command replaced by ":" and, in each script that had one,
   a preamble that writes the predicted configuration files and installs their signatures
 - has every "touch P" followed by the installation of a signature over empty content
 - carries a security.ima signature record on every regular data entry and script
 - is re-signed by the repository key

Packages whose scripts change configuration, activate shells, or do anything the
classifier does not recognize are rejected.
'''

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
import time
from typing import Dict, List, Set, Tuple

import archive
import consts
import errors
from errors import ConflictingIdentity, UidExhaustion, RewriteUnsupported, UndefinedIdentity
import helper
import keystore
from keystore import SignatureEnvelope, SigningKeypair
import logger
import package
from package import ApkPackage
import script_parser
from script_parser import SimpleCommand
from type_checker import CheckType, CheckType2

class ScriptClass(Enum):
    kFilesystemChange = 'FilesystemChange'
    kEmptyScript = 'EmptyScript'
    kTextProcessing = 'TextProcessing'
    kConfigurationChange = 'ConfigurationChange'
    kEmptyFileCreation = 'EmptyFileCreation'
    kUserGroupCreation = 'UserGroupCreation'
    kShellActivation = 'ShellActivation'
    kUnknown = 'Unknown'
# End class ScriptClass

kRejectionClasses = frozenset([ScriptClass.kConfigurationChange, ScriptClass.kShellActivation,
                               ScriptClass.kUnknown])

kCommandTable = {}
for _class, _commands in [(ScriptClass.kFilesystemChange, consts.kFilesystemChangeCommands),
                          (ScriptClass.kEmptyScript, consts.kEmptyScriptCommands),
                          (ScriptClass.kTextProcessing, consts.kTextProcessingCommands),
                          (ScriptClass.kConfigurationChange, consts.kConfigurationChangeCommands),
                          (ScriptClass.kEmptyFileCreation, consts.kEmptyFileCreationCommands),
                          (ScriptClass.kUserGroupCreation, consts.kUserGroupCreationCommands),
                          (ScriptClass.kShellActivation, consts.kShellActivationCommands)]:
    for _command in _commands:
        kCommandTable[_command] = _class

class SanitizationOutcome(Enum):
    kSanitizedClean = 'SanitizedClean'
    kSanitizedRewritten = 'SanitizedRewritten'
    kRejected = 'Rejected'

# =============================== Identities ===============================

@dataclass(frozen=True)
class UserSpec:
    '''
    Member variables:
     - name: str
     - explicit_uid: int or None
     - primary_group: str
     - gecos: str
     - home: str
     - shell: str
     - system_account: bool
     - password_field: str ("!" locks the account)
    '''
    name: str
    explicit_uid: int = None
    primary_group: str = None
    gecos: str = ''
    home: str = None
    shell: str = None
    system_account: bool = False
    password_field: str = consts.kDefaultPasswordField

    def __post_init__(self):
        CheckType(self.name, 'name', str)
        if (not consts.kIdentityNamePattern.match(self.name)):
            raise ValueError('invalid user name "{}"'.format(self.name))
        if (self.explicit_uid is not None):
            CheckType(self.explicit_uid, 'explicit_uid', int)
        if (self.primary_group is None):
            object.__setattr__(self, 'primary_group', self.name)
        if (self.home is None):
            object.__setattr__(self, 'home', consts.kDefaultHomeTemplate.format(self.name))
        if (self.shell is None):
            object.__setattr__(self, 'shell', consts.kDefaultSystemShell if self.system_account
                               else consts.kDefaultLoginShell)
        for field_name in ('gecos', 'home', 'shell', 'password_field'):
            if (':' in getattr(self, field_name) or '\n' in getattr(self, field_name)):
                raise ValueError('{} of user "{}" contains ":" or a newline'.format(
                        field_name, self.name))
    # End __post_init__

    # Keys match the initial_users entries of a policy document
    def ToJson(self) -> dict:
        return {'name' : self.name, 'uid' : self.explicit_uid, 'group' : self.primary_group,
                'gecos' : self.gecos, 'home' : self.home, 'shell' : self.shell,
                'system' : self.system_account, 'password' : self.password_field}

    @staticmethod
    def FromJson(data: dict) -> 'UserSpec':
        return UserSpec(name=data['name'], explicit_uid=data.get('uid'), primary_group=data.get('group'),
                        gecos=data.get('gecos', ''), home=data.get('home'), shell=data.get('shell'),
                        system_account=data.get('system', False),
                        password_field=data.get('password', consts.kDefaultPasswordField))
# End class UserSpec

@dataclass(frozen=True)
class GroupSpec:
    name: str
    explicit_gid: int = None
    members: Tuple[str, ...] = ()

    def __post_init__(self):
        CheckType(self.name, 'name', str)
        if (not consts.kIdentityNamePattern.match(self.name)):
            raise ValueError('invalid group name "{}"'.format(self.name))
        if (self.explicit_gid is not None):
            CheckType(self.explicit_gid, 'explicit_gid', int)
        object.__setattr__(self, 'members', tuple(self.members))
    # End __post_init__

    def ToJson(self) -> dict:
        return {'name' : self.name, 'gid' : self.explicit_gid, 'members' : list(self.members)}

    @staticmethod
    def FromJson(data: dict) -> 'GroupSpec':
        return GroupSpec(name=data['name'], explicit_gid=data.get('gid'),
                         members=tuple(data.get('members', ())))
# End class GroupSpec

@dataclass(frozen=True)
class PackageIdentities:
    '''
    Identities created by one package's scripts.

    Member variables:
     - package: (name, version)
     - users: tuple of UserSpec
     - groups: tuple of GroupSpec
     - memberships: tuple of (user name, group name)
     - warnings: tuple of str
     - rejected: bool (the package's scripts are rejected, so its identities are not used)
    '''
    package: Tuple[str, str]
    users: Tuple[UserSpec, ...] = ()
    groups: Tuple[GroupSpec, ...] = ()
    memberships: Tuple[Tuple[str, str], ...] = ()
    warnings: Tuple[str, ...] = ()
    rejected: bool = False

    def ToJson(self) -> dict:
        return {'package' : list(self.package), 'users' : [user.ToJson() for user in self.users],
                'groups' : [group.ToJson() for group in self.groups],
                'memberships' : [list(pair) for pair in self.memberships],
                'warnings' : list(self.warnings), 'rejected' : self.rejected}

    @staticmethod
    def FromJson(data: dict) -> 'PackageIdentities':
        return PackageIdentities(package=tuple(data['package']),
                                 users=tuple(UserSpec.FromJson(user) for user in data['users']),
                                 groups=tuple(GroupSpec.FromJson(group) for group in data['groups']),
                                 memberships=tuple(tuple(pair) for pair in data['memberships']),
                                 warnings=tuple(data['warnings']), rejected=data['rejected'])
# End class PackageIdentities

@dataclass(frozen=True)
class PredictedConfig:
    '''
    Member variables:
     - passwd_content, group_content, shadow_content: str
     - uid_assignment: dict {user name : uid}
     - gid_assignment: dict {group name : gid}
    '''
    passwd_content: str = ''
    group_content: str = ''
    shadow_content: str = ''
    uid_assignment: Dict[str, int] = field(default_factory=dict)
    gid_assignment: Dict[str, int] = field(default_factory=dict)

    # {path : content} for the three configuration files, in preamble order
    @property
    def files(self) -> Dict[str, str]:
        return {consts.kPasswdPath : self.passwd_content,
                consts.kGroupPath : self.group_content,
                consts.kShadowPath : self.shadow_content}

    def ToJson(self) -> dict:
        return {'passwd' : self.passwd_content, 'group' : self.group_content,
                'shadow' : self.shadow_content, 'uids' : dict(self.uid_assignment),
                'gids' : dict(self.gid_assignment)}

    @staticmethod
    def FromJson(data: dict) -> 'PredictedConfig':
        return PredictedConfig(passwd_content=data['passwd'], group_content=data['group'],
                               shadow_content=data['shadow'],
                               uid_assignment=dict(data['uids']),
                               gid_assignment=dict(data['gids']))
# End class PredictedConfig

@dataclass(frozen=True)
class SanitizationContext:
    '''
    Shared, immutable input of SanitizePackage.

    Member variables:
     - predicted: PredictedConfig
     - signer: SigningKeypair (the repository key)
    '''
    predicted: PredictedConfig
    signer: SigningKeypair

    # Envelopes over the predicted configuration file contents, signed once per context
    @cached_property
    def config_envelopes(self) -> Dict[str, SignatureEnvelope]:
        return {path : keystore.SignContent(self.signer, content.encode('utf-8'))
                for path, content in self.predicted.files.items()}

    @cached_property
    def empty_file_envelope(self) -> SignatureEnvelope:
        return keystore.SignContent(self.signer, b'')
# End class SanitizationContext

@dataclass(frozen=True)
class SanitizationReport:
    '''
    Member variables:
     - package: (name, version)
     - outcome: SanitizationOutcome
     - classes_found: frozenset of ScriptClass
     - reject_reason: str or None
     - warnings: tuple of str
     - phase_seconds: dict {'scripts' | 'signatures' | 'archive' : seconds}
     - original_size, sanitized_size: int (package bytes)
    '''
    package: Tuple[str, str]
    outcome: SanitizationOutcome
    classes_found: frozenset
    reject_reason: str = None
    warnings: Tuple[str, ...] = ()
    phase_seconds: Dict[str, float] = field(default_factory=dict)
    original_size: int = 0
    sanitized_size: int = 0

    def IsRejected(self) -> bool:
        return self.outcome == SanitizationOutcome.kRejected
# End class SanitizationReport

# ========================= User/Group Command Parsing =========================

class _UnsupportedArguments(ValueError):
    pass

# Option tables: short option -> canonical name; value-taking options listed separately
kBusyboxAdduserOptions = {
    'flags' : {'-S' : 'system', '-D' : 'no_password', '-H' : 'no_home'},
    'values' : {'-h' : 'home', '-g' : 'gecos', '-s' : 'shell', '-G' : 'group', '-u' : 'uid',
                '-k' : 'skel'},
    'long' : {}}
kBusyboxAddgroupOptions = {
    'flags' : {'-S' : 'system'},
    'values' : {'-g' : 'gid'},
    'long' : {}}
kUseraddOptions = {
    'flags' : {'-r' : 'system', '-m' : 'create_home', '-M' : 'no_home', '-N' : 'no_user_group',
               '-U' : 'user_group', '-o' : 'non_unique', '-l' : 'no_log_init'},
    'values' : {'-u' : 'uid', '-g' : 'group', '-G' : 'groups', '-d' : 'home', '-s' : 'shell',
                '-c' : 'gecos', '-p' : 'password', '-k' : 'skel', '-e' : 'expire',
                '-f' : 'inactive', '-K' : 'key'},
    'long' : {'--uid' : '-u', '--gid' : '-g', '--groups' : '-G', '--home-dir' : '-d',
              '--shell' : '-s', '--comment' : '-c', '--password' : '-p', '--system' : '-r',
              '--create-home' : '-m', '--no-create-home' : '-M', '--no-user-group' : '-N',
              '--user-group' : '-U', '--non-unique' : '-o', '--skel' : '-k'}}
kGroupaddOptions = {
    'flags' : {'-r' : 'system', '-f' : 'force', '-o' : 'non_unique'},
    'values' : {'-g' : 'gid', '-K' : 'key', '-p' : 'password'},
    'long' : {'--gid' : '-g', '--system' : '-r', '--force' : '-f', '--non-unique' : '-o',
              '--password' : '-p'}}

kOptionTables = {'adduser' : kBusyboxAdduserOptions, 'addgroup' : kBusyboxAddgroupOptions,
                 'useradd' : kUseraddOptions, 'groupadd' : kGroupaddOptions}

# getopt-style parsing: combined short flags, attached values, long options, "--"
# Returns ({canonical name : value or True}, [positional arguments])
def _ParseOptions(arguments: List[str], option_table: dict) -> Tuple[dict, List[str]]:
    flags, values, long_options = (option_table['flags'], option_table['values'],
                                   option_table['long'])
    options = {}
    positionals = []
    index = 0
    while (index < len(arguments)):
        argument = arguments[index]
        index += 1
        if (argument == '--'):
            positionals.extend(arguments[index :])
            break
        if (argument.startswith('--')):
            name, has_value, value = argument.partition('=')
            if (name not in long_options):
                raise _UnsupportedArguments('unknown option "{}"'.format(name))
            short_option = long_options[name]
            if (short_option in flags):
                options[flags[short_option]] = True
                continue
            if (not has_value):
                if (index >= len(arguments)):
                    raise _UnsupportedArguments('option "{}" requires a value'.format(name))
                value = arguments[index]
                index += 1
            options[values[short_option]] = value
        elif (argument.startswith('-') and (len(argument) > 1)):
            position = 1
            while (position < len(argument)):
                short_option = '-' + argument[position]
                position += 1
                if (short_option in flags):
                    options[flags[short_option]] = True
                elif (short_option in values):
                    if (position < len(argument)):
                        value = argument[position :]
                    elif (index < len(arguments)):
                        value = arguments[index]
                        index += 1
                    else:
                        raise _UnsupportedArguments(
                                'option "{}" requires a value'.format(short_option))
                    options[values[short_option]] = value
                    break
                else:
                    raise _UnsupportedArguments('unknown option "{}"'.format(short_option))
        else:
            positionals.append(argument)
    return options, positionals
# End _ParseOptions

def _ParseId(value: str) -> int:
    if (not value.isdigit()):
        raise _UnsupportedArguments('non-numeric id "{}"'.format(value))
    return int(value)
# End _ParseId

def _CheckName(name: str) -> str:
    if (not consts.kIdentityNamePattern.match(name)):
        raise _UnsupportedArguments('invalid identity name "{}"'.format(name))
    return name
# End _CheckName

def _EmptyPasswordWarnings(user: UserSpec, empty_password: bool) -> List[str]:
    if (empty_password and (user.shell not in consts.kNonLoginShells)):
        return ['user "{}" is created with an empty password and login shell {}'.format(
                user.name, user.shell)]
    return []
# End _EmptyPasswordWarnings

# Returns the PackageIdentities fragment for one user/group creation command.
# Raises _UnsupportedArguments for anything outside the recognized option grammar.
def IdentitiesFromCommand(command: SimpleCommand) -> PackageIdentities:
    if (not all(word.IsLiteral() for word in command.words)):
        raise _UnsupportedArguments('arguments are not static')
    name = command.name
    options, positionals = _ParseOptions(command.arguments, kOptionTables[name])
    users, groups, memberships, warnings = [], [], [], []
    if (name == 'adduser'):
        if ((len(positionals) == 2) and (len(options) == 0)):
            memberships.append((_CheckName(positionals[0]), _CheckName(positionals[1])))
        elif (len(positionals) == 1):
            user_name = _CheckName(positionals[0])
            system_account = options.get('system', False)
            primary_group = _CheckName(options.get('group', user_name))
            user = UserSpec(name=user_name,
                            explicit_uid=_ParseId(options['uid']) if 'uid' in options else None,
                            primary_group=primary_group, gecos=options.get('gecos', ''),
                            home=options.get('home'), shell=options.get('shell'),
                            system_account=system_account)
            users.append(user)
            groups.append(GroupSpec(primary_group))
            # Without -D busybox assigns an interactively-read password, empty when unattended
            warnings.extend(_EmptyPasswordWarnings(
                    user, not system_account and not options.get('no_password', False)))
        else:
            raise _UnsupportedArguments('expected USER or USER GROUP')
    elif (name == 'addgroup'):
        if ((len(positionals) == 2) and (len(options) == 0)):
            memberships.append((_CheckName(positionals[0]), _CheckName(positionals[1])))
        elif (len(positionals) == 1):
            groups.append(GroupSpec(_CheckName(positionals[0]),
                                    explicit_gid=_ParseId(options['gid']) if 'gid' in options
                                    else None))
        else:
            raise _UnsupportedArguments('expected GROUP or USER GROUP')
    elif (name == 'useradd'):
        if (len(positionals) != 1):
            raise _UnsupportedArguments('expected exactly one user name')
        user_name = _CheckName(positionals[0])
        if ('group' in options):
            primary_group = _CheckName(options['group'])
        elif (options.get('no_user_group', False)):
            primary_group = 'users'
        else:
            primary_group = user_name
        user = UserSpec(name=user_name,
                        explicit_uid=_ParseId(options['uid']) if 'uid' in options else None,
                        primary_group=primary_group, gecos=options.get('gecos', ''),
                        home=options.get('home'), shell=options.get('shell'),
                        system_account=options.get('system', False))
        users.append(user)
        groups.append(GroupSpec(primary_group))
        for group_name in filter(None, options.get('groups', '').split(',')):
            memberships.append((user_name, _CheckName(group_name)))
        warnings.extend(_EmptyPasswordWarnings(user, options.get('password') == ''))
    else:
        if (len(positionals) != 1):
            raise _UnsupportedArguments('expected exactly one group name')
        groups.append(GroupSpec(_CheckName(positionals[0]),
                                explicit_gid=_ParseId(options['gid']) if 'gid' in options
                                else None))
    return PackageIdentities(package=('', ''), users=tuple(users), groups=tuple(groups),
                             memberships=tuple(memberships), warnings=tuple(warnings))
# End IdentitiesFromCommand

# ============================== Classification ==============================

def _HasInPlaceOption(arguments: List[str]) -> bool:
    for argument in arguments:
        if (argument.startswith('--in-place')):
            return True
        if (argument.startswith('-') and not argument.startswith('--') and ('i' in argument[1 :])):
            # -i, -ni, -i.bak; an -e script argument does not start with '-'
            return True
    return False
# End _HasInPlaceOption

def ClassifyCommand(command: SimpleCommand) -> ScriptClass:
    CheckType(command, 'command', SimpleCommand)
    if (any(redirect.WritesFile() for redirect in command.redirects)):
        return ScriptClass.kConfigurationChange
    if (len(command.words) == 0):
        return ScriptClass.kEmptyScript
    if (not command.words[0].IsLiteral()):
        return ScriptClass.kUnknown
    name = command.name
    script_class = kCommandTable.get(name, ScriptClass.kUnknown)
    if ((name == 'sed') and _HasInPlaceOption(command.arguments)):
        return ScriptClass.kConfigurationChange
    if (script_class == ScriptClass.kUserGroupCreation):
        try:
            IdentitiesFromCommand(command)
        except ValueError:
            return ScriptClass.kUnknown
    return script_class
# End ClassifyCommand

def _ClassifyParsed(parsed: script_parser.ParsedScript) -> Set[ScriptClass]:
    classes = set(ClassifyCommand(command) for command in parsed.commands)
    if (not parsed.IsSupported()):
        classes.add(ScriptClass.kUnknown)
    if (len(classes) == 0):
        classes.add(ScriptClass.kEmptyScript)
    return classes
# End _ClassifyParsed

# Returns the union of the classes of every simple command in text
def ClassifyScript(text: str) -> Set[ScriptClass]:
    CheckType(text, 'text', str)
    return _ClassifyParsed(script_parser.ParseScript(text))
# End ClassifyScript

# Union over the package's scripts; empty for a package without scripts
def ClassifyPackage(pkg: ApkPackage) -> Set[ScriptClass]:
    CheckType(pkg, 'pkg', ApkPackage)
    classes = set()
    for text in pkg.scripts.values():
        classes |= ClassifyScript(text)
    return classes
# End ClassifyPackage

def IsRejectedClassSet(classes: Set[ScriptClass]) -> bool:
    return len(set(classes) & kRejectionClasses) > 0

# ============================ Identity Collection ============================

def ExtractPackageIdentities(pkg: ApkPackage) -> PackageIdentities:
    CheckType(pkg, 'pkg', ApkPackage)
    users, groups, memberships, warnings = [], [], [], []
    classes = set()
    for kind in package.kScriptKindOrder:
        if (kind not in pkg.scripts):
            continue
        parsed = script_parser.ParseScript(pkg.scripts[kind])
        classes |= _ClassifyParsed(parsed)
        for command in parsed.commands:
            if (ClassifyCommand(command) != ScriptClass.kUserGroupCreation):
                continue
            fragment = IdentitiesFromCommand(command)
            users.extend(fragment.users)
            groups.extend(fragment.groups)
            memberships.extend(fragment.memberships)
            warnings.extend(fragment.warnings)
    return PackageIdentities(package=(pkg.name, pkg.version), users=tuple(users),
                             groups=tuple(groups), memberships=tuple(memberships),
                             warnings=tuple(warnings), rejected=IsRejectedClassSet(classes))
# End ExtractPackageIdentities

def _MergeUser(existing: UserSpec, new: UserSpec) -> UserSpec:
    if ((existing.explicit_uid is not None) and (new.explicit_uid is not None)
            and (existing.explicit_uid != new.explicit_uid)):
        errors.Error(ConflictingIdentity('user "{}" defined with uids {} and {}'.format(
                existing.name, existing.explicit_uid, new.explicit_uid)))
    if ((existing.explicit_uid is None) and (new.explicit_uid is not None)):
        return replace(existing, explicit_uid=new.explicit_uid)
    return existing
# End _MergeUser

def _MergeGroup(existing: GroupSpec, new: GroupSpec) -> GroupSpec:
    if ((existing.explicit_gid is not None) and (new.explicit_gid is not None)
            and (existing.explicit_gid != new.explicit_gid)):
        errors.Error(ConflictingIdentity('group "{}" defined with gids {} and {}'.format(
                existing.name, existing.explicit_gid, new.explicit_gid)))
    if ((existing.explicit_gid is None) and (new.explicit_gid is not None)):
        return replace(existing, explicit_gid=new.explicit_gid)
    return existing
# End _MergeGroup

# Policy identities come first, in policy order; corpus identities follow sorted by name.
# Packages are visited in (name, version) order so the first definition of a name wins
# regardless of how the corpus is enumerated. Rejected packages contribute nothing.
def MergeIdentities(package_identities: List[PackageIdentities],
                    policy_users: List[UserSpec] = (),
                    policy_groups: List[GroupSpec] = ()) -> Tuple[List[UserSpec], List[GroupSpec]]:
    CheckType2(package_identities, 'package_identities', (list, tuple), PackageIdentities)
    CheckType2(policy_users, 'policy_users', (list, tuple), UserSpec)
    CheckType2(policy_groups, 'policy_groups', (list, tuple), GroupSpec)
    users = {}
    for user in policy_users:
        users[user.name] = _MergeUser(users[user.name], user) if user.name in users else user
    groups = {}
    for group in policy_groups:
        groups[group.name] = _MergeGroup(groups[group.name], group) if group.name in groups \
                else group
    policy_user_names = list(users)
    policy_group_names = list(groups)
    memberships = set()
    for identities in sorted(package_identities, key=lambda identities: identities.package):
        if (identities.rejected):
            continue
        for user in identities.users:
            users[user.name] = _MergeUser(users[user.name], user) if user.name in users else user
        for group in identities.groups:
            groups[group.name] = _MergeGroup(groups[group.name], group) if group.name in groups \
                    else group
        memberships.update(identities.memberships)
    for user in users.values():
        if (user.primary_group not in groups):
            groups[user.primary_group] = GroupSpec(user.primary_group)
    for _, group_name in memberships:
        if (group_name not in groups):
            groups[group_name] = GroupSpec(group_name)
    for group_name, group in list(groups.items()):
        new_members = sorted(set(user_name for user_name, member_group in memberships
                                 if (member_group == group_name)) - set(group.members))
        if (len(new_members) > 0):
            groups[group_name] = replace(group, members=group.members + tuple(new_members))
    ordered_users = ([users[name] for name in policy_user_names]
                     + [users[name] for name in sorted(set(users) - set(policy_user_names))])
    ordered_groups = ([groups[name] for name in policy_group_names]
                      + [groups[name] for name in sorted(set(groups) - set(policy_group_names))])
    return ordered_users, ordered_groups
# End MergeIdentities

def CollectIdentities(corpus: List[ApkPackage],
                      policy_initial: Tuple[List[UserSpec], List[GroupSpec]] = ((), ())
                      ) -> Tuple[List[UserSpec], List[GroupSpec]]:
    CheckType2(corpus, 'corpus', (list, tuple), ApkPackage)
    policy_users, policy_groups = policy_initial
    return MergeIdentities([ExtractPackageIdentities(pkg) for pkg in corpus],
                           list(policy_users), list(policy_groups))
# End CollectIdentities

# ================================ Prediction ================================

# Explicit ids are reserved first; the rest are allocated ascending from kFirstAutoId in list
# order, skipping reserved values
def _AssignIds(names_and_explicit_ids: List[Tuple[str, int or None]], kind: str) -> Dict[str, int]:
    assignment = {}
    taken = {}
    for name, explicit_id in names_and_explicit_ids:
        if (explicit_id is None):
            continue
        if (explicit_id in taken):
            errors.Error(ConflictingIdentity('{} id {} is claimed by "{}" and "{}"'.format(
                    kind, explicit_id, taken[explicit_id], name)))
        taken[explicit_id] = name
        assignment[name] = explicit_id
    next_id = consts.kFirstAutoId
    for name, explicit_id in names_and_explicit_ids:
        if (explicit_id is not None):
            continue
        while (next_id in taken):
            next_id += 1
        if (next_id > consts.kMaxAutoId):
            errors.Error(UidExhaustion('no free {} id for "{}"'.format(kind, name)))
        assignment[name] = next_id
        taken[next_id] = name
    return assignment
# End _AssignIds

def _JoinLines(lines: List[str]) -> str:
    return ''.join(line + '\n' for line in lines)

def PredictConfig(users: List[UserSpec], groups: List[GroupSpec]) -> PredictedConfig:
    CheckType2(users, 'users', (list, tuple), UserSpec)
    CheckType2(groups, 'groups', (list, tuple), GroupSpec)
    gid_assignment = _AssignIds([(group.name, group.explicit_gid) for group in groups], 'group')
    uid_assignment = _AssignIds([(user.name, user.explicit_uid) for user in users], 'user')
    passwd_lines = []
    shadow_lines = []
    for user in users:
        if (user.primary_group not in gid_assignment):
            errors.Error(UndefinedIdentity('user "{}" has primary group "{}", which no package '
                                           'defines'.format(user.name, user.primary_group)))
        passwd_lines.append('{}:x:{}:{}:{}:{}:{}'.format(
                user.name, uid_assignment[user.name], gid_assignment[user.primary_group],
                user.gecos, user.home, user.shell))
        shadow_lines.append(consts.kShadowLineTemplate.format(user.name, user.password_field))
    group_lines = ['{}:x:{}:{}'.format(group.name, gid_assignment[group.name],
                                       ','.join(group.members)) for group in groups]
    return PredictedConfig(passwd_content=_JoinLines(passwd_lines),
                           group_content=_JoinLines(group_lines),
                           shadow_content=_JoinLines(shadow_lines),
                           uid_assignment=uid_assignment, gid_assignment=gid_assignment)
# End PredictConfig

# =================================== Rewrite ===================================

def _SetXattrCommand(envelope: SignatureEnvelope, quoted_path: str) -> str:
    return 'setfattr -n {} -v 0x{} {}'.format(consts.kImaXattrName,
                                               envelope.Serialize().hex(), quoted_path)
# End _SetXattrCommand

def BuildPreamble(context: SanitizationContext) -> str:
    CheckType(context, 'context', SanitizationContext)
    lines = [consts.kSanitizedMarker]
    for path, content in context.predicted.files.items():
        lines.append("printf '%s' {} > {}".format(helper.ShellQuote(content), path))
    for path in context.predicted.files:
        lines.append(_SetXattrCommand(context.config_envelopes[path], path))
    return '\n'.join(lines) + '\n'
# End BuildPreamble

kTouchValueOptions = ('-r', '-d', '-t')

def _TouchedPaths(command: SimpleCommand) -> List[str]:
    paths = []
    words = command.words[1 :]
    index = 0
    while (index < len(words)):
        value = words[index].value
        if (value in kTouchValueOptions):
            index += 2
            continue
        if (not value.startswith('-') or (value == '-')):
            paths.append(words[index].raw)
        index += 1
    return paths
# End _TouchedPaths

# Replaces user/group creation commands with ":" and appends signature installation to every
# "touch". A preamble is inserted (after any shebang line) iff a user/group command was removed.
def RewriteScript(text: str, predicted: PredictedConfig, classes: Set[ScriptClass],
                  signer: SigningKeypair) -> str:
    CheckType(text, 'text', str)
    CheckType(predicted, 'predicted', PredictedConfig)
    CheckType(signer, 'signer', SigningKeypair)
    return _RewriteWithContext(text, SanitizationContext(predicted, signer), set(classes))
# End RewriteScript

def _RewriteWithContext(text: str, context: SanitizationContext, classes: Set[ScriptClass]) -> str:
    if (IsRejectedClassSet(classes)):
        errors.Error(RewriteUnsupported('cannot rewrite a script of classes {}'.format(
                sorted(script_class.value for script_class in classes))))
    if (not (classes & {ScriptClass.kUserGroupCreation, ScriptClass.kEmptyFileCreation})):
        return text
    parsed = script_parser.ParseScript(text)
    if (not parsed.IsSupported()):
        errors.Error(RewriteUnsupported(parsed.unsupported_reason))
    pieces = []
    position = 0
    removed_identity_command = False
    for command in sorted(parsed.commands, key=lambda command: command.start):
        script_class = ClassifyCommand(command)
        if (script_class == ScriptClass.kUserGroupCreation):
            replacement = ':'
            removed_identity_command = True
        elif (script_class == ScriptClass.kEmptyFileCreation):
            replacement = ' && '.join([text[command.start : command.end]] + [
                    _SetXattrCommand(context.empty_file_envelope, path)
                    for path in _TouchedPaths(command)])
        else:
            continue
        pieces.append(text[position : command.start])
        pieces.append(replacement)
        position = command.end
    pieces.append(text[position :])
    body = ''.join(pieces)
    if (not removed_identity_command):
        return body
    if (body.startswith('#!')):
        shebang, newline, rest = body.partition('\n')
        return shebang + '\n' + BuildPreamble(context) + rest
    return BuildPreamble(context) + body
# End _RewriteWithContext

# ================================ Sanitization ================================

def _RejectedReport(pkg: ApkPackage, classes: Set[ScriptClass], reason: str, warnings: list,
                    phase_seconds: dict, size: int) -> SanitizationReport:
    logger.Log('Warning: rejected {}-{}: {}'.format(pkg.name, pkg.version, reason))
    return SanitizationReport(package=(pkg.name, pkg.version),
                              outcome=SanitizationOutcome.kRejected,
                              classes_found=frozenset(classes), reject_reason=reason,
                              warnings=tuple(warnings), phase_seconds=phase_seconds,
                              original_size=size, sanitized_size=size)
# End _RejectedReport

def SanitizePackage(pkg: ApkPackage, context: SanitizationContext
                    ) -> Tuple[ApkPackage, SanitizationReport]:
    CheckType(pkg, 'pkg', ApkPackage)
    CheckType(context, 'context', SanitizationContext)
    original_size = len(package.SerializeApk(pkg))
    phase_seconds = {'scripts' : 0.0, 'signatures' : 0.0, 'archive' : 0.0}

    start_time = time.perf_counter()
    script_classes = {kind : ClassifyScript(text) for kind, text in pkg.scripts.items()}
    classes = set().union(*script_classes.values()) if script_classes else set()
    rejected_classes = classes & kRejectionClasses
    if (len(rejected_classes) > 0):
        phase_seconds['scripts'] = time.perf_counter() - start_time
        reason = ', '.join(sorted(script_class.value for script_class in rejected_classes))
        return pkg, _RejectedReport(pkg, classes, reason, [], phase_seconds, original_size)
    warnings = list(ExtractPackageIdentities(pkg).warnings)
    scripts = {kind : _RewriteWithContext(text, context, script_classes[kind])
               for kind, text in pkg.scripts.items()}
    rewritten = any(scripts[kind] != pkg.scripts[kind] for kind in scripts)
    phase_seconds['scripts'] = time.perf_counter() - start_time

    start_time = time.perf_counter()
    data_entries = [archive.AttachSignatureRecord(entry, keystore.SignContent(context.signer,
                                                                              entry.content))
                    if entry.IsRegular() else entry for entry in pkg.data_entries]
    phase_seconds['signatures'] = time.perf_counter() - start_time

    start_time = time.perf_counter()
    apk_bytes = package.BuildApk(pkg.pkginfo, scripts, data_entries, context.signer,
                                 sign_scripts=True)
    sanitized = package.ParseApk(apk_bytes)
    phase_seconds['archive'] = time.perf_counter() - start_time

    for warning in warnings:
        logger.Log('Warning: {}-{}: {}'.format(pkg.name, pkg.version, warning))
    outcome = (SanitizationOutcome.kSanitizedRewritten if rewritten
               else SanitizationOutcome.kSanitizedClean)
    report = SanitizationReport(package=(pkg.name, pkg.version), outcome=outcome,
                                classes_found=frozenset(classes), warnings=tuple(warnings),
                                phase_seconds=phase_seconds, original_size=original_size,
                                sanitized_size=len(apk_bytes))
    return sanitized, report
# End SanitizePackage

# ================================= Statistics =================================

@dataclass(frozen=True)
class ClassifierStatistics:
    '''
    Member variables:
     - total: int (packages)
     - without_scripts: int
     - class_counts: dict {ScriptClass : number of packages with at least one such command}
     - supported, rejected: int
    '''
    total: int
    without_scripts: int
    class_counts: Dict[ScriptClass, int]
    supported: int
    rejected: int

    @property
    def supported_ratio(self) -> float:
        return (self.supported / self.total) if (self.total > 0) else 1.0

    def ToJson(self) -> dict:
        return {'total' : self.total, 'without_scripts' : self.without_scripts,
                'class_counts' : {script_class.value : count
                                  for script_class, count in self.class_counts.items()},
                'supported' : self.supported, 'rejected' : self.rejected,
                'supported_ratio' : self.supported_ratio}
# End class ClassifierStatistics

def CorpusStatistics(packages: List[ApkPackage]) -> ClassifierStatistics:
    CheckType2(packages, 'packages', (list, tuple), ApkPackage)
    class_counts = {script_class : 0 for script_class in ScriptClass}
    without_scripts = 0
    rejected = 0
    for pkg in packages:
        if (len(pkg.scripts) == 0):
            without_scripts += 1
        classes = ClassifyPackage(pkg)
        for script_class in classes:
            class_counts[script_class] += 1
        if (IsRejectedClassSet(classes)):
            rejected += 1
    return ClassifierStatistics(total=len(packages), without_scripts=without_scripts,
                                class_counts=class_counts, supported=len(packages) - rejected,
                                rejected=rejected)
# End CorpusStatistics
