'''
Security policies: the document a client deploys to create a repository.

A policy is a YAML (or JSON) mapping:

    mirrors:            list of https base URLs (2f+1 of them tolerate f Byzantine mirrors)
    signers_keys:       list of PEM public keys of the upstream package signers
    initial_users:      list of {name, uid, group, gecos, home, shell, system, password}
    initial_groups:     list of {name, gid, members}
    architecture:       e.g. x86_64
    allowlist:          optional list of package name patterns (fnmatch syntax)
    blocklist:          optional list of package name patterns (fnmatch syntax)

Every problem found is reported, not just the first one.
'''

from dataclasses import dataclass
import fnmatch
import json
from typing import List, Tuple
from urllib.parse import urlparse

import yaml

import errors
from errors import InvalidPolicy
from keystore import PublicKey
from sanitizer import GroupSpec, UserSpec
from type_checker import CheckType

kRequiredKeys = ('mirrors', 'signers_keys', 'architecture')
kOptionalKeys = ('initial_users', 'initial_groups', 'allowlist', 'blocklist')
kUserKeys = {'name', 'uid', 'group', 'gecos', 'home', 'shell', 'system', 'password'}
kGroupKeys = {'name', 'gid', 'members'}

@dataclass(frozen=True)
class SecurityPolicy:
    '''
    Member variables:
     - mirrors: tuple of str (base URLs)
     - trusted_signer_keys: tuple of PublicKey
     - initial_users: tuple of UserSpec
     - initial_groups: tuple of GroupSpec
     - architecture: str
     - allowlist: tuple of str patterns, or None
     - blocklist: tuple of str patterns, or None
    '''
    mirrors: Tuple[str, ...]
    trusted_signer_keys: Tuple[PublicKey, ...]
    initial_users: Tuple[UserSpec, ...] = ()
    initial_groups: Tuple[GroupSpec, ...] = ()
    architecture: str = 'x86_64'
    allowlist: Tuple[str, ...] = None
    blocklist: Tuple[str, ...] = None

    # Number of Byzantine mirrors tolerated
    @property
    def f(self) -> int:
        return (len(self.mirrors) - 1) // 2

    def IsPackageAllowed(self, name: str) -> bool:
        CheckType(name, 'name', str)
        if (self.allowlist is not None):
            return any(fnmatch.fnmatchcase(name, pattern) for pattern in self.allowlist)
        if (self.blocklist is not None):
            return not any(fnmatch.fnmatchcase(name, pattern) for pattern in self.blocklist)
        return True
    # End IsPackageAllowed

    def ToJson(self) -> dict:
        document = {
            'mirrors' : list(self.mirrors),
            'signers_keys' : [key.ToPem() for key in self.trusted_signer_keys],
            'architecture' : self.architecture,
            'initial_users' : [user.ToJson() for user in self.initial_users],
            'initial_groups' : [group.ToJson() for group in self.initial_groups]}
        if (self.allowlist is not None):
            document['allowlist'] = list(self.allowlist)
        if (self.blocklist is not None):
            document['blocklist'] = list(self.blocklist)
        return document
    # End ToJson
# End class SecurityPolicy

def _CheckMirror(url, index: int, allow_insecure_mirrors: bool, diagnostics: List[str]):
    if (not isinstance(url, str)):
        diagnostics.append('mirrors[{}]: expected a URL string'.format(index))
        return
    parsed = urlparse(url)
    allowed_schemes = ('https', 'http') if allow_insecure_mirrors else ('https',)
    if ((parsed.scheme not in allowed_schemes) or (parsed.netloc == '')):
        diagnostics.append('mirrors[{}]: "{}" is not an {} URL'.format(
                index, url, ' or '.join(allowed_schemes)))
# End _CheckMirror

def _ParseStringList(document: dict, key: str, diagnostics: List[str]) -> Tuple[str, ...] or None:
    value = document.get(key)
    if (value is None):
        return None
    if (not isinstance(value, list) or not all(isinstance(item, str) for item in value)):
        diagnostics.append('{}: expected a list of strings'.format(key))
        return None
    return tuple(value)
# End _ParseStringList

def _OptionalInt(mapping: dict, key: str, where: str, diagnostics: List[str]) -> int or None:
    value = mapping.get(key)
    if (value is None):
        return None
    if (isinstance(value, bool) or not isinstance(value, int) or (value < 0)):
        diagnostics.append('{}.{}: expected a non-negative integer'.format(where, key))
        return None
    return value
# End _OptionalInt

def _ParseUsers(document: dict, diagnostics: List[str]) -> List[UserSpec]:
    users = []
    raw_users = document.get('initial_users') or []
    if (not isinstance(raw_users, list)):
        diagnostics.append('initial_users: expected a list')
        return users
    for index, raw_user in enumerate(raw_users):
        where = 'initial_users[{}]'.format(index)
        if (not isinstance(raw_user, dict)):
            diagnostics.append('{}: expected a mapping'.format(where))
            continue
        unknown_keys = set(raw_user) - kUserKeys
        if (unknown_keys):
            diagnostics.append('{}: unknown keys {}'.format(where, sorted(unknown_keys)))
        try:
            users.append(UserSpec(name=str(raw_user.get('name', '')),
                                  explicit_uid=_OptionalInt(raw_user, 'uid', where, diagnostics),
                                  primary_group=raw_user.get('group'),
                                  gecos=str(raw_user.get('gecos', '')),
                                  home=raw_user.get('home'), shell=raw_user.get('shell'),
                                  system_account=bool(raw_user.get('system', False)),
                                  password_field=str(raw_user.get('password', '!'))))
        except (ValueError, TypeError) as e:
            diagnostics.append('{}: {}'.format(where, e))
    return users
# End _ParseUsers

def _ParseGroups(document: dict, diagnostics: List[str]) -> List[GroupSpec]:
    groups = []
    raw_groups = document.get('initial_groups') or []
    if (not isinstance(raw_groups, list)):
        diagnostics.append('initial_groups: expected a list')
        return groups
    for index, raw_group in enumerate(raw_groups):
        where = 'initial_groups[{}]'.format(index)
        if (not isinstance(raw_group, dict)):
            diagnostics.append('{}: expected a mapping'.format(where))
            continue
        unknown_keys = set(raw_group) - kGroupKeys
        if (unknown_keys):
            diagnostics.append('{}: unknown keys {}'.format(where, sorted(unknown_keys)))
        members = raw_group.get('members') or []
        if (not isinstance(members, list)):
            diagnostics.append('{}.members: expected a list'.format(where))
            members = []
        try:
            groups.append(GroupSpec(name=str(raw_group.get('name', '')),
                                    explicit_gid=_OptionalInt(raw_group, 'gid', where, diagnostics),
                                    members=tuple(str(member) for member in members)))
        except (ValueError, TypeError) as e:
            diagnostics.append('{}: {}'.format(where, e))
    return groups
# End _ParseGroups

# Accepts YAML or JSON text. Raises InvalidPolicy listing every problem found.
def LoadPolicy(text: str or bytes, allow_insecure_mirrors: bool = False) -> SecurityPolicy:
    CheckType(text, 'text', (str, bytes))
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        errors.Error(InvalidPolicy(['malformed document: {}'.format(e)]))
    if (not isinstance(document, dict)):
        errors.Error(InvalidPolicy(['policy must be a mapping']))
    diagnostics = []
    for key in sorted(set(document) - set(kRequiredKeys) - set(kOptionalKeys)):
        diagnostics.append('{}: unknown key'.format(key))
    for key in kRequiredKeys:
        if (key not in document):
            diagnostics.append('{}: missing'.format(key))
    mirrors = document.get('mirrors')
    if ((mirrors is not None) and (not isinstance(mirrors, list) or (len(mirrors) == 0))):
        diagnostics.append('mirrors: expected a non-empty list')
    elif (mirrors is not None):
        for index, url in enumerate(mirrors):
            _CheckMirror(url, index, allow_insecure_mirrors, diagnostics)
        if (len(set(mirrors)) != len(mirrors)):
            diagnostics.append('mirrors: duplicate URLs')
    signer_keys = []
    raw_keys = document.get('signers_keys')
    if ((raw_keys is not None) and (not isinstance(raw_keys, list) or (len(raw_keys) == 0))):
        diagnostics.append('signers_keys: expected a non-empty list')
    elif (raw_keys is not None):
        for index, pem in enumerate(raw_keys):
            try:
                signer_keys.append(PublicKey.Load(pem))
            except (ValueError, TypeError) as e:
                diagnostics.append('signers_keys[{}]: {}'.format(index, e))
    architecture = document.get('architecture')
    if ((architecture is not None) and (not isinstance(architecture, str) or (architecture == '')
                                        or ('/' in architecture))):
        diagnostics.append('architecture: expected a non-empty name')
    allowlist = _ParseStringList(document, 'allowlist', diagnostics)
    blocklist = _ParseStringList(document, 'blocklist', diagnostics)
    if ((allowlist is not None) and (blocklist is not None)):
        diagnostics.append('allowlist and blocklist cannot both be set')
    users = _ParseUsers(document, diagnostics)
    groups = _ParseGroups(document, diagnostics)
    if (len(diagnostics) > 0):
        errors.Error(InvalidPolicy(diagnostics))
    return SecurityPolicy(mirrors=tuple(mirrors), trusted_signer_keys=tuple(signer_keys),
                          initial_users=tuple(users), initial_groups=tuple(groups),
                          architecture=architecture, allowlist=allowlist, blocklist=blocklist)
# End LoadPolicy

def PolicyFromJson(document: dict, allow_insecure_mirrors: bool = False) -> SecurityPolicy:
    CheckType(document, 'document', dict)
    return LoadPolicy(json.dumps(document), allow_insecure_mirrors)
