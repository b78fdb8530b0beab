'''
Parser for the POSIX sh subset found in package install scripts.

Supported:
 - simple commands with quoting, escapes, variable references, assignments and redirects
 - pipelines ("|", optionally negated with "!"), and-or lists ("&&", "||")
 - separators ";", "&" and newlines, "#" comments, backslash line continuations
 - single-level if blocks: if ... then ... [elif ... then ...] [else ...] fi

Anything else (loops, case, functions, subshells, brace groups, here-documents, eval,
command substitution, nested if blocks) marks the remainder of the script unsupported:
parsing stops and ParsedScript.unsupported_reason records why. Items completed before the
unsupported construct are kept.

Every SimpleCommand records its source span [start, end) so callers can rewrite a script
by replacing commands in place.
'''

from dataclasses import dataclass, field
from enum import Enum
import re
from typing import List, Tuple

from type_checker import CheckType

kOperators = ['&&', '||', ';;', '>>', '>&', '<&', '<<', '&>', '>|', '<>',
              '|', '&', ';', '<', '>', '(', ')']
kOperatorStartCharacters = frozenset(''.join(kOperators))
kRedirectOperators = frozenset(['>', '>>', '>|', '<', '<>', '>&', '<&', '&>', '<<'])
kFileWriteRedirectOperators = frozenset(['>', '>>', '>|', '&>', '<>'])
kNullDevice = '/dev/null'

kIfKeywords = frozenset(['if', 'then', 'elif', 'else', 'fi'])
kUnsupportedKeywords = frozenset(['for', 'while', 'until', 'case', 'esac', 'do', 'done',
                                  'function', 'select', '{', '}', '[[', ']]'])
kUnsupportedCommands = frozenset(['eval'])

kVariableNamePattern = re.compile(r'^[A-Za-z_][A-Za-z0-9_]*$')
kSpecialParameters = frozenset('@*#?$!-0123456789')
kAssignmentPattern = re.compile(r'^[A-Za-z_][A-Za-z0-9_]*=')

# ================================ Tokenizer ================================

class TokenKind(Enum):
    kWord = 'word'
    kIoNumber = 'io_number'
    kOperator = 'operator'
    kNewline = 'newline'
    kUnsupported = 'unsupported'
    kEnd = 'end'

class PartKind(Enum):
    kLiteral = 'literal'
    kVariable = 'variable'
    # ${...} forms other than a plain name, e.g. ${X:-default}
    kExpression = 'expression'

@dataclass(frozen=True)
class Word:
    '''
    Member variables:
     - raw: str (source text)
     - parts: tuple of (PartKind, str)
     - start, end: int (source span)
     - quoted: bool (any quoting or escaping was present)
     - has_command_substitution: bool
    '''
    raw: str
    parts: Tuple[Tuple[PartKind, str], ...]
    start: int
    end: int
    quoted: bool = False
    has_command_substitution: bool = False

    # Quote-removed text, with variable references rendered as "$NAME"
    @property
    def value(self) -> str:
        return ''.join(text if (kind == PartKind.kLiteral) else '$' + text
                       for kind, text in self.parts)

    @property
    def has_expansion(self) -> bool:
        return any(kind != PartKind.kLiteral for kind, _ in self.parts)

    def IsLiteral(self) -> bool:
        return not self.has_expansion and not self.has_command_substitution
# End class Word

@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    start: int
    end: int
    word: Word = None

class _UnterminatedError(Exception):
    def __init__(self, reason: str, offset: int):
        super().__init__(reason)
        self.reason = reason
        self.offset = offset

class _WordReader:
    def __init__(self, text: str, start: int):
        self.text = text
        self.index = start
        self.start = start
        self.parts = []
        self.literal = ''
        self.quoted = False
        self.has_command_substitution = False

    def FlushLiteral(self):
        if (self.literal != ''):
            self.parts.append((PartKind.kLiteral, self.literal))
            self.literal = ''

    def ReadDollar(self):
        text, i = self.text, self.index
        next_char = text[i + 1] if (i + 1 < len(text)) else ''
        if (next_char == '('):
            self.has_command_substitution = True
            self.literal += '$('
            self.index = i + 2
        elif (next_char == '{'):
            close_index = text.find('}', i + 2)
            if (close_index == -1):
                raise _UnterminatedError('unterminated ${', i)
            inner = text[i + 2 : close_index]
            self.FlushLiteral()
            if (kVariableNamePattern.match(inner) or (inner in kSpecialParameters and inner != '')):
                self.parts.append((PartKind.kVariable, inner))
            else:
                self.parts.append((PartKind.kExpression, inner))
            self.index = close_index + 1
        elif ((next_char != '') and (next_char.isalpha() or next_char == '_')):
            match = re.match(r'[A-Za-z_][A-Za-z0-9_]*', text[i + 1 :])
            self.FlushLiteral()
            self.parts.append((PartKind.kVariable, match.group(0)))
            self.index = i + 1 + len(match.group(0))
        elif ((next_char != '') and (next_char in kSpecialParameters)):
            self.FlushLiteral()
            self.parts.append((PartKind.kVariable, next_char))
            self.index = i + 2
        else:
            self.literal += '$'
            self.index = i + 1
    # End ReadDollar

    def ReadDoubleQuoted(self):
        text = self.text
        self.quoted = True
        opening_index = self.index
        self.index += 1
        while (True):
            if (self.index >= len(text)):
                raise _UnterminatedError('unterminated double quote', opening_index)
            c = text[self.index]
            if (c == '"'):
                self.index += 1
                return
            if ((c == '\\') and (self.index + 1 < len(text))
                    and (text[self.index + 1] in '$`"\\\n')):
                if (text[self.index + 1] != '\n'):
                    self.literal += text[self.index + 1]
                self.index += 2
            elif (c == '`'):
                self.has_command_substitution = True
                self.literal += c
                self.index += 1
            elif (c == '$'):
                self.ReadDollar()
            else:
                self.literal += c
                self.index += 1
    # End ReadDoubleQuoted

    def Read(self) -> Word:
        text = self.text
        while (self.index < len(text)):
            c = text[self.index]
            if ((c in ' \t\n') or (c in kOperatorStartCharacters)):
                break
            if (c == '\\'):
                if (self.index + 1 >= len(text)):
                    self.literal += c
                    self.index += 1
                elif (text[self.index + 1] == '\n'):
                    self.index += 2
                else:
                    self.quoted = True
                    self.literal += text[self.index + 1]
                    self.index += 2
            elif (c == "'"):
                close_index = text.find("'", self.index + 1)
                if (close_index == -1):
                    raise _UnterminatedError('unterminated single quote', self.index)
                self.quoted = True
                self.literal += text[self.index + 1 : close_index]
                self.index = close_index + 1
            elif (c == '"'):
                self.ReadDoubleQuoted()
            elif (c == '`'):
                self.has_command_substitution = True
                self.literal += c
                self.index += 1
            elif (c == '$'):
                self.ReadDollar()
            else:
                self.literal += c
                self.index += 1
        self.FlushLiteral()
        if (self.quoted and (len(self.parts) == 0)):
            self.parts.append((PartKind.kLiteral, ''))
        return Word(raw=text[self.start : self.index], parts=tuple(self.parts),
                    start=self.start, end=self.index, quoted=self.quoted,
                    has_command_substitution=self.has_command_substitution)
    # End Read
# End class _WordReader

def Tokenize(text: str) -> List[Token]:
    CheckType(text, 'text', str)
    tokens: List[Token] = []
    i = 0
    while (i < len(text)):
        c = text[i]
        if (c in ' \t'):
            i += 1
        elif ((c == '\\') and text.startswith('\\\n', i)):
            i += 2
        elif (c == '#'):
            newline_index = text.find('\n', i)
            i = len(text) if (newline_index == -1) else newline_index
        elif (c == '\n'):
            tokens.append(Token(TokenKind.kNewline, '\n', i, i + 1))
            i += 1
        elif (c in kOperatorStartCharacters):
            operator = next(op for op in kOperators if text.startswith(op, i))
            tokens.append(Token(TokenKind.kOperator, operator, i, i + len(operator)))
            i += len(operator)
        else:
            try:
                word = _WordReader(text, i).Read()
            except _UnterminatedError as e:
                tokens.append(Token(TokenKind.kUnsupported, e.reason, e.offset, len(text)))
                break
            kind = TokenKind.kWord
            if (word.raw.isdigit() and (word.end < len(text)) and (text[word.end] in '<>')):
                kind = TokenKind.kIoNumber
            tokens.append(Token(kind, word.raw, word.start, word.end, word))
            i = word.end
    tokens.append(Token(TokenKind.kEnd, '', len(text), len(text)))
    return tokens
# End Tokenize

# =================================== AST ===================================

@dataclass
class Redirect:
    '''
    Member variables:
     - operator: str
     - target: Word
     - io_number: int or None
    '''
    operator: str
    target: Word
    io_number: int = None

    # True if the redirect opens a file for writing (not a descriptor duplication or /dev/null)
    def WritesFile(self) -> bool:
        if (self.operator not in kFileWriteRedirectOperators):
            return False
        return not (self.target.IsLiteral() and (self.target.value == kNullDevice))
    # End WritesFile
# End class Redirect

@dataclass
class SimpleCommand:
    '''
    Member variables:
     - assignments: list of Word ("NAME=value" prefixes)
     - words: list of Word (command name followed by arguments)
     - redirects: list of Redirect
     - start, end: int (source span)
    '''
    assignments: List[Word] = field(default_factory=list)
    words: List[Word] = field(default_factory=list)
    redirects: List[Redirect] = field(default_factory=list)
    start: int = 0
    end: int = 0

    # Command name with any leading directory removed, or None for assignment-only commands
    @property
    def name(self) -> str or None:
        if (len(self.words) == 0):
            return None
        return self.words[0].value.rsplit('/', 1)[-1] if self.words[0].value.startswith('/') \
                else self.words[0].value

    @property
    def arguments(self) -> List[str]:
        return [word.value for word in self.words[1 :]]
# End class SimpleCommand

@dataclass
class Pipeline:
    commands: List[SimpleCommand]
    negated: bool = False

@dataclass
class AndOrList:
    '''
    Member variables:
     - pipelines: list of Pipeline
     - operators: list of '&&' / '||', one fewer than pipelines
     - background: bool (terminated by '&')
    '''
    pipelines: List[Pipeline]
    operators: List[str] = field(default_factory=list)
    background: bool = False

@dataclass
class IfBlock:
    '''
    Member variables:
     - clauses: list of (condition items, body items) for the if and each elif
     - else_body: list of items, or None
    '''
    clauses: List[Tuple[list, list]]
    else_body: list = None

@dataclass
class ParsedScript:
    '''
    Member variables:
     - text: str
     - items: list of AndOrList or IfBlock
     - unsupported_reason: str or None
     - unsupported_offset: int or None
    '''
    text: str
    items: list
    unsupported_reason: str = None
    unsupported_offset: int = None

    def IsSupported(self) -> bool:
        return self.unsupported_reason is None

    # All simple commands in source order, including those inside if blocks
    @property
    def commands(self) -> List[SimpleCommand]:
        return list(IterateCommands(self.items))
# End class ParsedScript

def IterateCommands(items: list):
    for item in items:
        if (isinstance(item, IfBlock)):
            for condition, body in item.clauses:
                yield from IterateCommands(condition)
                yield from IterateCommands(body)
            if (item.else_body is not None):
                yield from IterateCommands(item.else_body)
        else:
            for pipeline in item.pipelines:
                yield from pipeline.commands
# End IterateCommands

# ================================= Parser =================================

class _Unsupported(Exception):
    def __init__(self, reason: str, offset: int):
        super().__init__(reason)
        self.reason = reason
        self.offset = offset

class _Parser:
    def __init__(self, tokens: List[Token]):
        self.tokens = tokens
        self.position = 0

    def Peek(self) -> Token:
        return self.tokens[self.position]

    def Next(self) -> Token:
        token = self.tokens[self.position]
        if (token.kind != TokenKind.kEnd):
            self.position += 1
        return token

    def IsOperator(self, *operators) -> bool:
        token = self.Peek()
        return (token.kind == TokenKind.kOperator) and (token.text in operators)

    # Reserved words are only recognized unquoted, in command position
    def PeekKeyword(self) -> str or None:
        token = self.Peek()
        if ((token.kind == TokenKind.kWord) and not token.word.quoted):
            return token.text
        return None

    def SkipNewlines(self):
        while (self.Peek().kind == TokenKind.kNewline):
            self.Next()

    def SkipSeparators(self):
        while ((self.Peek().kind == TokenKind.kNewline) or self.IsOperator(';')):
            self.Next()

    def Fail(self, reason: str, token: Token = None):
        token = token or self.Peek()
        raise _Unsupported(reason, token.start)

    def CheckSupportedToken(self):
        token = self.Peek()
        if (token.kind == TokenKind.kUnsupported):
            self.Fail(token.text)
        keyword = self.PeekKeyword()
        if (keyword in kUnsupportedKeywords):
            self.Fail('unsupported construct "{}"'.format(keyword))
        if (self.IsOperator('(', ')')):
            self.Fail('subshells are not supported')
        if (self.IsOperator(';;')):
            self.Fail('case clauses are not supported')
    # End CheckSupportedToken

    # Parses items until one of the terminator keywords (left unconsumed) or end of input
    def ParseList(self, terminators: frozenset, in_if: bool) -> list:
        items = []
        while (True):
            self.SkipSeparators()
            token = self.Peek()
            if (token.kind == TokenKind.kEnd):
                return items
            keyword = self.PeekKeyword()
            if (keyword in terminators):
                return items
            items.append(self.ParseItem(in_if))
    # End ParseList

    def ParseItem(self, in_if: bool):
        keyword = self.PeekKeyword()
        if (keyword == 'if'):
            if (in_if):
                self.Fail('nested if blocks are not supported')
            return self.ParseIf()
        if (keyword in kIfKeywords):
            self.Fail('unexpected "{}"'.format(keyword))
        return self.ParseAndOr()
    # End ParseItem

    def ParseIf(self) -> IfBlock:
        self.Next()  # if
        clauses = []
        else_body = None
        while (True):
            condition = self.ParseList(frozenset(['then']), in_if=True)
            if (self.PeekKeyword() != 'then'):
                self.Fail('if without then')
            self.Next()
            body = self.ParseList(frozenset(['elif', 'else', 'fi']), in_if=True)
            clauses.append((condition, body))
            keyword = self.PeekKeyword()
            if (keyword == 'elif'):
                self.Next()
                continue
            if (keyword == 'else'):
                self.Next()
                else_body = self.ParseList(frozenset(['fi']), in_if=True)
                keyword = self.PeekKeyword()
            if (keyword != 'fi'):
                self.Fail('if without fi')
            self.Next()
            break
        token = self.Peek()
        if not ((token.kind in (TokenKind.kNewline, TokenKind.kEnd)) or self.IsOperator(';')):
            self.Fail('operators after "fi" are not supported')
        return IfBlock(clauses, else_body)
    # End ParseIf

    def ParseAndOr(self) -> AndOrList:
        pipelines = [self.ParsePipeline()]
        operators = []
        while (self.IsOperator('&&', '||')):
            operators.append(self.Next().text)
            self.SkipNewlines()
            if (self.PeekKeyword() == 'if'):
                self.Fail('if blocks inside and-or lists are not supported')
            pipelines.append(self.ParsePipeline())
        background = False
        if (self.IsOperator('&')):
            self.Next()
            background = True
        return AndOrList(pipelines, operators, background)
    # End ParseAndOr

    def ParsePipeline(self) -> Pipeline:
        negated = False
        if (self.PeekKeyword() == '!'):
            self.Next()
            negated = True
        commands = [self.ParseSimpleCommand()]
        while (self.IsOperator('|')):
            self.Next()
            self.SkipNewlines()
            commands.append(self.ParseSimpleCommand())
        return Pipeline(commands, negated)
    # End ParsePipeline

    def ParseRedirect(self, command: SimpleCommand):
        io_number = None
        if (self.Peek().kind == TokenKind.kIoNumber):
            io_number = int(self.Next().text)
        operator_token = self.Next()
        if (operator_token.text == '<<'):
            self.Fail('here-documents are not supported', operator_token)
        target_token = self.Peek()
        if (target_token.kind != TokenKind.kWord):
            self.Fail('redirect without target', operator_token)
        self.Next()
        if (target_token.word.has_command_substitution):
            self.Fail('command substitution is not supported', target_token)
        command.redirects.append(Redirect(operator_token.text, target_token.word, io_number))
        command.end = target_token.end
    # End ParseRedirect

    def ParseSimpleCommand(self) -> SimpleCommand:
        self.CheckSupportedToken()
        if (self.PeekKeyword() in kIfKeywords):
            self.Fail('unexpected "{}"'.format(self.PeekKeyword()))
        command = SimpleCommand(start=self.Peek().start, end=self.Peek().start)
        while (True):
            token = self.Peek()
            if (token.kind == TokenKind.kUnsupported):
                self.Fail(token.text)
            if ((token.kind == TokenKind.kIoNumber)
                    or ((token.kind == TokenKind.kOperator) and (token.text in kRedirectOperators))):
                self.ParseRedirect(command)
                continue
            if (token.kind != TokenKind.kWord):
                break
            if (token.word.has_command_substitution):
                self.Fail('command substitution is not supported')
            is_assignment = ((len(command.words) == 0) and not token.text.startswith('=')
                             and kAssignmentPattern.match(token.text) is not None)
            if (is_assignment):
                command.assignments.append(token.word)
            else:
                if ((len(command.words) == 0) and not token.word.quoted):
                    if (token.text in kUnsupportedKeywords):
                        self.Fail('unsupported construct "{}"'.format(token.text))
                    if (token.text in kUnsupportedCommands):
                        self.Fail('"{}" is not supported'.format(token.text))
                command.words.append(token.word)
            self.Next()
            command.end = token.end
            if ((len(command.words) == 1) and self.IsOperator('(')):
                self.Fail('function definitions are not supported')
        if ((len(command.words) == 0) and (len(command.assignments) == 0)
                and (len(command.redirects) == 0)):
            self.Fail('empty command')
        return command
    # End ParseSimpleCommand
# End class _Parser

def ParseScript(text: str) -> ParsedScript:
    CheckType(text, 'text', str)
    parser = _Parser(Tokenize(text))
    items = []
    try:
        while (True):
            parser.SkipSeparators()
            if (parser.Peek().kind == TokenKind.kEnd):
                break
            items.append(parser.ParseItem(in_if=False))
    except _Unsupported as e:
        return ParsedScript(text, items, e.reason, e.offset)
    return ParsedScript(text, items)
# End ParseScript
