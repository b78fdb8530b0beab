import script_parser
from script_parser import AndOrList, IfBlock, PartKind, TokenKind
from testing_harness import CHECK, RunTests

def Names(text: str) -> list:
    return [command.name for command in script_parser.ParseScript(text).commands]

def TestSimpleCommands():
    parsed = script_parser.ParseScript('#!/bin/sh\n# comment\nmkdir -p /var/lib/x\nexit 0\n')
    CHECK(parsed.IsSupported())
    CHECK([command.name for command in parsed.commands] == ['mkdir', 'exit'])
    CHECK(parsed.commands[0].arguments == ['-p', '/var/lib/x'])
# End TestSimpleCommands

def TestQuoting():
    command = script_parser.ParseScript('''adduser -g 'Redis Server' -h "/var/lib/re dis" a\\ b\n''').commands[0]
    CHECK(command.arguments == ['-g', 'Redis Server', '-h', '/var/lib/re dis', 'a b'])
    CHECK(command.words[2].quoted)
    CHECK(not command.words[1].quoted)
# End TestQuoting

def TestVariables():
    command = script_parser.ParseScript('chown "$user":${group} ${HOME:-/root}/x $1\n').commands[0]
    CHECK(command.words[1].parts == ((PartKind.kVariable, 'user'), (PartKind.kLiteral, ':'),
                                     (PartKind.kVariable, 'group')))
    CHECK(command.words[2].parts[0] == (PartKind.kExpression, 'HOME:-/root'))
    CHECK(command.words[3].parts == ((PartKind.kVariable, '1'),))
    CHECK(not command.words[1].IsLiteral())
    CHECK(command.words[1].value == '$user:$group')
# End TestVariables

def TestAssignmentsAndRedirects():
    command = script_parser.ParseScript('LC_ALL=C grep -q x /etc/shells 2>/dev/null >>/tmp/log\n').commands[0]
    CHECK(command.name == 'grep')
    CHECK([word.value for word in command.assignments] == ['LC_ALL=C'])
    CHECK([(redirect.operator, redirect.io_number) for redirect in command.redirects]
          == [('>', 2), ('>>', None)])
    CHECK(not command.redirects[0].WritesFile())
    CHECK(command.redirects[1].WritesFile())
# End TestAssignmentsAndRedirects

def TestAndOrAndPipelines():
    parsed = script_parser.ParseScript('grep -q sh /etc/shells || echo /bin/sh >> /etc/shells\n'
                                       'cat /x | tr a b &\n! true\n')
    CHECK(len(parsed.items) == 3)
    first, second, third = parsed.items
    CHECK(isinstance(first, AndOrList) and first.operators == ['||'])
    CHECK(len(second.pipelines[0].commands) == 2 and second.background)
    CHECK(third.pipelines[0].negated)
    CHECK(Names('a && b || c; d') == ['a', 'b', 'c', 'd'])
# End TestAndOrAndPipelines

def TestIfBlock():
    parsed = script_parser.ParseScript('if [ -d /x ]; then\n  rm -r /x\nelif true; then :\n'
                                       'else\n  mkdir /x\nfi\necho done\n')
    CHECK(parsed.IsSupported())
    CHECK(isinstance(parsed.items[0], IfBlock))
    CHECK(len(parsed.items[0].clauses) == 2)
    CHECK([command.name for command in parsed.commands] == ['[', 'rm', 'true', ':', 'mkdir', 'echo'])
# End TestIfBlock

def TestCommandSpans():
    text = 'mkdir -p /a\n  addgroup -S redis  \n'
    for command in script_parser.ParseScript(text).commands:
        CHECK(text[command.start : command.end] in ('mkdir -p /a', 'addgroup -S redis'))
# End TestCommandSpans

def TestPathCommandName():
    CHECK(Names('/usr/sbin/adduser -S x\n') == ['adduser'])
# End TestPathCommandName

def TestUnsupportedConstructs():
    for text in ('for x in a b; do echo $x; done\n',
                 'while true; do :; done\n',
                 'case $1 in a) :;; esac\n',
                 'f() { :; }\n',
                 '(cd /tmp && rm x)\n',
                 'cat <<EOF\nx\nEOF\n',
                 'eval "$cmd"\n',
                 'x=$(id -u)\n',
                 'echo `date`\n',
                 'if a; then if b; then :; fi; fi\n',
                 'echo "unterminated\n',
                 '{ echo; }\n'):
        parsed = script_parser.ParseScript(text)
        CHECK(not parsed.IsSupported())
        CHECK(parsed.unsupported_offset is not None)
# End TestUnsupportedConstructs

def TestUnsupportedKeepsPrefix():
    parsed = script_parser.ParseScript('mkdir /a\nfor x in 1; do :; done\n')
    CHECK(not parsed.IsSupported())
    CHECK([command.name for command in parsed.commands] == ['mkdir'])
    CHECK(parsed.unsupported_offset == len('mkdir /a\n'))
# End TestUnsupportedKeepsPrefix

def TestQuotedKeywordIsAWord():
    parsed = script_parser.ParseScript("echo for 'while'\n")
    CHECK(parsed.IsSupported())
    CHECK(parsed.commands[0].arguments == ['for', 'while'])
# End TestQuotedKeywordIsAWord

def TestLineContinuation():
    CHECK(script_parser.ParseScript('adduser -S \\\n  -D x\n').commands[0].arguments == ['-S', '-D', 'x'])
# End TestLineContinuation

def TestTokenizer():
    kinds = [token.kind for token in script_parser.Tokenize('a 2>&1\n')]
    CHECK(kinds == [TokenKind.kWord, TokenKind.kIoNumber, TokenKind.kOperator, TokenKind.kWord,
                    TokenKind.kNewline, TokenKind.kEnd])
# End TestTokenizer

def TestEmptyScript():
    parsed = script_parser.ParseScript('#!/bin/sh\n\n')
    CHECK(parsed.IsSupported() and parsed.commands == [])
# End TestEmptyScript

def main():
    RunTests(globals())

if (__name__ == '__main__'):
    main()
