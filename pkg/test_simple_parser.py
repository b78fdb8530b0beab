import simple_parser
from testing_harness import CHECK, ExpectError, RunTests

def TestParseFromTemplate():
    CHECK(simple_parser.ParseFromTemplate('abc:xyz', '{}:{~}') == (True, ['abc']))
    CHECK(simple_parser.ParseFromTemplate('a=1, b=2', '{}={}, {}={}') == (True, ['a', '1', 'b', '2']))
    CHECK(simple_parser.ParseFromTemplate('key:', '{}:{}') == (True, ['key', '']))
    CHECK(simple_parser.ParseFromTemplate('no separator', '{}:{}')[0] == False)
# End TestParseFromTemplate

def TestMatchRoute():
    template = '/v1/repos/{}/{}/APKINDEX.tar.gz'
    CHECK(simple_parser.MatchRoute('/v1/repos/abc/x86_64/APKINDEX.tar.gz', template)
          == ['abc', 'x86_64'])
    CHECK(simple_parser.MatchRoute('/v1/repos/abc/x86_64/other.apk', template) is None)
    CHECK(simple_parser.MatchRoute('/v1/repos/abc/key', '/v1/repos/{}/key') == ['abc'])
    CHECK(simple_parser.MatchRoute('/v1/repos//key', '/v1/repos/{}/key') is None)
    CHECK(simple_parser.MatchRoute('/v1/repos/a/b/key', '/v1/repos/{}/key') is None)
    CHECK(simple_parser.MatchRoute('/v1/repos/a/b/c.apk', '/v1/repos/{}/{}/{}') == ['a', 'b', 'c.apk'])
    CHECK(simple_parser.MatchRoute('/v1/repos/a/b/c/d.apk', '/v1/repos/{}/{}/{}') is None)
# End TestMatchRoute

def TestParseKeyValueLine():
    CHECK(simple_parser.ParseKeyValueLine('   ') is None)
    CHECK(simple_parser.ParseKeyValueLine('# Listen address: x') is None)
    CHECK(simple_parser.ParseKeyValueLine('Listen address:  127.0.0.1:8443 \n')
          == ('Listen address', '127.0.0.1:8443'))
    ExpectError(ValueError, simple_parser.ParseKeyValueLine, 'Listen address')
# End TestParseKeyValueLine

def TestScalars():
    CHECK(simple_parser.IsInt('42') and simple_parser.IsInt('-1'))
    CHECK(not simple_parser.IsInt('4.2') and not simple_parser.IsInt(None))
    for text in ('true', 'Yes', '1', ' ON '):
        CHECK(simple_parser.ParseBool(text) is True)
    for text in ('false', 'No', '0', 'off'):
        CHECK(simple_parser.ParseBool(text) is False)
    ExpectError(ValueError, simple_parser.ParseBool, 'maybe')
# End TestScalars

def main():
    RunTests(globals())

if (__name__ == '__main__'):
    main()
