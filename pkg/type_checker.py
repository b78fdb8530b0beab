import logger

def _TypeName(required_type) -> str:
    return (' or '.join(t.__name__ for t in required_type)
            if isinstance(required_type, tuple)
            else required_type.__name__)
# End _TypeName

def _Fail(error_message: str):
    logger.Log('Error: TypeError: ' + error_message)
    raise TypeError(error_message)
# End _Fail

# Logs error and raises exception if variable is not an instance of required type
# Note: can use a tuple of types for required_type to give multiple options
# bool is rejected where int is required, since bool is a subclass of int
def CheckType(variable, variable_name: str, required_type):
    bool_as_int = (isinstance(variable, bool) and (required_type is int))
    if (bool_as_int or not isinstance(variable, required_type)):
        _Fail('{} has type: {}; required type(s): {}'.format(
                variable_name, type(variable).__name__, _TypeName(required_type)))
# End CheckType()

# Handle compound types, for example to check if something is a list of TarEntry, use:
#  - required_outer_type = (list, tuple)
#  - required_inner_type = TarEntry
# Checks every item; containers here are small enough (entries of one package)
def CheckType2(variable, variable_name: str, required_outer_type, required_inner_type):
    CheckType(variable, variable_name, required_outer_type)
    for index, inner_value in enumerate(variable):
        if (not isinstance(inner_value, required_inner_type)):
            _Fail('{}[{}] has type: {}; required inner type(s): {}'.format(
                    variable_name, index, type(inner_value).__name__,
                    _TypeName(required_inner_type)))
# End CheckType2()

# Byte-like inputs (bytes, bytearray, memoryview) are all accepted where bytes are read
def CheckBytes(variable, variable_name: str):
    CheckType(variable, variable_name, (bytes, bytearray, memoryview))
# End CheckBytes
