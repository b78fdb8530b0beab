'''
Thin wrapper over the logging package that keeps the old Log(item) call shape.

Usage:
 - InitializeLog('tsr.log', 'info') once per process (CLI or server)
 - Log('Info: refreshed repository ...') anywhere afterwards
Messages follow the "Error: ", "Warning: ", "Info: " prefix convention.
Never pass key material or plaintext sealed state to Log.
'''

import logging
import sys

kDefaultLogFilename = 'tsr.log'
kLoggerName = 'tsr'
kLogFormat = '%(asctime)s %(levelname)s [%(threadName)s] %(message)s'

kLogLevels = {
    'debug' : logging.DEBUG,
    'info' : logging.INFO,
    'warning' : logging.WARNING,
    'error' : logging.ERROR}

g_logger = logging.getLogger(kLoggerName)
g_initialized = False

def InitializeLog(log_filename: str = kDefaultLogFilename, log_level: str = 'info',
                  log_to_stderr: bool = True):
    global g_initialized
    if (log_level not in kLogLevels):
        raise ValueError('unknown log level: "{}"'.format(log_level))
    for handler in list(g_logger.handlers):
        g_logger.removeHandler(handler)
        handler.close()
    formatter = logging.Formatter(kLogFormat)
    if (log_filename != ''):
        file_handler = logging.FileHandler(log_filename, mode='a', encoding='utf-8')
        file_handler.setFormatter(formatter)
        g_logger.addHandler(file_handler)
    if (log_to_stderr):
        stream_handler = logging.StreamHandler(sys.stderr)
        stream_handler.setFormatter(formatter)
        g_logger.addHandler(stream_handler)
    g_logger.setLevel(kLogLevels[log_level])
    g_logger.propagate = False
    g_initialized = True
# End InitializeLog()

# Infers the level from the message prefix when level is not given
def _LevelForMessage(message: str) -> int:
    if (message.startswith('Error')):
        return logging.ERROR
    elif (message.startswith('Warning')):
        return logging.WARNING
    elif (message.startswith('Debug')):
        return logging.DEBUG
    return logging.INFO
# End _LevelForMessage

# Used to log any errors, warnings, or debug information
# item can be a string or anything convertible to string
def Log(item, level: str = None):
    global g_initialized
    if (not g_initialized):
        # Library use without InitializeLog: records propagate to the host's root logger
        g_logger.addHandler(logging.NullHandler())
        g_initialized = True
    message: str = item if isinstance(item, str) else str(item)
    numeric_level = kLogLevels[level] if level else _LevelForMessage(message)
    g_logger.log(numeric_level, message)
# End Log()
