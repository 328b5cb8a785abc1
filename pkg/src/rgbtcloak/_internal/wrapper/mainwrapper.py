import logging
import sys
from typing import Callable, Optional

from rgbtcloak.exception import AcceptanceFloorException, ConfigException

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2
EXIT_ACCEPTANCE_FLOOR = 3
EXIT_INTERRUPTED = 130

_log = logging.getLogger('rgbtcloak')


def _init_logging(quiet: bool = False):
    logging.basicConfig(
        format='%(asctime)s.%(msecs)03d %(levelname)8s | %(message)s',
        level=logging.WARNING if quiet else logging.INFO,
        stream=sys.stdout,
        datefmt="%Y-%m-%d %H:%M:%S",
        # one process may run several commands (tests do)
        force=True
    )


def _run(
    command: Callable[[], Optional[int]],
    quiet: bool = False,
    init_logging: Optional[Callable[[bool], None]] = _init_logging
) -> int:
    """
    Runs a command and turns its outcome into a process exit code.
    """
    if init_logging:
        init_logging(quiet)

    # noinspection PyBroadException
    try:
        return command() or EXIT_OK
    except KeyboardInterrupt:
        return EXIT_INTERRUPTED
    except ConfigException as ex:
        _log.error(f'Configuration error: {ex}')
        return EXIT_CONFIG_ERROR
    except AcceptanceFloorException as ex:
        _log.error(f'{ex}')
        for name, metrics in sorted(ex.metrics.items()):
            _log.error(f' ! {name}: {metrics}')
        return EXIT_ACCEPTANCE_FLOOR
    except Exception as ex:
        _log.error(f'{type(ex).__name__}: {ex}')
        _log.debug('Traceback of the failure', exc_info=True)
        return EXIT_RUNTIME_ERROR
