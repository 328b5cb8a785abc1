import argparse
import sys
from typing import List, Optional

from rgbtcloak import __version__ as rgbtcloak_version
from rgbtcloak._internal.cli.commands import COMMANDS, EVAL_MODES, echo_config
from rgbtcloak._internal.cli.config import resolve_config
from rgbtcloak._internal.wrapper.mainwrapper import EXIT_CONFIG_ERROR, _run
from rgbtcloak.attack.config import AttackMethod
from rgbtcloak.exception import ConfigException

_COMMAND_HELP = {
    'datagen': 'generate or ingest backgrounds and build the detector training scenes',
    'train': 'train the toy detector zoo and check the validation recall floor',
    'attack': 'optimize a non-overlapping pattern against the configured detectors',
    'eval': 'evaluate patterns: asr, sweep, compare, transfer or alpha-sweep',
    'export': 'write the print image, film mask and manifest for a run',
}


class _ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigException(message)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='stage config file (YAML)')
    common.add_argument('--seed', type=int, help='master seed, overrides the config file')
    common.add_argument('--out', help='output directory, overrides the config file')
    common.add_argument('--quiet', action='store_true', help='log warnings and errors only')
    common.add_argument(
        '--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
        help='override one config value, may be repeated'
    )

    parser = _ArgumentParser(prog='rgbtcloak', description='Adversarial RGB-T clothing patterns against multimodal person detectors.')
    parser.add_argument('--version', action='version', version=f'rgbtcloak {rgbtcloak_version}')
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=_ArgumentParser)
    subparsers.required = True

    for name, help_text in _COMMAND_HELP.items():
        sub = subparsers.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == 'attack':
            sub.add_argument('--method', choices=[m.value for m in AttackMethod], help='overrides attack.method')
        if name == 'eval':
            sub.add_argument('--mode', choices=list(EVAL_MODES), help='overrides eval.mode')

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except ConfigException as ex:
        print(f'rgbtcloak: error: {ex}', file=sys.stderr)
        return EXIT_CONFIG_ERROR

    flags = {'seed': args.seed, 'out': args.out}
    if args.command == 'attack':
        flags['attack.method'] = args.method
    if args.command == 'eval':
        flags['eval.mode'] = args.mode

    def command():
        config = resolve_config(args.config, args.overrides, **flags)
        echo_config(config, args.command)
        COMMANDS[args.command](config)

    return _run(command, quiet=args.quiet)


def _bootstrap():
    sys.exit(main())
