__version__ = '0.1.0.dev1'

# noinspection PyProtectedMember
from rgbtcloak._internal.wrapper.mainwrapper import _run as run
# noinspection PyProtectedMember
from rgbtcloak._internal.wrapper.mainwrapper import _init_logging as init_logging
from rgbtcloak.attack.config import AttackConfig, AttackMethod
from rgbtcloak.attack.optimizers import optimize, sdco_optimize
from rgbtcloak.attack.run import AttackRun, load_run, save_run
from rgbtcloak.detectors.model import DetectorModel, FusionArch
from rgbtcloak.detectors.storage import load_model, save_model
from rgbtcloak.evaluation.asr import asr, sweep
from rgbtcloak.evaluation.metrics import EvalConfig
from rgbtcloak.export.layout import export_layout
from rgbtcloak.norp.pattern import MaterialConstants, NorpParams, binarize, realize
from rgbtcloak.utils.dotdict import as_dot_dict, unwrap_dot_dict
