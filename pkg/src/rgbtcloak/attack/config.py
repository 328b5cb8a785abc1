import enum
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from rgbtcloak.composer.types import EotConfig
from rgbtcloak.detectors.objective import DEFAULT_TAU
from rgbtcloak.exception import IllegalArgumentException

ENSEMBLE_STAGES = ('Early', 'Mid', 'Late', 'Independent')


class AttackMethod(enum.Enum):
    SDCO = 'SDCO'
    NO_SRD = 'NoSRD'
    GUMBEL = 'Gumbel'
    STE = 'STE'
    RANDOM = 'Random'
    ENSEMBLE = 'Ensemble'

    @staticmethod
    def parse(tag: str) -> 'AttackMethod':
        for method in AttackMethod:
            if method.value.lower() == str(tag).lower():
                return method

        raise IllegalArgumentException(f'Unknown attack method "{tag}", expected one of {[m.value for m in AttackMethod]}')


@dataclass(frozen=True)
class AttackConfig:
    """
    Optimizer settings.

    `alpha` is the per-cell discretization probability of SDCO, `eta` the plain gradient step
    and `iterations` the iteration budget. `ensemble_weights` weigh the Early, Mid, Late and
    Independent stages when the method is Ensemble.
    """
    method: AttackMethod = AttackMethod.SDCO
    alpha: float = 0.7
    eta: float = 0.02
    iterations: int = 500
    batch: int = 8
    ensemble_weights: Tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    eot: EotConfig = field(default_factory=EotConfig)
    seed: int = 0
    gumbel_tau: float = 0.5
    smooth_max_tau: float = DEFAULT_TAU
    log_every: int = 50

    def __post_init__(self):
        if self.iterations < 0:
            raise IllegalArgumentException(f'Iteration count must not be negative, got {self.iterations}')
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise IllegalArgumentException(f'Step size must be positive, got {self.eta}')
        if not 0.0 <= self.alpha <= 1.0:
            raise IllegalArgumentException(f'Discretization probability must be in [0, 1], got {self.alpha}')
        if self.batch < 1:
            raise IllegalArgumentException(f'Batch size must be positive, got {self.batch}')
        if self.gumbel_tau <= 0:
            raise IllegalArgumentException(f'Gumbel temperature must be positive, got {self.gumbel_tau}')
        if len(self.ensemble_weights) != len(ENSEMBLE_STAGES):
            raise IllegalArgumentException(f'Expected {len(ENSEMBLE_STAGES)} ensemble weights, got {list(self.ensemble_weights)}')
        if any(w < 0 for w in self.ensemble_weights):
            raise IllegalArgumentException(f'Ensemble weights must not be negative, got {list(self.ensemble_weights)}')
        if self.method is AttackMethod.ENSEMBLE and not any(w > 0 for w in self.ensemble_weights):
            raise IllegalArgumentException('Ensemble attack needs at least one positive stage weight')

    def as_dict(self) -> dict:
        return {
            'method': self.method.value,
            'alpha': self.alpha,
            'eta': self.eta,
            'iterations': self.iterations,
            'batch': self.batch,
            'ensemble_weights': list(self.ensemble_weights),
            'eot': self.eot.as_dict(),
            'seed': self.seed,
            'gumbel_tau': self.gumbel_tau,
            'smooth_max_tau': self.smooth_max_tau,
            'log_every': self.log_every,
        }

    @staticmethod
    def from_dict(data: dict) -> 'AttackConfig':
        values = dict(data)
        if 'method' in values:
            values['method'] = AttackMethod.parse(values['method'])
        if 'ensemble_weights' in values:
            values['ensemble_weights'] = tuple(float(w) for w in values['ensemble_weights'])
        if 'eot' in values:
            values['eot'] = EotConfig.from_dict(values['eot'])

        return AttackConfig(**values)
