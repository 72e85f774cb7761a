# attacks package initialization
from typing import Callable, Dict

from attacks.fgsm import FGSM_VARIANTS, fgsm_family_attack
from attacks.random_noise import random_perturbation_attack
from attacks.sparse import sparse_vra_attack
from attacks.targeted_ll import targeted_ll_query_attack
from attacks.utils import AttackConfig, AttackResult
from attacks.vra import vra_attack, vra_loss, vra_perturb
from errors import ParameterError

__all__ = [
    'AttackConfig', 'AttackResult', 'ATTACK_RUNNERS', 'get_runner', 'vra_loss', 'vra_perturb', 'vra_attack',
    'sparse_vra_attack', 'fgsm_family_attack', 'targeted_ll_query_attack', 'random_perturbation_attack',
]


def _vra_random(model, oracle, clip, true_label, cfg, clean_label=None):
    return vra_attack(model, oracle, clip, true_label, cfg.with_overrides(direction_mode="random"), clean_label)


def _random_noise(model, oracle, clip, true_label, cfg, clean_label=None):
    return random_perturbation_attack(oracle, clip, true_label, cfg, clean_label)


def _fgsm_runner(variant: str) -> Callable:
    def run(model, oracle, clip, true_label, cfg, clean_label=None):
        return fgsm_family_attack(model, oracle, clip, true_label, variant, cfg, clean_label)
    return run


# Every runner takes (source_model, oracle, clip, true_label, cfg, clean_label=None)
ATTACK_RUNNERS: Dict[str, Callable[..., AttackResult]] = {
    "vra": vra_attack,
    "vra_random": _vra_random,
    "sparse_vra": sparse_vra_attack,
    "targeted_ll": targeted_ll_query_attack,
    "random_noise": _random_noise,
}
ATTACK_RUNNERS.update({
    variant.lower().replace("-", "_"): _fgsm_runner(variant) for variant in FGSM_VARIANTS
})

# Attacks that spend a single query regardless of budget
SINGLE_QUERY_ATTACKS = frozenset(variant.lower().replace("-", "_") for variant in FGSM_VARIANTS)


def get_runner(name: str) -> Callable[..., AttackResult]:
    try:
        return ATTACK_RUNNERS[name]
    except KeyError:
        raise ParameterError(f"Unknown attack '{name}', available: {sorted(ATTACK_RUNNERS)}") from None
