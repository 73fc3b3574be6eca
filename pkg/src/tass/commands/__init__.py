"""Implementations behind the CLI subcommands."""

from tass.commands.ablate import ablate_impl, variant_configs
from tass.commands.checks import gradcheck_impl
from tass.commands.data import gen_data_impl, preprocess_impl
from tass.commands.training import eval_impl, load_train_config, train_impl

__all__ = [
    "ablate_impl",
    "eval_impl",
    "gen_data_impl",
    "gradcheck_impl",
    "load_train_config",
    "preprocess_impl",
    "train_impl",
    "variant_configs",
]
