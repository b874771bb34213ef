"""Test-time policy adaptation on small softmax policies.

The heavy lifting lives in the compiled extension; this package re-exports
its public surface.
"""

from ._core import (
    ArgumentError,
    ConfigError,
    InteractionSession,
    NumericError,
    PolicyModel,
    TargetValue,
    TaskInstance,
    UpdateMechanism,
    closed_form_policy,
    dense_reward,
    effective_params,
    generate_suite,
    kl,
    mechanism_distribution,
    mechanism_gradient,
    partition_single,
    practical_target,
    practical_target_vector,
    predicted_delta_kl,
    rank_one_solution,
    rule_reward,
    run_experiment,
    run_session,
    solve_normal_equations,
)

__all__ = [
    "ArgumentError",
    "ConfigError",
    "InteractionSession",
    "NumericError",
    "PolicyModel",
    "TargetValue",
    "TaskInstance",
    "UpdateMechanism",
    "closed_form_policy",
    "dense_reward",
    "effective_params",
    "generate_suite",
    "kl",
    "mechanism_distribution",
    "mechanism_gradient",
    "partition_single",
    "practical_target",
    "practical_target_vector",
    "predicted_delta_kl",
    "rank_one_solution",
    "rule_reward",
    "run_experiment",
    "run_session",
    "solve_normal_equations",
]
