"""Python bindings for the sasoftmax C++ core."""

from ._core import (
    ContractViolation,
    IoError,
    NumericError,
    am_softmax_loss,
    ast_loss,
    circle_loss,
    cmc_map,
    combined_loss,
    config_text,
    cosine_matrix,
    generate_synthetic,
    gradcheck,
    rewrite_labels,
    run_experiment,
    sas_f_loss,
    sas_w_loss,
    softmax_ce,
    softmax_failure_witness,
    theta_derivative_probe,
)

__all__ = [name for name in dir() if not name.startswith("_")]
