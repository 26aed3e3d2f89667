"""Python bindings for the tta3d test-time adaptation library."""

from ._core import (
    Network,
    Phantom,
    adapt,
    apply_shift,
    dump_default_config,
    generate_phantom,
    histogram_match,
    kl_divergence,
    paired_t_test,
    select_layers,
    shannon_entropy,
)

__all__ = [
    "Network",
    "Phantom",
    "adapt",
    "apply_shift",
    "dump_default_config",
    "generate_phantom",
    "histogram_match",
    "kl_divergence",
    "paired_t_test",
    "select_layers",
    "shannon_entropy",
]
