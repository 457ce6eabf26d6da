"""Localized geo-topological measurement and guided diffusion over voxel maps."""

from ._core import (  # noqa: F401
    __version__,
    argmax,
    betti_numbers,
    boolean_subset,
    decode_field,
    domain_points,
    emd,
    empirical_denoiser,
    encode,
    fibonacci_lattice,
    fmd,
    generate_phantom,
    gvox_read,
    gvox_write_labels,
    moments,
    morph_features,
    noise_schedule,
    one_hot,
    persistent_homology,
    phantom_families,
    run_task,
    softmax_channels,
    template_points,
    trilinear_sample,
)
