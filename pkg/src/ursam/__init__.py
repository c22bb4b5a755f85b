"""Uncertainty-rectified promptable segmentation toolkit.

Box prompts are augmented with controlled perturbations, a backend
segments each prompt, disagreement between the results becomes a
per-voxel entropy map, and voxels above a class-specific threshold are
re-decided by an intensity filter anchored to the trusted regions.
"""

from .evaluate import METHODS, EvalRecord, dsc, evaluate_case, write_report
from .phantom import PhantomSpec, build_case, gen_phantom
from .pipeline import (
    DatasetResult,
    PipelineConfig,
    run_case,
    run_dataset,
    run_organ,
    run_sweep,
)
from .prompts import (
    BoundingBox,
    PromptAugConfig,
    augment_prompts,
    bbox_from_mask,
    extend_box,
    relative_offset,
    simulate_manual_prompt,
)
from .rectify import (
    RectifyConfig,
    RegionPartition,
    mean_intensities,
    partition_regions,
    rectify_fn,
    rectify_fp,
    rectify_fpnc,
    rectify_ur,
)
from .segmenter import (
    PROTOCOL,
    BackendError,
    ProtocolBackend,
    ProtocolError,
    SegmentRequest,
    SegmentResponse,
    SyntheticBackend,
    synthetic_segment,
)
from .uncertainty import (
    EnsembleResult,
    binarize,
    class_threshold,
    ensemble,
    entropy_map,
    uncertainty_mask,
)
from .volume import (
    BinaryMask,
    ProbMap,
    UncertaintyMap,
    Volume,
    extract_slice,
    normalize_intensity,
    read_uvol,
    write_uvol,
)

__version__ = "0.1.0"
