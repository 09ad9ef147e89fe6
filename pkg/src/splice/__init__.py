"""Collage-based whole-slide image selection, barcode indexing, and retrieval."""

from .barcode import (
    Archive,
    Barcode,
    BarcodeSet,
    hamming,
    load_archive,
    minmax_binarize,
    save_archive,
    search,
    wsi_distance,
)
from .embedding import FeatureVector, embed_histogram, ingest_external_features
from .errors import EmptyArchive, FormatError, InvalidInput, IoError, SpliceError
from .evaluation import ABSTAIN, compute_metrics, leave_one_out, majority_vote
from .mosaic import Mosaic, MosaicConfig, kmeans, mosaic_select
from .pyramid import (
    ImagePyramid,
    PatchRef,
    extract_patch,
    level_for_magnification,
    load_image,
    map_patch,
)
from .segmentation import TissueMask, enumerate_patches, segment_tissue
from .splice_core import (
    Collage,
    ColorDescriptor,
    SpliceConfig,
    collage_to_highmag,
    color_descriptor,
    descriptor_distance,
    percentile,
    splice_select,
)
from .synth import SynthClass, SynthSpec, default_spec, generate_corpus

__version__ = "0.1.0"
