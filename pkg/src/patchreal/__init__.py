"""patchreal: real-time photorealism enhancement for synthetic images.

A lightweight U-Net-style generator is trained with a hybrid patch-based
adversarial strategy: the discriminator sees positional patches from
photorealism-enhanced targets alongside perceptually matched patches
retrieved from a real-world image index. Inference is a plain feed-forward
pass, so enhancement runs in real time without auxiliary inputs.
"""

from patchreal.data import (
    DatasetSpec,
    ImageTensor,
    PairedImageSequence,
    denormalize,
    load_image,
    load_paired_split,
    preprocess,
)
from patchreal.patches import Patch, extract_patches, patch_grid_origins
from patchreal.embedding import PatchEncoder, SetupError
from patchreal.index import PatchIndex, build_index
from patchreal.networks import (
    CheckpointMismatchError,
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    init_weights,
    load_checkpoint,
    save_checkpoint,
)
from patchreal.training import (
    HybridBatch,
    StepRecord,
    TrainingConfig,
    TrainingDivergedError,
    form_hybrid_batch,
    loss_discriminator,
    loss_generator,
    train,
)
from patchreal.inference import enhance
from patchreal.benchmark import BenchmarkReport, benchmark, format_report
from patchreal.evaluation import (
    FeatureSet,
    KidEstimate,
    compute_kid,
    match_report,
    mmd2_unbiased,
)

__version__ = "0.1.0"
