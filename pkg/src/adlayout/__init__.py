"""Image-aware graphic layout generation with a pixel-level
domain-adversarial GAN, plus its metric suite and ablation harness."""

from .data import (Corpus, CorpusManifest, DomainSample, EpochSampler,
                   compose_white_patch_map, generate_synthetic_corpus,
                   load_corpus, sample_epoch, save_corpus, simulate_inpainting)
from .discriminator import DiscriminatorConfig, build_discriminator
from .elements import Category, Layout, LayoutElement
from .errors import ConfigError, NonFiniteLossError
from .generator import LayoutGenerator, LayoutPrediction, decode_layout
from .harness import AblationSuite, build_suite, render_layout, run_ablation
from .losses import (Assignment, LossWeights, MatchCosts,
                     generalized_box_iou, generator_total_loss,
                     hungarian_match, pd_discriminator_loss,
                     pd_generator_loss, reconstruction_loss, smooth_labels)
from .metrics import (MetricsReport, compute_alignment, compute_nonempty_ratio,
                      compute_occlusion, compute_overlap, compute_underlay,
                      evaluate_corpus)
from .training import (TrainConfig, Trainer, desk_config, load_checkpoint,
                       paper_config, probe_alignment, save_checkpoint, train)

__version__ = "0.1.0"
