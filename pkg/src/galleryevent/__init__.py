"""Event recognition in photo galleries with unknown album borders."""

from .attention import (AttentionModel, AttentionPoolingClassifier, AttentionTrainConfig,
                        aggregate, attention_weights, forward, gradient_check, train_attention)
from .calibration import (CalibrationResult, calibrate, candidate_thresholds,
                          permute_and_unfold)
from .captions import (CaptionVectorizer, LateFusionClassifier, SparseCaptionVector, Vocabulary,
                       build_vocabulary, encode_one_hot, fuse, select_fusion_weight,
                       train_text_classifier)
from .data import (AlbumRecord, CaptionStore, FeatureStore, GalleryManifest, LabeledFeatureSet,
                   PhotoRecord, l2_normalize, load_caption_store, load_feature_store,
                   load_manifest, unfold)
from .evaluation import (EvalReport, SyntheticConfig, format_report, generate_synthetic,
                         per_image_accuracy, recognize_gallery, run_shuffled_eval)
from .exceptions import (DomainError, FormatError, GalleryEventError, MissingFeatureError,
                         TrainingError, ValidationError)
from .linear import (LinearEventClassifier, LinearModel, TrainConfig, decide, predict_scores,
                     train_linear)
from .pipeline import GalleryEventRecognizer
from .segmentation import (Boundaries, DistanceMetric, SegmentationConfig, SequentialSegmenter,
                           agglomerative_baseline, detect_boundaries, pairwise_distance)

__version__ = "0.1.0"
