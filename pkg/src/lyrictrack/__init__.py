"""Real-time audio-to-lyrics tracking with phoneme posteriograms and online time warping."""
from .evaluation import Annotation, MetricsReport, load_annotations, metrics, transfer
from .features import AudioBuffer, FeatureConfig, FeatureMatrix, mfcc, recitative_feature, resample
from .network import NetworkSpec, StreamingInference, WeightStore, infer, load_weights, receptive_field, save_weights
from .oltw import AlignmentEvent, OLTWTracker, TrackerConfig, cosine_distance, run_offline
from .posteriogram import PhonemeVocab, Posteriogram, StrippedPosteriogram, strip_blanks, to_probabilities

__version__ = "0.1.0"
