"""Self-supervised SAR change detection with global dynamic convolution."""
from .evaluation import MetricsReport, compute_metrics, confusion_counts, predict_map
from .model import ConvMode, GDNetModel, ModelConfig, init_model, model_forward, model_summary
from .preclassification import PseudoLabel, assign_labels, fcm_cluster, select_samples
from .sar_data import SarImage, SarImagePair, load_image, log_ratio_di, synth_scene
from .training import MixupMode, TrainConfig, train_model

__version__ = "0.1.0"
