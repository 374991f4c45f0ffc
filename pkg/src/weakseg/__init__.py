"""Crack segmentation from weak (coarse) annotations.

Weak masks are refined by a small per-pixel "Myopic" model plus a contour
shrinking step, a strided "Macro" network is trained on the refined masks,
and its output can be fused with an image darkness map.
"""
from .fusion import DarknessConfig, binarize, darkness_map, fuse
from .macro import MacroParams, MacroTrainConfig, infer_macro, train_macro
from .metrics import EvalReport, ods
from .myopic import MyopicParams, MyopicTrainConfig, myopic_forward, train_myopic
from .shrink import ShrinkConfig, refine_annotation
from .weaksynth import SynthConfig, ToyConfig, gen_toy_sample, synthesize_weak

__version__ = "0.1.0"
