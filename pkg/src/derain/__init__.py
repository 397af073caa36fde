"""Single-image deraining: synthetic rain generation, a dilated
context-aggregation network with SE channel reweighting, recurrent
multi-stage extensions, training, and PSNR/SSIM evaluation, all built
on a purpose-built reverse-mode autodiff core.
"""

from .tensor import (Tensor, ConvKernel, ShapeError, no_grad, conv2d,
                     leaky_relu, sigmoid, tanh, add, sub, mul, narrow,
                     global_avg_pool, mse_loss)
from .optim import Adam, NonFiniteGradient
from .blocks import (Conv2d, SEBlock, ConvSELayer, ConvRNNCell, ConvGRUCell,
                     ConvLSTMCell, make_cell, weight_param_count)
from .model import (ScanConfig, RescanConfig, DerainResult, Scan, Rescan,
                    build_model, dilation_schedule, receptive_field,
                    empirical_receptive_field, loss_additive, loss_full,
                    stage_loss, config_to_dict, config_from_dict)
from .checkpoint import (save_checkpoint, load_checkpoint, save_config_kv,
                         load_config_kv, CheckpointError)
from .rainsim import (RainLayerSpec, RainSceneSpec, SynthPair,
                      SceneConstraintError, gen_streak_layer, compose_eq1,
                      compose_eq2, compose_eq3, random_background,
                      DatasetSpec, make_dataset, load_manifest, regenerate,
                      load_pairs, read_pair, encode_image_png,
                      decode_image_png, encode_residual_png,
                      decode_residual_png)
from .metrics import psnr, ssim, to_luminance, evaluate_pairs
from .train import (TrainConfig, TrainLog, TrainingDiverged, lr_at,
                    sample_patches, train, evaluate, derain_image)
from .gradcheck import model_grad_check

__version__ = "0.1.0"
