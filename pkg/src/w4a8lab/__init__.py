"""Reference toolkit for W4A8 GEMM: two-level 4-bit weight quantization,
packed register-word dequantization, the dual-MMA weight layout, a tiled
integer GEMM, an analytic cost model and a pipeline simulator."""

from .cost_model import (CostBreakdown, CostQuery, HardwareProfile, Regime, alpha_threshold,
                         builtin_profile, load_profile, sweep, total_time, transition_batch)
from .gemm_ref import (ActivationQuant, Engine, GemmShape, TileConfig, gemm_oracle, gemm_w4a8,
                       quantize_activations_per_token)
from .layout import (DEFAULT_DESCRIPTOR, FragmentDescriptor, PackedTile, check_bank_conflicts,
                     fragment_coords, pack_dual_mma, unpack_dual_mma)
from .packed_exec import InstructionCounter, dequant_packed
from .pipeline_sim import SimConfig, SimReport, compare, simulate_excp, simulate_imfp
from .quant_core import (dequantize_bundle, dequantize_lane, dequantize_scalar, quantize_first_level,
                         quantize_second_level, quantize_weights, verify_overflow_free)
from .tensor_io import (DenseTensor, DType, Layout, QuantizedWeightBundle, read_bundle, read_tensor,
                        write_bundle, write_tensor)

__version__ = "0.1.0"
