"""Multispectral state-space feature fusion: selective scans, fusion blocks and verification tools."""

from .fusion import (FFWeights, FusedOutput, FusionBlockWeights, cp_ssm, ff_ssm, init_weights,
                     load_weights, ms2fusion, save_weights, sp_ssm)
from .scan import ScanOrder, fold, reverse, unfold
from .ssm import (SelectiveParams, SsmWeights, apply_kernel, discretize, kernel_lti,
                  project_selective, scan_recurrent)
from .tensor import DimensionError, Tensor, add, map_unary, matmul, mul, read_sst1, write_sst1

__all__ = [
    "DimensionError", "FFWeights", "FusedOutput", "FusionBlockWeights", "ScanOrder",
    "SelectiveParams", "SsmWeights", "Tensor", "add", "apply_kernel", "cp_ssm", "discretize",
    "ff_ssm", "fold", "init_weights", "kernel_lti", "load_weights", "map_unary", "matmul",
    "ms2fusion", "mul", "project_selective", "read_sst1", "reverse", "save_weights",
    "scan_recurrent", "sp_ssm", "unfold", "write_sst1",
]
