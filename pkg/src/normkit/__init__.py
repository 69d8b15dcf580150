"""RMSNorm, pRMSNorm and comparison normalizers with analytic gradients and a verification toolkit."""
from .normalizers import (DEFAULT_EPS, NormalizerKind, NormCache, NormParams, Variant,
                          batchnorm_forward, l2norm_backward, l2norm_forward, layernorm_backward,
                          layernorm_forward, normalize, normalize_backward, partial_rms,
                          prmsnorm_backward, prmsnorm_forward, rms, rmsnorm_backward,
                          rmsnorm_forward, weightnorm_forward)

__version__ = "0.1.0"
