from .models import (
    LIKELIHOOD_FLOOR,
    SIGMA_MIN,
    FactorizedDensity,
    GaussianConditional,
    factorized_likelihood,
    gaussian_likelihood,
    noise_proxy,
    quantize,
    rate_bits,
    rate_bits_grad,
)
from .rangecoder import (
    MAX_SYMBOLS,
    CdfTable,
    cdf_table_from_probs,
    range_decode,
    range_encode,
    read_coded_block,
    table_entropy_bits,
    write_coded_block,
)

__all__ = [
    "LIKELIHOOD_FLOOR", "SIGMA_MIN", "MAX_SYMBOLS",
    "FactorizedDensity", "GaussianConditional", "CdfTable",
    "factorized_likelihood", "gaussian_likelihood",
    "noise_proxy", "quantize", "rate_bits", "rate_bits_grad",
    "cdf_table_from_probs", "range_decode", "range_encode",
    "read_coded_block", "write_coded_block", "table_entropy_bits",
]
