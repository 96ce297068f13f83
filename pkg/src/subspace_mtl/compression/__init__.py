from .arith import CorruptStreamError, FrequencyTable, arithmetic_decode, arithmetic_encode, fraction_table_bits
from .bundle import (BundleError, EncodedBundle, codebook_bits, decode_bundle, encode_bundle, reencode,
                     encode_single, encode_transfer)
from .codebook import Codebook, dequantize, kmeans_1d, quantize
from .finetune import finetune_quantized
from .kraft import kraft_check

__all__ = ["BundleError", "Codebook", "CorruptStreamError", "EncodedBundle", "FrequencyTable",
           "arithmetic_decode", "arithmetic_encode", "codebook_bits", "decode_bundle", "dequantize",
           "encode_bundle", "encode_single", "encode_transfer", "finetune_quantized",
           "fraction_table_bits", "kmeans_1d", "kraft_check", "quantize", "reencode"]
