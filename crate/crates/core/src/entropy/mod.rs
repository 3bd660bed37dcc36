//! Quantization, likelihood models, rate estimation and range coding.

pub mod cdf;
pub mod factorized;
pub mod gaussian;
pub mod quantize;
pub mod range_coder;
pub mod rate;

pub use cdf::{build_cdf_table, build_tail_table, CdfTable, SymbolModel, UniformModel};
pub use factorized::{factorized_likelihood, FactorizedDensity};
pub use gaussian::{gaussian_likelihood, GaussianConditional};
pub use quantize::{add_uniform_noise, noise_proxy, quantize, QuantizedTensor};
pub use range_coder::{
    range_decode, range_encode, table_entropy_bits, CodedBlock, RangeDecoder, RangeEncoder,
    CODED_BLOCK_HEADER_BYTES,
};
pub use rate::{rate_bits, LIKELIHOOD_FLOOR};
