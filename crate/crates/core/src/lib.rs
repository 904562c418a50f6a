//! Integer-nesting post-training quantization.
//!
//! An `n`-bit quantized model is split into an `h`-bit *part-bit* model and a
//! compensated low-bit residual. Both live in one packed `.nqt` container;
//! at runtime the model can launch from the high part alone and later page
//! the residual in (or out) to switch between the two instances without any
//! loss in the full-bit weights.
//!
//! - [`packed`]: k-bit signed integers packed into 64-bit words
//! - [`quantizer`]: symmetric min-max quantization
//! - [`rounding`]: bitshift / RTN / up / down / adaptive group rounding
//! - [`nesting`]: decomposition, recomposition, error census, bit advisor
//! - [`store`]: `.nqt` / `.nqf` formats and size accounting
//! - [`switch`]: part-bit / full-bit switching state machine
//! - [`resource`]: closed-form storage and switching overhead arithmetic
//! - [`refnet`]: small reference network, trainer and correlation diagnostics
//! - [`transfer`]: length-prefixed TCP push/serve with traffic accounting
//! - [`cli`]: the `nestquant` command line

pub mod cli;
pub mod error;
pub mod nesting;
pub mod packed;
pub mod quantizer;
pub mod refnet;
pub mod resource;
pub mod rounding;
pub mod store;
pub mod switch;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
pub use nesting::{
    advise_nested_bits, decompose, error_census, nest_model, recompose, ErrorCensus, NestConfig,
    NestedLayer,
};
pub use packed::PackedTensor;
pub use quantizer::{FloatTensor, IntTensor, QuantizedTensor};
pub use rounding::RoundingStrategy;
pub use store::{FloatModel, Manifest, NestedModel};
pub use switch::{Mode, SwitchState};
