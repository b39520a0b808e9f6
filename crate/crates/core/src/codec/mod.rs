//! Bit-exact storage of compressed task vectors.

pub mod bits;
pub mod container;
pub mod sass;

pub use container::{EncodedTask, FormatPolicy, ModuleReport, StoredModule, StoredTask};
pub use sass::{
    choose_format, decode, encode, encode_indep, encode_sass, expected_bits, optimal_group,
    EncodedModule, Format, ModuleData, ModuleHeader, QuantizedModule,
};
