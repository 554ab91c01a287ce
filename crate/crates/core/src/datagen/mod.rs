//! Seeded generators for the sorting, increment and hint tasks.
//!
//! Every example draws from its own ChaCha8 stream keyed by
//! `(seed, index)`, so a dataset is the same however it is generated.

mod encode;
mod gen;
mod io;
pub mod tokens;

pub use encode::{encode_all, encode_example, EncodedExample};
pub use gen::{
    gen_carry_example, gen_count_example, gen_dataset, gen_example, gen_fill_example, gen_fixed_length_set,
    gen_increment_example, gen_rep_example, gen_rep_test_set, gen_sort_dataset, gen_sort_example,
    gen_successor_example, increment_digits, skewed_length_sample, sorted, successor_of, GenConfig, LengthSpec,
    RawExample, RepTestConfig, Task, Variant,
};
pub use io::{read_dataset, write_dataset, Dataset, DatasetHeader, DATASET_FORMAT};
pub use tokens::{Symbol, TaskFamily, TokenTable, DELIM_ID, PAD_ID};

#[cfg(test)]
mod tests;
