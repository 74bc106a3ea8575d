//! Binary codes, Hamming ranking and mean average precision.

mod codes;
mod eval;

pub use codes::{binarize, hamming, BinaryCodeMatrix, CODES_MAGIC, CODES_VERSION};
pub use eval::{average_precision, evaluate, rank_by_hamming, save_results_csv, write_results_csv, Direction, RetrievalResult};
