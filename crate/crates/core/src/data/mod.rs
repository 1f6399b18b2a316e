//! IDX ingestion, preprocessing to normalized 28×28 grayscale, and
//! synthetic domain shifts.

mod dataset;
mod idx;
mod preprocess;
mod shift;

pub use dataset::{split, DatasetContainer};
pub use idx::{decode_idx, encode_idx, load_idx, save_idx, IdxArray};
pub use preprocess::{normalize_byte, preprocess, resize_bilinear, to_gray, Images, LabeledImages, PreprocessConfig};
pub use shift::{apply_shift, ShiftKind, SyntheticShiftSpec};
