//! Confusion matrices, exact t-SNE and the SVG/CSV emitters.

mod confusion;
mod render;
pub mod tsne;

pub use confusion::ConfusionMatrix;
pub use render::{
    confusion_counts_csv, confusion_csv, confusion_svg, csv_string, embedding_csv, embedding_svg, write_text,
    CLASS_COLORS,
};
pub use tsne::{nearest_neighbor_purity, sample_indices, tsne_embed, Embedding, TsneConfig};
