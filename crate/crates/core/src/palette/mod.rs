//! Hand-crafted color statistics: dominant colors, color structure, color
//! layout and adjacent color pairs, fused into a style vector.

pub mod descriptors;
pub mod dominant;
pub mod quantize;
pub mod style;

pub use descriptors::{
    adjacent_color_pairs, color_layout_descriptor, color_structure_descriptor, AdjacencyHistogram,
    CldCoefficients, CsdHistogram,
};
pub use dominant::{dominant_colors, DominantColorSet};
pub use quantize::{chi_square, color_histogram, quantize_image, quantize_rgb, BINS};
pub use style::{euclidean, l2_normalize, style_vector, StyleLayout, StyleVector};
