use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure modes of the toolkit. One enum for the whole crate; variants
/// carry enough context to pinpoint the offending pixel or parameter.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {left_height}x{left_width} vs {right_height}x{right_width}")]
    ShapeMismatch {
        left_height: usize,
        left_width: usize,
        right_height: usize,
        right_width: usize,
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error(
        "crop {top},{left} size {height}x{width} exceeds the {image_height}x{image_width} image"
    )]
    CropOutOfBounds {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        image_height: usize,
        image_width: usize,
    },

    #[error("image {height}x{width} is smaller than the required {min}x{min}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty mask: no valid pixels to reduce over")]
    EmptyMask,

    #[error("non-positive value {value} under the mask at pixel ({row}, {col})")]
    NonPositiveValue { row: usize, col: usize, value: f64 },

    #[error("domain: {0}")]
    Domain(String),

    #[error("{got} neighborhood points, plane fit needs at least {required}")]
    InsufficientPoints { got: usize, required: usize },

    #[error("degenerate neighborhood geometry: no unique plane through the samples")]
    DegenerateGeometry,

    #[error("requested {requested} samples but only {available} valid pixels exist")]
    SamplingCapacity { requested: usize, available: usize },

    #[error("malformed one-hot label at pixel ({row}, {col}): {what}")]
    OneHot {
        row: usize,
        col: usize,
        what: String,
    },

    #[error("parse: {0}")]
    Parse(String),

    #[error("{path}: {what}")]
    FileFormat { path: PathBuf, what: String },

    #[error("depth {value} m exceeds the largest encodable value {max} m")]
    DepthOutOfRange { value: f64, max: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
