use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Patch grid does not tile the image at the requested stride.
    Layout(String),
    /// An argument lies outside the operation's domain.
    Domain(String),
    /// A layout position has no horizontal mirror inside the layout.
    AsymmetricLayout { index: usize, x: u32, y: u32 },
    /// Zero vector (or zero mean) where a cosine is required.
    DegenerateEmbedding(String),
    /// Shapes, patch counts or layout fingerprints disagree.
    Incompatible(String),
    /// Non-finite or otherwise malformed numeric data.
    Data(String),
    /// Labels or scores carry only one class.
    DegenerateLabels(String),
    /// Object used before it was fitted.
    State(String),
    /// Image ids referenced by pairs but absent from the store.
    MissingEmbeddings(Vec<String>),
}

impl Error {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Layout(_) => "layout",
            Error::Domain(_) => "domain",
            Error::AsymmetricLayout { .. } => "asymmetric_layout",
            Error::DegenerateEmbedding(_) => "degenerate_embedding",
            Error::Incompatible(_) => "incompatible",
            Error::Data(_) => "data",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::State(_) => "state",
            Error::MissingEmbeddings(_) => "missing_embeddings",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Layout(m) => write!(f, "invalid layout: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::AsymmetricLayout { index, x, y } => write!(
                f,
                "position {index} at ({x}, {y}) has no horizontal mirror in the layout"
            ),
            Error::DegenerateEmbedding(m) => write!(f, "degenerate embedding: {m}"),
            Error::Incompatible(m) => write!(f, "incompatible inputs: {m}"),
            Error::Data(m) => write!(f, "bad data: {m}"),
            Error::DegenerateLabels(m) => write!(f, "degenerate labels: {m}"),
            Error::State(m) => write!(f, "invalid state: {m}"),
            Error::MissingEmbeddings(ids) => {
                write!(f, "{} missing embedding(s): ", ids.len())?;
                for (i, id) in ids.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    f.write_str(id)?;
                }
                Ok(())
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
