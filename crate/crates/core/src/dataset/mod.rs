//! Dataset tooling: splitting, construction filters and synthetic data.

pub mod filter;
pub mod split;
pub mod synth;

pub use filter::{
    construction_filter, BlobFaceDetector, CandidateRecord, CapitalizedBigramNer, Detection, FaceDetector,
    FilterOutcome, GazetteerNer, PersonNer, RejectReason, Rejection, Span, read_records, write_records,
    write_rejections,
};
pub use split::{split, SplitSidecar, SplitSpec, Splits};
pub use synth::{generate_synthetic, StubSeeds, SynthConfig, SynthData};
