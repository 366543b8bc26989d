//! Feature files, manifests, fold planning and synthetic data.

pub mod feature_file;
pub mod manifest;
pub mod splits;
pub mod synth;

pub use feature_file::{read_feature_file, write_feature_file, ConvLayout, FeatureFile};
pub use manifest::{load_manifest, Dataset, ManifestEntry, Role, SplitTag};
pub use splits::{make_splits, Fold, SplitPlan, SplitScheme};
pub use synth::{synth_dataset, Coupling, SynthDataset, SynthSpec};
