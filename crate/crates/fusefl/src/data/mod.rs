//! Datasets: IDX loading, Dirichlet partitioning, causal synthetic data,
//! and backdoor injection.

pub mod backdoor;
pub mod dataset;
pub mod idx;
pub mod partition;
pub mod sem;

pub use backdoor::{class_patterns, inject_backdoor, BackdoorConfig};
pub use dataset::Dataset;
pub use idx::{load_idx, write_idx};
pub use partition::{dirichlet_partition, Partition};
pub use sem::{recover_spu_template_ids, sem_templates, synth_sem, SemConfig, SemTemplates};
