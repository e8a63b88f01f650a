//! Finite-size experiments: convex training of teacher and student,
//! macro-state measurement, Monte-Carlo test error and diagnostics.

pub mod classifier;

pub use classifier::{support_size, TrainMeta, TrainedClassifier};
pub mod measure;
pub mod train;

pub use measure::{diagnostics, empirical_test_error, measure_macro_state, TrainReport};
pub use train::{train_student_kd, train_teacher, DEFAULT_TOL, MAX_ITERS};
