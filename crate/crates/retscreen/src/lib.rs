//! Reproducible binary retinal-disease-risk screening.
//!
//! `retscreen` trains and evaluates two fundus-image classifiers — a small
//! baseline CNN on 64x64 input and a frozen-backbone VGG16 transfer model
//! on 254x254 input — with a self-contained, oracle-verified metrics core
//! and screening-threshold utilities. Everything is seeded: same config,
//! data, and seed means byte-identical artifacts.
//!
//! The narrative guide lives in `book/`; the snippets there mirror the
//! doc-tests below.
//!
//! Compute metrics straight from a confusion matrix:
//!
//! ```
//! use retscreen::metrics::{accuracy, weighted_f1, ConfusionMatrix};
//!
//! let cm = ConfusionMatrix::from_counts([[494, 12], [47, 87]]);
//! assert_eq!(format!("{:.3}", accuracy(&cm)), "0.908");
//! assert_eq!(format!("{:.2}", weighted_f1(&cm).unwrap()), "0.90");
//! ```
//!
//! AUC via the trapezoid rule always agrees with the pairwise-concordance
//! oracle:
//!
//! ```
//! use retscreen::metrics::{auc, auc_pairwise_oracle, roc_curve, PositiveClass};
//!
//! let y = [0, 1, 0, 1, 1];
//! let scores = [0.2, 0.7, 0.4, 0.4, 0.9];
//! let curve = roc_curve(&y, &scores, PositiveClass::One).unwrap();
//! let oracle = auc_pairwise_oracle(&y, &scores).unwrap();
//! assert!((auc(&curve) - oracle).abs() < 1e-12);
//! ```
//!
//! Class weights satisfy an exact identity in rational arithmetic:
//!
//! ```
//! use num_rational::Ratio;
//! use retscreen::trainer::compute_class_weights;
//!
//! let w = compute_class_weights([1500, 420]).unwrap();
//! assert_eq!(w[0] * Ratio::from_integer(1500) + w[1] * Ratio::from_integer(420),
//!            Ratio::from_integer(1920));
//! ```

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod run;
pub mod trainer;
