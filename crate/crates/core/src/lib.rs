//! Geometry of quantum measurements implementable by local operations and
//! classical communication: POVM zonotopes, product-operator paths inside
//! them, and simulation of LOCC protocol trees.

pub mod ensembles;
pub mod error;
pub mod factorize;
pub mod isolation;
pub mod json;
pub mod locc;
pub mod operator;
pub mod path;
pub mod povm;
pub mod random;
pub mod sampling;
pub mod solver;
pub mod zonotope;

pub use ensembles::{builtin, Builtin, Ensemble};
pub use error::{LoccError, Result};
pub use factorize::{nearest_product, product_residual, FactorizationOptions, ProductFactorization};
pub use isolation::{isolation_probe, kkb_diagonal_family, IsolationOptions, IsolationProbeReport};
pub use locc::{footnote_protocol, random_protocol, Lemma4Report, LoccNode, LoccTree};
pub use operator::{tensor, HermitianOperator, LocalOp, PartitionedSpace, C64};
pub use path::{
    find_monotonic_product_path, verify_path, OperatorPath, PathPoint, PathReport, PathSearchOptions,
    PathSearchOutcome,
};
pub use povm::{completeness_weights, merge_proportional, validate, Povm, ValidationReport, WeightSolution};
pub use sampling::{sample_products_in_zonotope, ProductSampler, SampleFilter, SamplerRegistry};
pub use zonotope::{
    directed_distance, hausdorff, nesting_check, DistanceMethod, HausdorffReport, MembershipResult, NestingReport, Norm,
    SampledVertices, VertexEnumeration, Zonotope,
};
