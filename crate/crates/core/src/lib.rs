//! Littlewood–Paley–Stein square functions of Banach-valued functions on
//! finite weighted Markov chains, computed exactly enough to test inequalities.
//!
//! Every operator is a reversible Markov matrix `T` on a finite weighted
//! space, evaluated through its `L_2(μ)`-orthonormal eigenbasis. On top of
//! that sit the diffusion semigroup `e^{t(T−1)}`, square functions, the
//! holomorphic functional calculus of `A = I − T`, and executable checks of
//! the identities and inequalities relating them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod formats;
pub mod functional_calculus;
pub mod measure_markov;
pub mod quadrature;
pub mod seed;
pub mod semigroup_calculus;
pub mod special;
pub mod square_functions;
pub mod vector_spaces;
pub mod verify;

pub use error::{LabError, Result};
pub use formats::{ChainFile, FieldFile};
pub use functional_calculus::{
    calibrate_gamma, hinf_apply_contour, hinf_apply_spectral, resolvent_bound_scan, stolz_contains, test_function,
    Contour, HinfFunction, StolzDomain, TestFunction,
};
pub use measure_markov::{
    fixed_point_projection, make_space, random_reversible, rota_dilation, spectral, square, ChainModel,
    MarkovOperator, RotaDilation, SpectralDecomposition, WeightedSpace,
};
pub use semigroup_calculus::{heat, make_time_grid, FracParams, Semigroup, SubordinationMode, TimeGrid};
pub use square_functions::{discrete_square, g_function, hn_functional, PointwiseFunction};
pub use vector_spaces::{
    convexity_modulus_probe, estimate_operator_norm, AscentConfig, BanachParams, ConvexityEstimate, VectorField,
};
pub use verify::{ConstantReport, InstanceFamily, SquareVariant};
