// `!(x > 0.0)` guards reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annihilate;
pub mod bspline;
pub mod error;
pub mod gmfit;
pub mod io;
pub mod metrics;
pub mod moments;
pub mod poly2d;
pub mod qp;
pub mod recover;
pub mod sampler;
pub mod scenarios;
pub mod shapegen;

pub use error::{Error, Result};
pub use sampler::IndexRange;

#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub mod overview {}
    #[doc = include_str!("../../../book/src/shapes.md")]
    pub mod shapes {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    pub mod sampling {}
    #[doc = include_str!("../../../book/src/moments.md")]
    pub mod moments {}
    #[doc = include_str!("../../../book/src/generalized.md")]
    pub mod generalized {}
    #[doc = include_str!("../../../book/src/recovery.md")]
    pub mod recovery {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
