//! Special functions, distributions and seedable random streams.

pub mod dist;
pub mod special;
pub mod stream;

pub use dist::{
    beta_variate, chi_square_variate, gamma_variate, open_unit, sample, standard_normal,
    student_t_sample, ContinuousDistribution, StudentT,
};
pub use special::{
    binomial_pmf, binomial_upper_tail, ln_beta, ln_gamma, normal_cdf, normal_pdf, normal_quantile,
    normal_sf, reg_inc_beta, reg_inc_gamma,
};
pub use stream::{fingerprint, RandomStream, StreamRng};
