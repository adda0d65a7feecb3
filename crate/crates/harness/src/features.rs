//! Per-joint pair tokens and key biases for attention-style camera heads.
//!
//! A token for joint `j` seen in views `μ` and `ν` is laid out as
//!
//! ```text
//! [ φ_μ | φ_ν | u_μ, v_μ, u_ν, v_ν | u_μu_ν, u_μv_ν, v_μu_ν, v_μv_ν | log(Σ_μ+Σ_ν)_uu, log(Σ_μ+Σ_ν)_vv ]
//! ```
//!
//! with coordinates measured from each view's principal point. Swapping the
//! two views swaps the descriptor blocks, the coordinate pairs and the middle
//! two products; the covariance block is symmetric.

use mvgc_core::scenegen::Observation;

use crate::error::{HarnessError, Result};

/// One joint detection as seen by the feature builder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointToken<'a> {
    pub uv: [f64; 2],
    /// `[s_uu, s_uv, s_vv]`.
    pub cov: Option<[f64; 3]>,
    pub descriptor: Option<&'a [f64]>,
}

impl From<&Observation> for JointToken<'_> {
    fn from(o: &Observation) -> Self {
        JointToken {
            uv: o.uv,
            cov: Some(o.cov),
            descriptor: None,
        }
    }
}

/// One view's tokens together with its principal point.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTokens<'a> {
    pub joints: Vec<JointToken<'a>>,
    pub principal_point: [f64; 2],
}

impl<'a> ViewTokens<'a> {
    pub fn from_observations(obs: &[Observation], principal_point: [f64; 2]) -> Self {
        ViewTokens {
            joints: obs.iter().map(JointToken::from).collect(),
            principal_point,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTokens {
    pub features: Vec<Vec<f64>>,
    pub descriptor_len: usize,
    /// Set when at least one descriptor was absent and replaced by zeros.
    pub zero_filled: bool,
}

/// Number of entries in each token.
pub fn token_len(descriptor_len: usize) -> usize {
    2 * descriptor_len + 8 + 2
}

fn matched<'v, 'a>(mu: &'v ViewTokens<'a>, nu: &'v ViewTokens<'a>) -> Result<impl Iterator<Item = (usize, &'v JointToken<'a>, &'v JointToken<'a>)>> {
    if mu.joints.len() != nu.joints.len() {
        return Err(HarnessError::Config(format!(
            "views carry {} and {} joints",
            mu.joints.len(),
            nu.joints.len()
        )));
    }
    Ok(mu.joints.iter().zip(&nu.joints).enumerate().map(|(j, (a, b))| (j, a, b)))
}

fn covariance(j: usize, t: &JointToken) -> Result<[f64; 3]> {
    let c = t.cov.ok_or_else(|| HarnessError::Config(format!("joint {j} has no covariance")))?;
    if !c.iter().all(|x| x.is_finite()) {
        return Err(HarnessError::InvalidCovariance {
            joint: j,
            reason: format!("non-finite entries {c:?}"),
        });
    }
    Ok(c)
}

/// Builds one token per matched joint.
///
/// Missing descriptors are zero-filled and flagged; a present descriptor of
/// the wrong length or a missing covariance is a configuration error.
pub fn pair_token_features(mu: &ViewTokens, nu: &ViewTokens, descriptor_len: usize) -> Result<PairTokens> {
    let mut zero_filled = false;
    let mut features = Vec::with_capacity(mu.joints.len());
    for (j, a, b) in matched(mu, nu)? {
        let mut f = Vec::with_capacity(token_len(descriptor_len));
        for t in [a, b] {
            match t.descriptor {
                Some(d) if d.len() == descriptor_len => f.extend_from_slice(d),
                Some(d) => {
                    return Err(HarnessError::Config(format!(
                        "joint {j}: descriptor has length {}, expected {descriptor_len}",
                        d.len()
                    )))
                }
                None => {
                    zero_filled |= descriptor_len > 0;
                    f.extend(std::iter::repeat_n(0.0, descriptor_len));
                }
            }
        }
        let (ca, cb) = (covariance(j, a)?, covariance(j, b)?);
        let m = [
            a.uv[0] - mu.principal_point[0],
            a.uv[1] - mu.principal_point[1],
            b.uv[0] - nu.principal_point[0],
            b.uv[1] - nu.principal_point[1],
        ];
        f.extend_from_slice(&m);
        f.extend_from_slice(&[m[0] * m[2], m[0] * m[3], m[1] * m[2], m[1] * m[3]]);
        let diag = [ca[0] + cb[0], ca[2] + cb[2]];
        if !(diag[0] > 0.0 && diag[1] > 0.0) {
            return Err(HarnessError::InvalidCovariance {
                joint: j,
                reason: format!("summed variances {diag:?} must be positive"),
            });
        }
        f.extend(diag.map(f64::ln));
        features.push(f);
    }
    Ok(PairTokens {
        features,
        descriptor_len,
        zero_filled,
    })
}

/// `log(1 / (tr Σ_μ + tr Σ_ν))` per matched joint.
pub fn uncertainty_bias(mu: &ViewTokens, nu: &ViewTokens) -> Result<Vec<f64>> {
    matched(mu, nu)?
        .map(|(j, a, b)| {
            let tr = |c: [f64; 3]| c[0] + c[2];
            let total = tr(covariance(j, a)?) + tr(covariance(j, b)?);
            if !(total > 0.0) {
                return Err(HarnessError::InvalidCovariance {
                    joint: j,
                    reason: format!("trace sum {total} must be positive"),
                });
            }
            Ok(-total.ln())
        })
        .collect()
}
