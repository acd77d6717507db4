//! Trajectory scores as an initial value plus additive per-step increments.
//!
//! - Joint: `log p(z_{1:t}) + log p(x_{1:t} | z_{1:t})`
//! - Evidence: `log p(x_{1:t} | z_{1:t})`
//! - TBD: joint minus the log-density of a Gaussian random-walk background
//!   prior, `p0(z_1) = N(0, sigma_bg^2)`, `p0(z_t | z_{t-1}) = N(z_{t-1}, sigma_bg^2)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::math::normal_logpdf;
use crate::world_model::{emission_logpdf, initial_logpdf, transition_logpdf, WorldModelParams};
use crate::{Error, Result};

pub const DEFAULT_SIGMA_BG: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScoreKind {
    Joint,
    Evidence,
    Tbd { sigma_bg: f64 },
}

impl ScoreKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScoreKind::Tbd { sigma_bg } if !(sigma_bg > 0.0 && sigma_bg.is_finite()) => {
                Err(Error::Config(format!("sigma_bg must be > 0, got {sigma_bg}")))
            }
            _ => Ok(()),
        }
    }

    /// Short tag used in method descriptors: `J`, `E` or `TBD`.
    pub fn tag(&self) -> &'static str {
        match self {
            ScoreKind::Joint => "J",
            ScoreKind::Evidence => "E",
            ScoreKind::Tbd { .. } => "TBD",
        }
    }

    /// Parse a tag, attaching `sigma_bg` to the TBD variant.
    pub fn from_tag(tag: &str, sigma_bg: f64) -> Result<Self> {
        let kind = match tag.to_ascii_uppercase().as_str() {
            "J" | "JOINT" => ScoreKind::Joint,
            "E" | "EVIDENCE" => ScoreKind::Evidence,
            "TBD" => ScoreKind::Tbd { sigma_bg },
            _ => return Err(Error::Config(format!("unknown score kind {tag:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_tag(s, DEFAULT_SIGMA_BG)
    }
}

/// Score of the length-1 prefix `z_1` given `x_1`.
pub fn initial_score(kind: ScoreKind, z1: f64, x1: f64, p: &WorldModelParams) -> f64 {
    let evidence = emission_logpdf(x1, z1, p);
    match kind {
        ScoreKind::Evidence => evidence,
        ScoreKind::Joint => initial_logpdf(z1, p) + evidence,
        ScoreKind::Tbd { sigma_bg } => initial_logpdf(z1, p) + evidence - normal_logpdf(z1, 0.0, sigma_bg),
    }
}

/// Score increment for extending a prefix ending at `z_parent` by `z_child`
/// with new observation `x_new`.
pub fn score_increment(kind: ScoreKind, z_parent: f64, z_child: f64, x_new: f64, p: &WorldModelParams) -> f64 {
    let evidence = emission_logpdf(x_new, z_child, p);
    match kind {
        ScoreKind::Evidence => evidence,
        ScoreKind::Joint => transition_logpdf(z_child, z_parent, p) + evidence,
        ScoreKind::Tbd { sigma_bg } => {
            transition_logpdf(z_child, z_parent, p) + evidence - normal_logpdf(z_child, z_parent, sigma_bg)
        }
    }
}

/// Score of a whole prefix computed from its definition as a sum of
/// log-densities, independently of the incremental path.
pub fn prefix_score(kind: ScoreKind, latent: &[f64], obs: &[f64], p: &WorldModelParams) -> f64 {
    assert!(!latent.is_empty() && obs.len() >= latent.len());
    let log_lik: f64 = latent.iter().zip(obs).map(|(&z, &x)| emission_logpdf(x, z, p)).sum();
    let log_prior = || {
        initial_logpdf(latent[0], p)
            + latent
                .windows(2)
                .map(|w| transition_logpdf(w[1], w[0], p))
                .sum::<f64>()
    };
    match kind {
        ScoreKind::Evidence => log_lik,
        ScoreKind::Joint => log_prior() + log_lik,
        ScoreKind::Tbd { sigma_bg } => {
            let log_bg = normal_logpdf(latent[0], 0.0, sigma_bg)
                + latent
                    .windows(2)
                    .map(|w| normal_logpdf(w[1], w[0], sigma_bg))
                    .sum::<f64>();
            log_prior() + log_lik - log_bg
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::rng;
    use crate::world_model::{drift_mean, emission_mean, simulate};

    const KINDS: [ScoreKind; 3] = [ScoreKind::Joint, ScoreKind::Evidence, ScoreKind::Tbd { sigma_bg: 1.0 }];

    #[test]
    fn initial_score_examples() {
        let p = WorldModelParams::default();
        let z1 = 0.3;
        let x1 = emission_mean(z1, &p);
        assert_abs_diff_eq!(initial_score(ScoreKind::Evidence, z1, x1, &p), 1.2014, epsilon = 1e-4);
        let diff = initial_score(ScoreKind::Joint, z1, x1, &p) - initial_score(ScoreKind::Evidence, z1, x1, &p);
        assert_abs_diff_eq!(diff, initial_logpdf(z1, &p), epsilon = 1e-14);
        let tbd = ScoreKind::Tbd { sigma_bg: p.sigma0 };
        assert_abs_diff_eq!(
            initial_score(tbd, 0.0, 0.05, &p),
            initial_score(ScoreKind::Evidence, 0.0, 0.05, &p),
            epsilon = 1e-14
        );
    }

    #[test]
    fn increment_examples() {
        let p = WorldModelParams::default();
        let (zp, zc, x) = (0.8, 1.1, 1.3);
        let diff = score_increment(ScoreKind::Joint, zp, zc, x, &p) - score_increment(ScoreKind::Evidence, zp, zc, x, &p);
        assert_abs_diff_eq!(diff, transition_logpdf(zc, zp, &p), epsilon = 1e-14);

        // At the well minimum the drift vanishes, so p and p0 coincide.
        let a = p.a;
        assert_eq!(drift_mean(a, &p), a);
        let tbd = ScoreKind::Tbd { sigma_bg: p.sigma_z };
        assert_abs_diff_eq!(
            score_increment(tbd, a, a, 2.9, &p),
            score_increment(ScoreKind::Evidence, a, a, 2.9, &p),
            epsilon = 1e-14
        );
    }

    #[test]
    fn accumulated_score_matches_from_scratch_over_200_steps() {
        let p = WorldModelParams::default();
        let tr = simulate(&p, 11);
        // Score a different latent path than the one that generated the data.
        let mut r = rng::seeded(4);
        let mut path = vec![crate::world_model::initial_sample(&p, &mut r)];
        for _ in 1..200 {
            let z = crate::world_model::transition_sample(*path.last().unwrap(), &p, &mut r);
            path.push(z);
        }
        for kind in KINDS {
            let mut s = initial_score(kind, path[0], tr.obs[0], &p);
            for t in 1..200 {
                s += score_increment(kind, path[t - 1], path[t], tr.obs[t], &p);
            }
            let direct = prefix_score(kind, &path, &tr.obs, &p);
            assert!((s - direct).abs() < 1e-9 * direct.abs().max(1.0), "{kind}: {s} vs {direct}");
        }
    }

    #[test]
    fn tags_round_trip() {
        for kind in KINDS {
            assert_eq!(ScoreKind::from_tag(kind.tag(), 1.0).unwrap(), kind);
        }
        assert!(ScoreKind::from_tag("TBD", 0.0).is_err());
        assert!(ScoreKind::from_tag("nope", 1.0).is_err());
    }

    proptest! {
        #[test]
        fn increments_finite(zp in -50.0f64..50.0, zc in -50.0f64..50.0, x in -100.0f64..100.0) {
            let p = WorldModelParams::default();
            for kind in KINDS {
                prop_assert!(score_increment(kind, zp, zc, x, &p).is_finite());
                prop_assert!(initial_score(kind, zc, x, &p).is_finite());
            }
        }

        /// Two paths with equal transition terms differ by the same amount
        /// under Joint and Evidence, whatever the observations.
        #[test]
        fn joint_and_evidence_rank_alike(x in proptest::collection::vec(-4.0f64..4.0, 5), shift in 0.01f64..0.5) {
            let p = WorldModelParams::default();
            let a = [0.1, 0.2, 0.4, 0.7, 1.1];
            let b: Vec<f64> = a.iter().map(|z| -z).collect();
            // Mirrored paths share the transition terms (odd drift) but not
            // necessarily the emission terms once obs are arbitrary.
            let dj = prefix_score(ScoreKind::Joint, &a, &x, &p) - prefix_score(ScoreKind::Joint, &b, &x, &p);
            let de = prefix_score(ScoreKind::Evidence, &a, &x, &p) - prefix_score(ScoreKind::Evidence, &b, &x, &p);
            prop_assert!((dj - de).abs() < 1e-9);
            let xs: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let dj2 = prefix_score(ScoreKind::Joint, &a, &xs, &p) - prefix_score(ScoreKind::Evidence, &a, &xs, &p);
            let dj1 = prefix_score(ScoreKind::Joint, &a, &x, &p) - prefix_score(ScoreKind::Evidence, &a, &x, &p);
            prop_assert!((dj2 - dj1).abs() < 1e-9);
        }
    }
}
