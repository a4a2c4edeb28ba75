//! Seeded synthetic rating studies with a known latent quality per image.

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ratings::RatingRecord;
use crate::model::DisplayMode;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub images: usize,
    pub honest_raters: usize,
    /// Raters who answer uniformly at random.
    pub adversarial_raters: usize,
    /// Standard deviation of honest rater noise on the 1–10 scale.
    pub noise: f64,
    pub mode: DisplayMode,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { images: 100, honest_raters: 22, adversarial_raters: 0, noise: 1.0, mode: DisplayMode::Window }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticStudy {
    /// Latent quality per image on the 1–10 scale.
    pub latent: Vec<f64>,
    pub records: Vec<RatingRecord>,
    pub adversarial_ids: Vec<String>,
}

pub fn image_id(j: usize) -> String {
    format!("img{j:04}")
}

/// Honest raters report `round(latent + noise)` clipped to 1..=10.
pub fn synthetic_study(spec: &SyntheticSpec, seed: u64) -> SyntheticStudy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent: Vec<f64> = (0..spec.images).map(|_| rng.random_range(1.0..=10.0)).collect();
    let noise = Normal::new(0.0, spec.noise).expect("finite noise");
    let t0 = DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z").expect("literal").with_timezone(&Utc);
    let mut records = Vec::with_capacity((spec.honest_raters + spec.adversarial_raters) * spec.images);
    let mut adversarial_ids = Vec::new();
    let mut tick = 0i64;
    for r in 0..spec.honest_raters + spec.adversarial_raters {
        let adversarial = r >= spec.honest_raters;
        let pid = if adversarial { format!("adv{r:03}") } else { format!("rater{r:03}") };
        if adversarial {
            adversarial_ids.push(pid.clone());
        }
        for (j, &q) in latent.iter().enumerate() {
            let score = if adversarial {
                rng.random_range(1..=10)
            } else {
                (q + noise.sample(&mut rng)).round().clamp(1.0, 10.0) as i64
            };
            tick += 1;
            let ts: DateTime<Utc> = t0 + Duration::seconds(tick);
            records.push(RatingRecord::new(pid.clone(), image_id(j), spec.mode, score, ts).expect("score in range"));
        }
    }
    SyntheticStudy { latent, records, adversarial_ids }
}
