//! Permutation-symmetrized reverse diffusion.
//!
//! At each step the denoiser is queried twice: on the shared latent with the
//! first label, and on the latent rearranged by `π₂` with the second label.
//! The second prediction is moved back to the canonical frame by `Π⁻¹` and
//! combined with the first, so a single latent is refined towards an image
//! whose canonical layout reads as one category and whose permuted layout
//! reads as the other.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use thiserror::Error;

use crate::image::{Image, ImageError};
use crate::patch::{compose, decompose, inverse_permute, permute_latent, verify_anagram};
use crate::patch::{AnagramPair, PatchError, Permutation, Verification};
use crate::rng::{gaussian, streams};
use crate::schedule::{NoiseSchedule, ScheduleError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("denoiser failed at step {step}: {message}")]
    Denoiser { step: usize, message: String },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("template {0:?} is outside [-1, 1] or not finite")]
    TemplateRange(String),
    #[error("non-finite latent after step {step}")]
    NonFinite { step: usize },
    #[error("non-finite input to denoise step {step}")]
    NonFiniteInput { step: usize },
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("pair {pair_id} failed verification: {report}")]
    Verification { pair_id: String, report: String },
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Conditioning for one denoiser branch: the category to denoise towards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditionToken {
    pub label: String,
}

impl ConditionToken {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into() }
    }
}

/// Where the sampler is in the schedule when it queries a denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub t: usize,
    pub alpha_bar: f64,
}

/// An ε-predictor `D(z_t, t, c)`. The output must have the shape of `z` and be
/// finite for finite input; implementations are shared read-only between
/// workers.
pub trait Denoiser {
    fn predict(&self, z: &Image, step: Step, cond: &ConditionToken) -> Result<Image, SampleError>;
}

/// Analytic ε for a point-mass data distribution per category:
/// `D(z, t, c) = (z − √ᾱ_t·μ_c) / √(1 − ᾱ_t)`.
#[derive(Debug, Clone)]
pub struct TemplateDenoiser {
    templates: BTreeMap<String, Image>,
}

impl TemplateDenoiser {
    /// Templates are latent-space images in `[-1, 1]`, all of one shape.
    pub fn new(templates: BTreeMap<String, Image>) -> Result<Self, SampleError> {
        let mut shape = None;
        for (label, mu) in &templates {
            if !mu.data().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)) {
                return Err(SampleError::TemplateRange(label.clone()));
            }
            match shape {
                None => shape = Some(mu.shape()),
                Some(s) if s != mu.shape() => return Err(ImageError::ShapeMismatch(s, mu.shape()).into()),
                _ => {}
            }
        }
        Ok(Self { templates })
    }

    /// Builds templates from `[0, 1]` canvases via `μ = 2x − 1`.
    pub fn from_canvases(canvases: BTreeMap<String, Image>) -> Result<Self, SampleError> {
        Self::new(
            canvases
                .into_iter()
                .map(|(k, v)| (k, v.map(|x| 2.0 * x - 1.0)))
                .collect(),
        )
    }

    pub fn template(&self, label: &str) -> Result<&Image, SampleError> {
        self.templates
            .get(label)
            .ok_or_else(|| SampleError::UnknownCategory(label.to_string()))
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.templates.values().next().map(Image::shape)
    }
}

impl Denoiser for TemplateDenoiser {
    fn predict(&self, z: &Image, step: Step, cond: &ConditionToken) -> Result<Image, SampleError> {
        let mu = self.template(&cond.label)?;
        let scale = libm::sqrt(step.alpha_bar);
        let denom = libm::sqrt(1.0 - step.alpha_bar);
        Ok(z.zip_map(mu, |zv, m| (zv - scale * m) / denom)?)
    }
}

/// How the two branch predictions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub enum CombineMode {
    /// `ε⁽¹⁾ + Π⁻¹(ε⁽²⁾)`, the literal two-term sum.
    Sum,
    /// Half the sum; keeps the ε magnitude when the branches agree.
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub enum NoiseMode {
    #[default]
    Stochastic,
    /// `η_t = 0` at every step; only the initial latent is random.
    Deterministic,
}

/// Which label conditions the permuted branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub enum SecondBranch {
    /// `ε⁽²⁾ = D(Π(z_t), t, c(y₂))`.
    #[default]
    OwnLabel,
    /// `ε⁽²⁾ = D(Π(z_t), t, c(y₁))`, both branches on the first label.
    FirstLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub pair_id: String,
    pub resolution: usize,
    pub grid_side: usize,
    pub label1: String,
    pub label2: String,
    pub permutation2: Permutation,
    pub combine: CombineMode,
    pub noise: NoiseMode,
    pub second_branch: SecondBranch,
    pub seed: u64,
    /// Nearest-neighbour factor applied to the decoded canvas.
    pub upsample: usize,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if self.grid_side == 0 || !self.resolution.is_multiple_of(self.grid_side) {
            return Err(SampleError::Config(alloc::format!(
                "resolution {} is not divisible by grid side {}",
                self.resolution,
                self.grid_side
            )));
        }
        if self.permutation2.len() != self.grid_side * self.grid_side {
            return Err(PatchError::SizeMismatch(self.permutation2.len(), self.grid_side * self.grid_side).into());
        }
        if self.permutation2.is_identity() {
            return Err(SampleError::Config(
                "permutation2 must differ from the identity".to_string(),
            ));
        }
        if self.upsample == 0 {
            return Err(SampleError::Config("upsample factor must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// `ε_t` from the canonical and permuted branches, aligned in the canonical frame.
#[allow(clippy::too_many_arguments)]
pub fn symmetrized_epsilon(
    denoiser: &dyn Denoiser,
    z: &Image,
    step: Step,
    label1: &str,
    label2: &str,
    perm2: &Permutation,
    combine: CombineMode,
    second_branch: SecondBranch,
) -> Result<Image, SampleError> {
    let eps1 = denoiser.predict(z, step, &ConditionToken::new(label1))?;
    let second_label = match second_branch {
        SecondBranch::OwnLabel => label2,
        SecondBranch::FirstLabel => label1,
    };
    let permuted = permute_latent(z, perm2)?;
    let eps2 = denoiser.predict(&permuted, step, &ConditionToken::new(second_label))?;
    let aligned = inverse_permute(&eps2, perm2)?;
    let weight = match combine {
        CombineMode::Sum => 1.0,
        CombineMode::Mean => 0.5,
    };
    Ok(eps1.zip_map(&aligned, |a, b| weight * (a + b))?)
}

/// One reverse update
/// `z_{t−1} = (z_t − (1−α_t)/√(1−ᾱ_t)·ε_t)/√α_t + σ_t·η_t`,
/// with `σ` forced to zero at `t = 1`. `eta = None` means `η_t = 0`.
pub fn denoise_step(
    z: &Image,
    t: usize,
    eps: &Image,
    schedule: &NoiseSchedule,
    eta: Option<&Image>,
) -> Result<Image, SampleError> {
    let alpha = schedule.alpha(t)?;
    let alpha_bar = schedule.alpha_bar(t)?;
    let sigma = if t == 1 { 0.0 } else { schedule.sigma(t)? };
    z.same_shape(eps)?;
    if !z.is_finite() || !eps.is_finite() || eta.is_some_and(|e| !e.is_finite()) {
        return Err(SampleError::NonFiniteInput { step: t });
    }
    let inv_sqrt_alpha = 1.0 / libm::sqrt(alpha);
    let eps_coeff = (1.0 - alpha) / libm::sqrt(1.0 - alpha_bar);
    let mut out = z.zip_map(eps, |zv, e| inv_sqrt_alpha * (zv - eps_coeff * e))?;
    if let Some(eta) = eta {
        out.same_shape(eta)?;
        for (o, n) in out.data_mut().iter_mut().zip(eta.data()) {
            *o += sigma * n;
        }
    }
    Ok(out)
}

/// Result of [`sample_anagram`].
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    /// `z_0` in latent space, before decoding.
    pub latent: Image,
    /// The shared canvas `clamp((z_0 + 1)/2)`, upsampled if configured.
    pub canvas: Image,
    pub pair: AnagramPair,
    pub verification: Verification,
}

/// Runs the reverse chain from `z_T ~ N(0, I)` and hands every intermediate
/// `z_{t−1}` to `observe`. Returns `z_0`.
pub fn reverse_diffusion(
    denoiser: &dyn Denoiser,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    mut observe: impl FnMut(usize, &Image),
) -> Result<Image, SampleError> {
    config.validate()?;
    let (res, c) = (config.resolution, 3);
    let mut z = Image::from_vec(
        res,
        res,
        c,
        gaussian(config.seed, streams::INITIAL_LATENT, res * res * c),
    )?;
    for t in (1..=schedule.steps()).rev() {
        let step = Step {
            t,
            alpha_bar: schedule.alpha_bar(t)?,
        };
        let eps = symmetrized_epsilon(
            denoiser,
            &z,
            step,
            &config.label1,
            &config.label2,
            &config.permutation2,
            config.combine,
            config.second_branch,
        )
        .map_err(|e| match e {
            SampleError::Denoiser { message, .. } => SampleError::Denoiser { step: t, message },
            other => other,
        })?;
        if eps.shape() != z.shape() || !eps.is_finite() {
            return Err(SampleError::Denoiser {
                step: t,
                message: "prediction violates the denoiser contract".to_string(),
            });
        }
        let eta = match config.noise {
            NoiseMode::Stochastic if t > 1 => Some(Image::from_vec(
                res,
                res,
                c,
                gaussian(config.seed, t as u64, res * res * c),
            )?),
            _ => None,
        };
        z = denoise_step(&z, t, &eps, schedule, eta.as_ref())?;
        if !z.is_finite() {
            return Err(SampleError::NonFinite { step: t });
        }
        observe(t - 1, &z);
    }
    Ok(z)
}

/// Maps a latent in `[-1, 1]` to a canvas via `clamp((z + 1)/2, 0, 1)`.
pub fn decode_latent(z: &Image) -> Image {
    z.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// Synthesizes one anagram pair: the shared canvas read in the identity
/// layout (view 1) and in the `π₂` layout (view 2).
pub fn sample_anagram(
    denoiser: &dyn Denoiser,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
) -> Result<SampleOutcome, SampleError> {
    let latent = reverse_diffusion(denoiser, config, schedule, |_, _| {})?;
    let mut canvas = decode_latent(&latent);
    if config.upsample > 1 {
        canvas = canvas.upsample_nearest(config.upsample);
    }
    let patches = decompose(&canvas, config.grid_side)?;
    let k = config.grid_side * config.grid_side;
    let pair = AnagramPair {
        pair_id: config.pair_id.clone(),
        canvas1: compose(&patches, &Permutation::identity(k))?,
        canvas2: compose(&patches, &config.permutation2)?,
        label1: config.label1.clone(),
        label2: config.label2.clone(),
        permutation2: config.permutation2.clone(),
    };
    let verification = verify_anagram(&pair)?;
    if !verification.passed() {
        return Err(SampleError::Verification {
            pair_id: pair.pair_id,
            report: verification.to_string(),
        });
    }
    Ok(SampleOutcome {
        latent,
        canvas,
        pair,
        verification,
    })
}

/// Convenience for building template maps in tests and tools.
pub fn templates_from<I, S>(entries: I) -> BTreeMap<String, Image>
where
    I: IntoIterator<Item = (S, Image)>,
    S: Into<String>,
{
    entries.into_iter().map(|(k, v)| (k.into(), v)).collect()
}

/// The fixed point of mean-mode sampling with a [`TemplateDenoiser`]:
/// `μ* = (μ_{y1} + Π⁻¹(μ_{y2}, π₂))/2`.
pub fn mean_mode_fixed_point(
    denoiser: &TemplateDenoiser,
    label1: &str,
    label2: &str,
    perm2: &Permutation,
) -> Result<Image, SampleError> {
    let mu1 = denoiser.template(label1)?;
    let mu2 = inverse_permute(denoiser.template(label2)?, perm2)?;
    Ok(mu1.zip_map(&mu2, |a, b| 0.5 * (a + b))?)
}

/// A denoiser whose every prediction is a caller-supplied function of the
/// inputs; used to plug fixed behaviours into the sampler.
pub struct FnDenoiser<F>(pub F);

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&Image, Step, &ConditionToken) -> Result<Image, SampleError>,
{
    fn predict(&self, z: &Image, step: Step, cond: &ConditionToken) -> Result<Image, SampleError> {
        (self.0)(z, step, cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::random_permutation;
    use crate::schedule::cosine_schedule;
    use alloc::vec;
    use alloc::vec::Vec;

    fn smooth_template(h: usize, phase: f64) -> Image {
        Image::from_fn(h, h, 3, |y, x, c| {
            libm::sin(0.3 * y as f64 + 0.7 * x as f64 + phase + c as f64) * 0.9
        })
    }

    fn toy() -> TemplateDenoiser {
        TemplateDenoiser::new(templates_from([
            ("cat", smooth_template(8, 0.0)),
            ("dog", smooth_template(8, 1.3)),
        ]))
        .unwrap()
    }

    fn step(alpha_bar: f64) -> Step {
        Step { t: 5, alpha_bar }
    }

    #[test]
    fn identity_permutation_same_label_mean_is_single_branch() {
        let d = toy();
        let z = Image::from_vec(8, 8, 3, gaussian(1, 0, 192)).unwrap();
        let id = Permutation::identity(16);
        let single = d.predict(&z, step(0.4), &ConditionToken::new("cat")).unwrap();
        let mean = symmetrized_epsilon(
            &d,
            &z,
            step(0.4),
            "cat",
            "cat",
            &id,
            CombineMode::Mean,
            SecondBranch::OwnLabel,
        )
        .unwrap();
        assert_eq!(mean, single);
        let sum = symmetrized_epsilon(
            &d,
            &z,
            step(0.4),
            "cat",
            "cat",
            &id,
            CombineMode::Sum,
            SecondBranch::OwnLabel,
        )
        .unwrap();
        assert_eq!(sum, single.map(|v| 2.0 * v));
    }

    #[test]
    fn mean_mode_equals_denoiser_for_combined_template() {
        let d = toy();
        let perm = random_permutation(9, 16, true).unwrap();
        let mu_star = mean_mode_fixed_point(&d, "cat", "dog", &perm).unwrap();
        let star = TemplateDenoiser::new(templates_from([("star", mu_star)])).unwrap();
        for seed in 0..5 {
            let z = Image::from_vec(8, 8, 3, gaussian(seed, 0, 192)).unwrap();
            let got = symmetrized_epsilon(
                &d,
                &z,
                step(0.3),
                "cat",
                "dog",
                &perm,
                CombineMode::Mean,
                SecondBranch::OwnLabel,
            )
            .unwrap();
            let want = star.predict(&z, step(0.3), &ConditionToken::new("star")).unwrap();
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
        }
    }

    #[test]
    fn first_label_variant_conditions_both_branches_on_label1() {
        let d = toy();
        let perm = random_permutation(2, 16, true).unwrap();
        let z = Image::from_vec(8, 8, 3, gaussian(4, 0, 192)).unwrap();
        let literal = symmetrized_epsilon(
            &d,
            &z,
            step(0.5),
            "cat",
            "dog",
            &perm,
            CombineMode::Mean,
            SecondBranch::FirstLabel,
        )
        .unwrap();
        let same = symmetrized_epsilon(
            &d,
            &z,
            step(0.5),
            "cat",
            "cat",
            &perm,
            CombineMode::Mean,
            SecondBranch::OwnLabel,
        )
        .unwrap();
        assert_eq!(literal, same);
    }

    #[test]
    fn template_denoiser_zero_at_clean_signal() {
        let d = toy();
        let ab: f64 = 0.7;
        let z = d.template("cat").unwrap().map(|m| ab.sqrt() * m);
        let eps = d.predict(&z, step(ab), &ConditionToken::new("cat")).unwrap();
        assert!(eps.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn template_denoiser_errors() {
        let d = toy();
        let z = Image::zeros(8, 8, 3);
        assert_eq!(
            d.predict(&z, step(0.5), &ConditionToken::new("owl")).unwrap_err(),
            SampleError::UnknownCategory("owl".into())
        );
        assert!(matches!(
            d.predict(&Image::zeros(4, 4, 3), step(0.5), &ConditionToken::new("cat")),
            Err(SampleError::Image(ImageError::ShapeMismatch(..)))
        ));
        assert!(matches!(
            TemplateDenoiser::new(templates_from([("a", Image::filled(2, 2, 3, 1.5))])),
            Err(SampleError::TemplateRange(_))
        ));
    }

    fn two_step_schedule() -> NoiseSchedule {
        NoiseSchedule::from_alphas(vec![0.5 / 0.96, 0.96]).unwrap()
    }

    #[test]
    fn denoise_step_zero_eps_scales_by_inverse_sqrt_alpha() {
        let s = two_step_schedule();
        let z = Image::filled(1, 1, 1, 1.0);
        let out = denoise_step(&z, 2, &Image::zeros(1, 1, 1), &s, None).unwrap();
        assert_eq!(out.data()[0], 1.0 / 0.96_f64.sqrt());
    }

    #[test]
    fn denoise_step_hand_computed() {
        // α = 0.96, ᾱ = 0.5, z = 1, ε = 0.2, η = 0
        let expected = (1.0 / 0.96_f64.sqrt()) * (1.0 - (0.04 / 0.5_f64.sqrt()) * 0.2);
        assert!((expected - 1.009_073_72).abs() < 1e-8);
        let s = two_step_schedule();
        let out = denoise_step(
            &Image::filled(1, 1, 1, 1.0),
            2,
            &Image::filled(1, 1, 1, 0.2),
            &s,
            Some(&Image::zeros(1, 1, 1)),
        )
        .unwrap();
        assert!((out.data()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn final_step_ignores_noise() {
        let s = cosine_schedule(10, 0.008).unwrap();
        let z = Image::filled(2, 2, 1, 0.3);
        let eps = Image::filled(2, 2, 1, 0.1);
        let eta = Image::filled(2, 2, 1, 5.0);
        assert_eq!(
            denoise_step(&z, 1, &eps, &s, Some(&eta)).unwrap(),
            denoise_step(&z, 1, &eps, &s, None).unwrap()
        );
        assert_ne!(
            denoise_step(&z, 2, &eps, &s, Some(&eta)).unwrap(),
            denoise_step(&z, 2, &eps, &s, None).unwrap()
        );
    }

    #[test]
    fn denoise_step_errors() {
        let s = cosine_schedule(10, 0.008).unwrap();
        let z = Image::filled(2, 2, 1, 0.3);
        assert!(matches!(
            denoise_step(&z, 0, &z, &s, None),
            Err(SampleError::Schedule(ScheduleError::StepOutOfRange { .. }))
        ));
        assert!(denoise_step(&z, 11, &z, &s, None).is_err());
        let bad = Image::filled(2, 2, 1, f64::NAN);
        assert_eq!(
            denoise_step(&z, 3, &bad, &s, None),
            Err(SampleError::NonFiniteInput { step: 3 })
        );
    }

    fn config(seed: u64, noise: NoiseMode) -> SamplerConfig {
        SamplerConfig {
            pair_id: alloc::format!("pair-{seed}"),
            resolution: 8,
            grid_side: 4,
            label1: "cat".into(),
            label2: "dog".into(),
            permutation2: random_permutation(seed, 16, true).unwrap(),
            combine: CombineMode::Mean,
            noise,
            second_branch: SecondBranch::OwnLabel,
            seed,
            upsample: 1,
        }
    }

    #[test]
    fn single_prompt_sampling_converges_to_template() {
        let d = toy();
        let s = cosine_schedule(250, 0.008).unwrap();
        // identity-free permutation but both branches see the same rearranged template
        let mut cfg = config(3, NoiseMode::Deterministic);
        let mu = d.template("cat").unwrap().clone();
        let permuted_mu = permute_latent(&mu, &cfg.permutation2).unwrap();
        let single = TemplateDenoiser::new(templates_from([("a", mu.clone()), ("b", permuted_mu)])).unwrap();
        cfg.label1 = "a".into();
        cfg.label2 = "b".into();
        let z0 = reverse_diffusion(&single, &cfg, &s, |_, _| {}).unwrap();
        assert!(z0.max_abs_diff(&mu).unwrap() < 1e-4);
    }

    #[test]
    fn mean_mode_error_shrinks_over_final_steps() {
        let d = toy();
        let s = cosine_schedule(250, 0.008).unwrap();
        let cfg = config(5, NoiseMode::Deterministic);
        let target = mean_mode_fixed_point(&d, "cat", "dog", &cfg.permutation2).unwrap();
        let mut errors = Vec::new();
        let z0 = reverse_diffusion(&d, &cfg, &s, |t, z| {
            if t < 50 {
                errors.push(z.max_abs_diff(&target).unwrap());
            }
        })
        .unwrap();
        assert!(z0.max_abs_diff(&target).unwrap() < 1e-4);
        assert!(errors.windows(2).all(|w| w[1] <= w[0]), "{errors:?}");
    }

    #[test]
    fn stochastic_sampling_is_deterministic_per_seed() {
        let d = toy();
        let s = cosine_schedule(20, 0.008).unwrap();
        let a = sample_anagram(&d, &config(11, NoiseMode::Stochastic), &s).unwrap();
        let b = sample_anagram(&d, &config(11, NoiseMode::Stochastic), &s).unwrap();
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.pair, b.pair);
        let c = sample_anagram(&d, &config(12, NoiseMode::Stochastic), &s).unwrap();
        assert_ne!(a.latent, c.latent);
    }

    #[test]
    fn sampled_pairs_verify_and_upsample() {
        let d = toy();
        let s = cosine_schedule(10, 0.008).unwrap();
        let mut cfg = config(2, NoiseMode::Stochastic);
        cfg.upsample = 2;
        let out = sample_anagram(&d, &cfg, &s).unwrap();
        assert!(out.verification.passed());
        assert_eq!(out.canvas.shape(), (16, 16, 3));
        assert_eq!(out.pair.canvas1, out.canvas);
    }

    #[test]
    fn config_validation() {
        let d = toy();
        let s = cosine_schedule(10, 0.008).unwrap();
        let mut cfg = config(2, NoiseMode::Stochastic);
        cfg.permutation2 = Permutation::identity(16);
        assert!(matches!(sample_anagram(&d, &cfg, &s), Err(SampleError::Config(_))));
        let mut cfg = config(2, NoiseMode::Stochastic);
        cfg.resolution = 10;
        assert!(matches!(sample_anagram(&d, &cfg, &s), Err(SampleError::Config(_))));
    }

    #[test]
    fn non_finite_denoiser_output_aborts_with_step() {
        let s = cosine_schedule(10, 0.008).unwrap();
        let bad = FnDenoiser(|z: &Image, step: Step, _: &ConditionToken| {
            Ok(if step.t == 7 {
                z.map(|_| f64::INFINITY)
            } else {
                z.map(|_| 0.0)
            })
        });
        match sample_anagram(&bad, &config(1, NoiseMode::Deterministic), &s) {
            Err(SampleError::Denoiser { step: 7, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
