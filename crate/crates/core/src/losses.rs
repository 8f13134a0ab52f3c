//! Least-squares adversarial losses, the style-consistency pair loss, the
//! adaptive semantic loss and discriminator feature matching.
//!
//! Every function returns a scalar tensor so callers can backpropagate; `value`
//! reads one back as `f64` and rejects non-finite results.

use candle_core::Tensor;

use crate::config::LossWeights;
use crate::error::{Error, Result};
use crate::networks::{pair_input, PatchDiscriminator, Track};
use crate::perceptual::PerceptualExtractor;

/// Reads a scalar loss, failing on NaN or infinity.
pub fn value(loss: &Tensor, what: &str) -> Result<f64> {
    let v = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    value(&t.sum_all()?, what).map(|_| ())
}

fn mean_sq_from(scores: &Tensor, target: f64) -> Result<Tensor> {
    Ok((scores - target)?.sqr()?.mean_all()?)
}

/// `mean((real - 1)^2) + mean(fake^2)`.
pub fn lsgan_d_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    ensure_finite(real_scores, "real scores")?;
    ensure_finite(fake_scores, "fake scores")?;
    Ok((mean_sq_from(real_scores, 1.0)? + mean_sq_from(fake_scores, 0.0)?)?)
}

/// `mean((fake - 1)^2)`.
pub fn lsgan_g_loss(fake_scores: &Tensor) -> Result<Tensor> {
    ensure_finite(fake_scores, "fake scores")?;
    mean_sq_from(fake_scores, 1.0)
}

/// Pair-discriminator loss from scores: consistent pairs are real-class,
/// inconsistent pairs and (exemplar, fake) are fake-class.
pub fn style_adv_d_loss(
    consistent_scores: &Tensor,
    inconsistent_scores: &Tensor,
    fake_scores: &Tensor,
) -> Result<Tensor> {
    ensure_finite(consistent_scores, "consistent pair scores")?;
    ensure_finite(inconsistent_scores, "inconsistent pair scores")?;
    ensure_finite(fake_scores, "exemplar/fake pair scores")?;
    Ok((mean_sq_from(consistent_scores, 1.0)?
        + mean_sq_from(inconsistent_scores, 0.0)?
        + mean_sq_from(fake_scores, 0.0)?)?)
}

/// Generator side of the pair loss: `mean((D_SC(I, fake) - 1)^2)`.
pub fn style_adv_g_loss(fake_scores: &Tensor) -> Result<Tensor> {
    ensure_finite(fake_scores, "exemplar/fake pair scores")?;
    mean_sq_from(fake_scores, 1.0)
}

/// Two images forming a pair, each `(B, 3, H, W)`.
pub type ImagePair<'a> = (&'a Tensor, &'a Tensor);

/// `(d_loss, g_loss)` for the pair discriminator. `d_loss` sees `fake`
/// detached; `g_loss` reaches the generator only through `fake`.
pub fn style_adv_losses(
    d_sc: &PatchDiscriminator,
    consistent: Option<ImagePair<'_>>,
    inconsistent: Option<ImagePair<'_>>,
    exemplar: &Tensor,
    fake: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let consistent = consistent
        .ok_or_else(|| Error::BatchComposition("no style-consistent pair in step".into()))?;
    let inconsistent = inconsistent
        .ok_or_else(|| Error::BatchComposition("no style-inconsistent pair in step".into()))?;
    let score = |a: &Tensor, b: &Tensor, track| -> Result<Tensor> {
        Ok(d_sc.forward_features(&pair_input(a, b)?, track)?.0)
    };
    let d_loss = style_adv_d_loss(
        &score(consistent.0, consistent.1, Track::Params)?,
        &score(inconsistent.0, inconsistent.1, Track::Params)?,
        &score(exemplar, &fake.detach(), Track::Params)?,
    )?;
    let g_loss = style_adv_g_loss(&score(exemplar, fake, Track::Frozen)?)?;
    Ok((d_loss, g_loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Consistent,
    Inconsistent,
}

impl Regime {
    pub fn from_flag(style_consistent: bool) -> Self {
        if style_consistent {
            Regime::Consistent
        } else {
            Regime::Inconsistent
        }
    }
}

/// Per-layer semantic-loss weights: 1 for consistent pairs, `1/M_i` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveWeights {
    pub regime: Regime,
    pub weights: Vec<f64>,
}

impl AdaptiveWeights {
    pub fn new(regime: Regime, element_counts: &[usize]) -> Result<Self> {
        if let Some(i) = element_counts.iter().position(|&m| m == 0) {
            return Err(Error::invalid("element counts", format!("tap {i} is empty")));
        }
        let weights = element_counts
            .iter()
            .map(|&m| match regime {
                Regime::Consistent => 1.0,
                Regime::Inconsistent => 1.0 / m as f64,
            })
            .collect();
        Ok(Self { regime, weights })
    }
}

/// `sum_i w_i * sum|a_i - b_i|`, averaged over the batch.
pub fn weighted_l1(a: &[Tensor], b: &[Tensor], weights: &[f64]) -> Result<Tensor> {
    if a.len() != b.len() || a.len() != weights.len() || a.is_empty() {
        return Err(Error::shape(
            "feature layer lists",
            weights.len(),
            (a.len(), b.len()),
        ));
    }
    let batch = a[0].dim(0)?;
    let mut total: Option<Tensor> = None;
    for (i, ((fa, fb), &w)) in a.iter().zip(b).zip(weights).enumerate() {
        if fa.dims() != fb.dims() {
            return Err(Error::shape(format!("feature layer {i}"), fa.dims(), fb.dims()));
        }
        let term = ((fa - fb)?.abs()?.sum_all()? * w)?;
        total = Some(match total {
            None => term,
            Some(t) => (t + term)?,
        });
    }
    let total = total.expect("non-empty layer list");
    Ok((total / batch as f64)?)
}

/// Adaptive semantic loss from precomputed tap features.
pub fn adaptive_semantic_loss_from_features(
    z_features: &[Tensor],
    fake_features: &[Tensor],
    weights: &AdaptiveWeights,
) -> Result<Tensor> {
    let loss = weighted_l1(z_features, fake_features, &weights.weights)?;
    value(&loss, "semantic loss")?;
    Ok(loss)
}

/// Adaptive semantic loss between `z` and `fake` through the frozen extractor.
pub fn adaptive_semantic_loss(
    extractor: &PerceptualExtractor,
    z: &Tensor,
    fake: &Tensor,
    style_consistent: bool,
) -> Result<Tensor> {
    if z.dims() != fake.dims() {
        return Err(Error::shape("semantic loss inputs", z.dims(), fake.dims()));
    }
    let (_, _, h, w) = z.dims4()?;
    let weights = AdaptiveWeights::new(
        Regime::from_flag(style_consistent),
        &extractor.element_counts(h, w),
    )?;
    let fz: Vec<Tensor> = extractor.features(z)?.iter().map(Tensor::detach).collect();
    let ff = extractor.features(fake)?;
    adaptive_semantic_loss_from_features(&fz, &ff, &weights)
}

/// `sum_i (1/N_i) * sum|D_i(real) - D_i(fake)|`, N_i the per-sample element count.
pub fn feature_matching_loss(real_features: &[Tensor], fake_features: &[Tensor]) -> Result<Tensor> {
    let weights = real_features
        .iter()
        .map(|f| {
            let n = f.elem_count() / f.dim(0)?.max(1);
            Ok(1.0 / n.max(1) as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let real: Vec<Tensor> = real_features.iter().map(Tensor::detach).collect();
    weighted_l1(&real, fake_features, &weights)
}

/// Generator objective components in the order they enter the total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeneratorLossParts<T> {
    pub standard: T,
    pub style: T,
    pub semantic: T,
    pub feature_matching: T,
}

/// Multipliers of `(standard, style, semantic, feature_matching)`.
pub fn loss_coefficients(weights: &LossWeights) -> [f64; 4] {
    let style = if weights.scadv_enabled { weights.lambda1 } else { 0.0 };
    [1.0, style, weights.lambda2, weights.lambda_fm]
}

/// `std + lambda1 * style * [scadv] + lambda2 * semantic + lambda_fm * fm`.
pub fn total_generator_loss(parts: &GeneratorLossParts<f64>, weights: &LossWeights) -> f64 {
    let c = loss_coefficients(weights);
    let terms = [parts.standard, parts.style, parts.semantic, parts.feature_matching];
    c.iter()
        .zip(terms)
        .filter(|(c, _)| **c != 0.0)
        .map(|(c, t)| c * t)
        .sum()
}

/// Tensor form of [`total_generator_loss`]; absent parts contribute nothing.
pub fn total_generator_loss_tensor(
    parts: &GeneratorLossParts<Option<Tensor>>,
    weights: &LossWeights,
) -> Result<Tensor> {
    let c = loss_coefficients(weights);
    let terms = [
        &parts.standard,
        &parts.style,
        &parts.semantic,
        &parts.feature_matching,
    ];
    let mut total: Option<Tensor> = None;
    for (c, t) in c.iter().zip(terms) {
        if let (true, Some(t)) = (*c != 0.0, t) {
            let term = (t * *c)?;
            total = Some(match total {
                None => term,
                Some(acc) => (acc + term)?,
            });
        }
    }
    total.ok_or_else(|| Error::invalid("generator loss", "no active terms"))
}
