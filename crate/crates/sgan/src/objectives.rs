//! Loss definitions and single-step update rules for the three adversarial
//! objectives: vanilla GAN, WGAN with gradient penalty, and DRAGAN-style
//! locally penalized GAN.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{forward_plain, Graph, Network, OutputHead, ParamStore};
use crate::tensor::Matrix;
use crate::{Result, SganError};

/// Discriminator probabilities are clamped to this range before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Gan,
    WganGp,
    Dragan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GLossVariant {
    Minimax,
    NonSaturating,
}

/// Objective selection and its knobs. `kind` determines the discriminator
/// output head: sigmoid for gan/dragan, linear for wgan_gp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Penalty coefficient lambda (wgan_gp/dragan; ignored for gan).
    pub penalty_coeff: f64,
    /// DRAGAN perturbation scale; if None, 0.5 * std of the real batch.
    pub dragan_noise_scale: Option<f64>,
    /// Discriminator updates per generator update (I_D).
    pub d_steps: usize,
    /// Generator loss form for gan/dragan.
    pub g_loss_variant: GLossVariant,
}

impl ObjectiveSpec {
    pub fn gan() -> ObjectiveSpec {
        ObjectiveSpec {
            kind: ObjectiveKind::Gan,
            penalty_coeff: 0.0,
            dragan_noise_scale: None,
            d_steps: 1,
            g_loss_variant: GLossVariant::NonSaturating,
        }
    }

    pub fn wgan_gp() -> ObjectiveSpec {
        ObjectiveSpec {
            kind: ObjectiveKind::WganGp,
            penalty_coeff: 10.0,
            dragan_noise_scale: None,
            d_steps: 5,
            g_loss_variant: GLossVariant::NonSaturating,
        }
    }

    pub fn dragan() -> ObjectiveSpec {
        ObjectiveSpec {
            kind: ObjectiveKind::Dragan,
            penalty_coeff: 10.0,
            dragan_noise_scale: None,
            d_steps: 1,
            g_loss_variant: GLossVariant::NonSaturating,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_steps == 0 {
            return Err(SganError::Config("d_steps (I_D) must be >= 1".into()));
        }
        match self.kind {
            ObjectiveKind::Gan => Ok(()),
            ObjectiveKind::WganGp | ObjectiveKind::Dragan => {
                if self.penalty_coeff <= 0.0 {
                    return Err(SganError::Config(
                        "wgan_gp and dragan require penalty_coeff > 0".into(),
                    ));
                }
                if let Some(s) = self.dragan_noise_scale {
                    if s <= 0.0 {
                        return Err(SganError::Config("dragan_noise_scale must be > 0".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// Discriminator output head implied by the objective.
    pub fn discriminator_head(&self) -> OutputHead {
        match self.kind {
            ObjectiveKind::Gan | ObjectiveKind::Dragan => OutputHead::Sigmoid,
            ObjectiveKind::WganGp => OutputHead::Linear,
        }
    }
}

/// Discriminator loss value and its gradient with respect to the
/// discriminator parameters. `x_fake` carries no gradient path back to the
/// generator (it is a plain value batch).
pub fn d_loss_and_grads(
    obj: &ObjectiveSpec,
    d: &Network,
    x_real: &Matrix,
    x_fake: &Matrix,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ParamStore)> {
    if x_real.cols() != x_fake.cols() {
        return Err(SganError::Shape {
            expected: format!("fake width {}", x_real.cols()),
            got: format!("{}", x_fake.cols()),
            context: "d_loss".into(),
        });
    }
    let mut g = Graph::new();
    let binding = g.bind_params(&d.params);
    let real_in = g.input(x_real.clone());
    let fake_in = g.input(x_fake.clone());
    let real_tr = g.mlp_forward(&binding, &d.spec, real_in);
    let fake_tr = g.mlp_forward(&binding, &d.spec, fake_in);

    let loss = match obj.kind {
        ObjectiveKind::Gan | ObjectiveKind::Dragan => {
            let base = gan_d_loss_node(&mut g, real_tr.output, fake_tr.output);
            if obj.kind == ObjectiveKind::Dragan {
                let scale = obj
                    .dragan_noise_scale
                    .unwrap_or_else(|| 0.5 * batch_std(x_real));
                let perturbed = perturb(x_real, scale, rng);
                let pin = g.input(perturbed);
                let ptr = g.mlp_forward(&binding, &d.spec, pin);
                let pen = g.grad_norm_penalty(&binding, &d.spec, &ptr, 1.0);
                let pen = g.scale(pen, obj.penalty_coeff);
                g.add(base, pen)
            } else {
                base
            }
        }
        ObjectiveKind::WganGp => {
            // mean D(fake) - mean D(real)
            let mf = g.mean_all(fake_tr.output);
            let mr = g.mean_all(real_tr.output);
            let base = g.sub(mf, mr);
            if obj.penalty_coeff > 0.0 {
                let interp = interpolate(x_real, x_fake, rng);
                let iin = g.input(interp);
                let itr = g.mlp_forward(&binding, &d.spec, iin);
                let pen = g.grad_norm_penalty(&binding, &d.spec, &itr, 1.0);
                let pen = g.scale(pen, obj.penalty_coeff);
                g.add(base, pen)
            } else {
                base
            }
        }
    };
    let value = g.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(SganError::Config(format!("non-finite discriminator loss {value}")));
    }
    let grads = g.backward(loss).param_grads(&binding, &d.params);
    Ok((value, grads))
}

/// Generator loss value and its gradient with respect to the generator
/// parameters. The fake batch is built on the same tape so the gradient
/// flows through the discriminator into the generator.
pub fn g_loss_and_grads(
    obj: &ObjectiveSpec,
    gen: &Network,
    d: &Network,
    noise: &Matrix,
) -> Result<(f64, ParamStore)> {
    if noise.cols() != gen.spec.input_dim() {
        return Err(SganError::Shape {
            expected: format!("batch x {}", gen.spec.input_dim()),
            got: format!("{} x {}", noise.rows(), noise.cols()),
            context: "g_loss noise".into(),
        });
    }
    let mut g = Graph::new();
    let g_binding = g.bind_params(&gen.params);
    let d_binding = g.bind_params(&d.params);
    let z = g.input(noise.clone());
    let g_tr = g.mlp_forward(&g_binding, &gen.spec, z);
    let d_tr = g.mlp_forward(&d_binding, &d.spec, g_tr.output);

    let loss = match obj.kind {
        ObjectiveKind::WganGp => {
            let m = g.mean_all(d_tr.output);
            g.scale(m, -1.0)
        }
        ObjectiveKind::Gan | ObjectiveKind::Dragan => match obj.g_loss_variant {
            GLossVariant::Minimax => {
                // mean log(1 - D(fake))
                let neg = g.scale(d_tr.output, -1.0);
                let one_minus = g.add_scalar(neg, 1.0);
                let ln = g.ln_clamped(one_minus, PROB_CLAMP, 1.0 - PROB_CLAMP);
                g.mean_all(ln)
            }
            GLossVariant::NonSaturating => {
                // -mean log D(fake)
                let ln = g.ln_clamped(d_tr.output, PROB_CLAMP, 1.0 - PROB_CLAMP);
                let m = g.mean_all(ln);
                g.scale(m, -1.0)
            }
        },
    };
    let value = g.value(loss).get(0, 0);
    if !value.is_finite() {
        return Err(SganError::Config(format!("non-finite generator loss {value}")));
    }
    let grads = g.backward(loss).param_grads(&g_binding, &gen.params);
    Ok((value, grads))
}

/// One zeroGradients/backprop/updateParameters cycle on the discriminator.
/// The generator that produced `x_fake` is untouched.
pub fn d_update(
    obj: &ObjectiveSpec,
    d: &mut Network,
    x_real: &Matrix,
    x_fake: &Matrix,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (loss, grads) = d_loss_and_grads(obj, d, x_real, x_fake, rng)?;
    d.opt.step(&mut d.params, &grads)?;
    Ok(loss)
}

/// One update of the generator against a frozen discriminator.
pub fn g_update(
    obj: &ObjectiveSpec,
    gen: &mut Network,
    d: &Network,
    noise: &Matrix,
) -> Result<f64> {
    let (loss, grads) = g_loss_and_grads(obj, gen, d, noise)?;
    gen.opt.step(&mut gen.params, &grads)?;
    Ok(loss)
}

/// Fake batch from a generator without a gradient path (plain forward).
pub fn generate_detached(gen: &Network, noise: &Matrix) -> Result<Matrix> {
    forward_plain(&gen.params, &gen.spec, noise)
}

fn gan_d_loss_node(
    g: &mut Graph,
    real_out: crate::nn::NodeId,
    fake_out: crate::nn::NodeId,
) -> crate::nn::NodeId {
    // -[mean log D(real) + mean log(1 - D(fake))]
    let ln_r = g.ln_clamped(real_out, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mr = g.mean_all(ln_r);
    let neg = g.scale(fake_out, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let ln_f = g.ln_clamped(one_minus, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mf = g.mean_all(ln_f);
    let s = g.add(mr, mf);
    g.scale(s, -1.0)
}

/// Per-row convex combination alpha * real + (1 - alpha) * fake, alpha ~ U(0,1).
fn interpolate(x_real: &Matrix, x_fake: &Matrix, rng: &mut ChaCha8Rng) -> Matrix {
    let rows = x_real.rows().min(x_fake.rows());
    let cols = x_real.cols();
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let a: f64 = rng.gen_range(0.0..1.0);
        for j in 0..cols {
            out.set(i, j, a * x_real.get(i, j) + (1.0 - a) * x_fake.get(i, j));
        }
    }
    out
}

/// x + scale * eta, eta standard normal per entry.
fn perturb(x: &Matrix, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let mut out = x.clone();
    for v in out.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += scale * n;
    }
    out
}

/// Standard deviation over all entries of a batch.
fn batch_std(x: &Matrix) -> f64 {
    let n = (x.rows() * x.cols()) as f64;
    let mean = x.data().iter().sum::<f64>() / n;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt().max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{MlpSpec, Network, OptimizerKind};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn zero_sigmoid_d() -> Network {
        // All-zero parameters: D(x) = 0.5 everywhere.
        let spec = MlpSpec::new(vec![2, 4, 1], 0.01, crate::nn::OutputHead::Sigmoid);
        let mut net = Network::init(spec, 0, OptimizerKind::default_adam(), 1e-3).unwrap();
        net.params = net.params.zeros_like();
        net
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn batch(rows: usize, seed: u64) -> Matrix {
        crate::data::noise_batch(seed, rows, 2).unwrap()
    }

    #[test]
    fn gan_d_loss_at_constant_half_is_two_log_two() {
        let d = zero_sigmoid_d();
        let (loss, _) = d_loss_and_grads(
            &ObjectiveSpec::gan(),
            &d,
            &batch(16, 1),
            &batch(16, 2),
            &mut rng(),
        )
        .unwrap();
        assert_abs_diff_eq!(loss, -2.0 * 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gan_d_loss_never_below_two_log_two_at_constant_half() {
        let d = zero_sigmoid_d();
        for seed in 0..5 {
            let (loss, _) = d_loss_and_grads(
                &ObjectiveSpec::gan(),
                &d,
                &batch(8, seed),
                &batch(8, seed + 100),
                &mut rng(),
            )
            .unwrap();
            assert!(loss > 2.0 * 2.0f64.ln() - 1e-9);
        }
    }

    #[test]
    fn gan_d_loss_matches_independent_scalar_evaluation() {
        let spec = MlpSpec::new(vec![2, 6, 1], 0.01, crate::nn::OutputHead::Sigmoid);
        let d = Network::init(spec, 21, OptimizerKind::default_adam(), 1e-3).unwrap();
        let x_real = batch(32, 3);
        let x_fake = batch(32, 4);
        let (loss, _) =
            d_loss_and_grads(&ObjectiveSpec::gan(), &d, &x_real, &x_fake, &mut rng()).unwrap();

        // Straight re-evaluation of the formula from plain forward passes.
        let p_real = forward_plain(&d.params, &d.spec, &x_real).unwrap();
        let p_fake = forward_plain(&d.params, &d.spec, &x_fake).unwrap();
        let clamp = |p: f64| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let mean_ln_real = p_real.data().iter().map(|&p| clamp(p).ln()).sum::<f64>() / 32.0;
        let mean_ln_one_minus_fake =
            p_fake.data().iter().map(|&p| clamp(1.0 - p).ln()).sum::<f64>() / 32.0;
        let expected = -(mean_ln_real + mean_ln_one_minus_fake);
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-12);
    }

    #[test]
    fn g_loss_non_saturating_at_constant_half() {
        let d = zero_sigmoid_d();
        let g_spec = MlpSpec::new(vec![3, 4, 2], 0.01, crate::nn::OutputHead::Linear);
        let gen = Network::init(g_spec, 1, OptimizerKind::default_adam(), 1e-3).unwrap();
        let noise = crate::data::noise_batch(9, 16, 3).unwrap();
        let (loss, _) = g_loss_and_grads(&ObjectiveSpec::gan(), &gen, &d, &noise).unwrap();
        assert_abs_diff_eq!(loss, -0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn wgan_g_loss_is_negative_constant_for_constant_d() {
        // Linear-head D with zero weights and bias c: D = c everywhere.
        let spec = MlpSpec::new(vec![2, 1], 0.01, crate::nn::OutputHead::Linear);
        let mut d = Network::init(spec, 0, OptimizerKind::default_adam(), 1e-3).unwrap();
        d.params = d.params.zeros_like();
        d.params.layers[0].bias[0] = 0.7;
        let g_spec = MlpSpec::new(vec![3, 4, 2], 0.01, crate::nn::OutputHead::Linear);
        let gen = Network::init(g_spec, 1, OptimizerKind::default_adam(), 1e-3).unwrap();
        let noise = crate::data::noise_batch(9, 16, 3).unwrap();
        let (loss, _) = g_loss_and_grads(&ObjectiveSpec::wgan_gp(), &gen, &d, &noise).unwrap();
        assert_abs_diff_eq!(loss, -0.7, epsilon = 1e-12);
    }

    #[test]
    fn wgan_penalty_vanishes_for_unit_norm_affine_d() {
        let spec = MlpSpec::new(vec![2, 1], 0.01, crate::nn::OutputHead::Linear);
        let mut d = Network::init(spec, 0, OptimizerKind::default_adam(), 1e-3).unwrap();
        d.params.layers[0].weight = Matrix::from_vec(1, 2, vec![0.6, 0.8]).unwrap();
        d.params.layers[0].bias[0] = -0.2;
        let x_real = batch(16, 5);
        let x_fake = batch(16, 6);
        let (with_pen, _) =
            d_loss_and_grads(&ObjectiveSpec::wgan_gp(), &d, &x_real, &x_fake, &mut rng()).unwrap();
        let mut no_pen = ObjectiveSpec::wgan_gp();
        no_pen.penalty_coeff = 0.0;
        let (base, _) = d_loss_and_grads(&no_pen, &d, &x_real, &x_fake, &mut rng()).unwrap();
        assert_abs_diff_eq!(with_pen, base, epsilon = 1e-9);
    }

    #[test]
    fn wgan_loss_zero_on_identical_batches_without_penalty() {
        let spec = MlpSpec::new(vec![2, 5, 1], 0.01, crate::nn::OutputHead::Linear);
        let d = Network::init(spec, 8, OptimizerKind::default_adam(), 1e-3).unwrap();
        let x = batch(16, 7);
        let mut obj = ObjectiveSpec::wgan_gp();
        obj.penalty_coeff = 0.0;
        let (loss, _) = d_loss_and_grads(&obj, &d, &x, &x, &mut rng()).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn d_update_leaves_generator_untouched_and_vice_versa() {
        let obj = ObjectiveSpec::gan();
        let d_spec = MlpSpec::new(vec![2, 6, 1], 0.01, obj.discriminator_head());
        let g_spec = MlpSpec::new(vec![4, 6, 2], 0.01, crate::nn::OutputHead::Linear);
        let mut d = Network::init(d_spec, 1, OptimizerKind::default_adam(), 1e-3).unwrap();
        let mut gen = Network::init(g_spec, 2, OptimizerKind::default_adam(), 1e-3).unwrap();

        let g_before = gen.checksum();
        let fake = generate_detached(&gen, &crate::data::noise_batch(1, 8, 4).unwrap()).unwrap();
        d_update(&obj, &mut d, &batch(8, 2), &fake, &mut rng()).unwrap();
        assert_eq!(gen.checksum(), g_before);

        let d_before = d.checksum();
        g_update(&obj, &mut gen, &d, &crate::data::noise_batch(3, 8, 4).unwrap()).unwrap();
        assert_eq!(d.checksum(), d_before);
        assert_ne!(gen.checksum(), g_before);
    }

    #[test]
    fn losses_are_permutation_invariant_over_rows() {
        let spec = MlpSpec::new(vec![2, 5, 1], 0.01, crate::nn::OutputHead::Sigmoid);
        let d = Network::init(spec, 4, OptimizerKind::default_adam(), 1e-3).unwrap();
        let x_real = batch(6, 8);
        let x_fake = batch(6, 9);
        let permute = |m: &Matrix| {
            let order = [5usize, 3, 0, 4, 1, 2];
            let mut data = Vec::new();
            for &i in &order {
                data.extend_from_slice(m.row(i));
            }
            Matrix::from_vec(6, 2, data).unwrap()
        };
        let obj = ObjectiveSpec::gan();
        let (a, _) = d_loss_and_grads(&obj, &d, &x_real, &x_fake, &mut rng()).unwrap();
        let (b, _) =
            d_loss_and_grads(&obj, &d, &permute(&x_real), &permute(&x_fake), &mut rng()).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn trained_gan_discriminator_separates_degenerate_generator() {
        // Fixed generator far from the data: after 200 d steps, D tells
        // real from fake nearly perfectly.
        let obj = ObjectiveSpec::gan();
        let d_spec = MlpSpec::new(vec![2, 32, 1], 0.01, obj.discriminator_head());
        let mut d = Network::init(d_spec, 3, OptimizerKind::default_adam(), 1e-2).unwrap();
        let spec = crate::data::DatasetSpec::circle(8);
        let mut stream = crate::data::SampleStream::new(spec, 17).unwrap();
        let fake = Matrix::from_vec(64, 2, vec![25.0; 128]).unwrap();
        let mut r = rng();
        for _ in 0..200 {
            let real = stream.next_batch(64);
            d_update(&obj, &mut d, &real, &fake, &mut r).unwrap();
        }
        let real = stream.next_batch(256);
        let p_real = forward_plain(&d.params, &d.spec, &real).unwrap();
        let p_fake = forward_plain(&d.params, &d.spec, &fake).unwrap();
        let mean = |m: &Matrix| m.data().iter().sum::<f64>() / m.data().len() as f64;
        assert!(mean(&p_real) > 0.9, "mean D(real) = {}", mean(&p_real));
        assert!(mean(&p_fake) < 0.1, "mean D(fake) = {}", mean(&p_fake));
    }

    #[test]
    fn g_loss_gradient_matches_finite_differences() {
        let obj = ObjectiveSpec::gan();
        let d_spec = MlpSpec::new(vec![2, 4, 1], 0.1, obj.discriminator_head());
        let g_spec = MlpSpec::new(vec![3, 4, 2], 0.1, crate::nn::OutputHead::Linear);
        let d = Network::init(d_spec, 5, OptimizerKind::default_adam(), 1e-3).unwrap();
        let gen = Network::init(g_spec, 6, OptimizerKind::default_adam(), 1e-3).unwrap();
        let noise = crate::data::noise_batch(11, 8, 3).unwrap();
        let (_, analytic) = g_loss_and_grads(&obj, &gen, &d, &noise).unwrap();

        let h = 1e-6;
        for li in 0..gen.params.layers.len() {
            for wi in (0..gen.params.layers[li].weight.data().len()).step_by(3) {
                let mut plus = gen.clone();
                plus.params.layers[li].weight.data_mut()[wi] += h;
                let mut minus = gen.clone();
                minus.params.layers[li].weight.data_mut()[wi] -= h;
                let (lp, _) = g_loss_and_grads(&obj, &plus, &d, &noise).unwrap();
                let (lm, _) = g_loss_and_grads(&obj, &minus, &d, &noise).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let a = analytic.layers[li].weight.data()[wi];
                assert!(
                    (a - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "layer {li} weight {wi}: {a} vs {fd}"
                );
            }
        }
    }
}
