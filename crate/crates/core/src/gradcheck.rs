//! Central finite-difference gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::loss::{combined_loss, LossWeights};
use crate::network::CatSam;
use crate::param::{GradPolicy, Graph, ParamGrads, ParamId};
use crate::prompt::GeometricPrompt;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tuning::TuningMode;

/// Relative error used throughout: `|a - n| / (|a| + |n| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Reduces an arbitrary-shape output to a scalar with fixed pseudo-random
/// weights so that every output coordinate contributes to the check.
fn project(tape: &mut Tape, y: Var) -> Result<Var> {
    if tape.value(y).numel() == 1 {
        return Ok(y);
    }
    let shape = tape.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let w = Tensor::from_fn(&shape, |_| rng.gen_range(0.5..1.5));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = f(&mut tape, xv)?;
    let s = project(&mut tape, y)?;
    let v = tape.value(s).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Max relative error between the tape gradient of `f` at `x` and central
/// differences with step `h`, over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_coords(f, x, h, None)
}

/// Like [`grad_check`], restricted to `coords` when given.
pub fn grad_check_coords<F>(f: F, x: &Tensor, h: f64, coords: Option<&[usize]>) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = f(&mut tape, xv)?;
    let s = project(&mut tape, y)?;
    tape.backward(s)?;
    let analytic = tape.grad(xv).unwrap().to_vec();

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// One full-model loss evaluation for [`model_grad_check`].
pub struct LossProbe<'a> {
    pub image: &'a Image,
    pub prompts: &'a [GeometricPrompt],
    pub target: &'a Mask,
    pub mode: TuningMode,
    pub weights: LossWeights,
}

impl LossProbe<'_> {
    fn loss(&self, model: &CatSam, policy: GradPolicy) -> Result<(f64, ParamGrads)> {
        let input = model.prepare(self.image)?;
        let mut g = Graph::new(&model.store, policy);
        let out = model.forward(&mut g, &input, self.prompts, self.mode, None)?;
        let t = &self.target;
        let target = Tensor::new(&[t.height, t.width], t.to_f64())?;
        let loss = combined_loss(&mut g, out.logits, &target, &self.weights)?;
        let v = g.value(loss).item()?;
        if policy == GradPolicy::None {
            return Ok((v, Vec::new()));
        }
        g.backward(loss)?;
        Ok((v, g.param_grads()))
    }
}

/// Max relative error between tape gradients of the full forward plus
/// combined loss and central differences, over `n` coordinates drawn
/// uniformly from the entries of `params`.
pub fn model_grad_check(
    model: &CatSam,
    probe: &LossProbe,
    params: &[ParamId],
    n: usize,
    seed: u64,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let sizes: Vec<usize> = params
        .iter()
        .map(|&id| model.store.get(id).value.numel())
        .collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::invalid("no coordinates to check"));
    }
    let (_, grads) = probe.loss(model, GradPolicy::All)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe_model = model.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let mut k = rng.gen_range(0..total);
        let mut which = 0;
        while k >= sizes[which] {
            k -= sizes[which];
            which += 1;
        }
        let id = params[which];
        let analytic = grads
            .iter()
            .find(|(g, _)| *g == id)
            .map_or(0.0, |(_, v)| v[k]);
        let orig = model.store.get(id).value.data()[k];
        probe_model.store.get_mut(id).value.data_mut()[k] = orig + h;
        let plus = probe.loss(&probe_model, GradPolicy::None)?.0;
        probe_model.store.get_mut(id).value.data_mut()[k] = orig - h;
        let minus = probe.loss(&probe_model, GradPolicy::None)?.0;
        probe_model.store.get_mut(id).value.data_mut()[k] = orig;
        worst = worst.max(relative_error(analytic, (plus - minus) / (2.0 * h)));
    }
    Ok(worst)
}
