//! Data-free knowledge distillation of an aggregated model against an
//! ensemble of presumed-benign client models.
//!
//! A generator proposes inputs where the clone and the ensemble disagree
//! (it ascends the l1 logit gap, with gradients flowing through both
//! models into the input and back through the generator). The clone then
//! descends the same gap on generated batches mixed one-to-one with a
//! small trusted clean set. The clone starts from the aggregated global,
//! so distillation only has to repair what aggregation let through.

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{backward, forward_trace, l1_logit_grad, Classifier, Generator};
use crate::seeding;
use crate::Real;

/// Distillation schedule and optimization constants.
#[derive(Clone, Debug)]
pub struct DistillConfig {
    /// Distill on rounds divisible by this period.
    pub period: usize,
    /// Total generator queries (synthetic inputs) per distillation pass.
    /// Zero disables distillation entirely.
    pub query_budget: usize,
    pub batch_size: usize,
    /// Generator ascent steps per cycle.
    pub generator_steps: usize,
    /// Clone descent steps per cycle; each pairs one synthetic batch with
    /// one clean batch.
    pub clone_steps: usize,
    pub generator_lr: f64,
    pub clone_lr: f64,
    /// Small trusted dataset mixed into the clone's training batches.
    pub clean_seed: LabeledDataset,
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::invalid("distill period must be positive"));
        }
        if self.query_budget == 0 {
            return Ok(());
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("distill batch size must be positive"));
        }
        if self.generator_steps == 0 && self.clone_steps == 0 {
            return Err(Error::invalid("distillation needs at least one step kind"));
        }
        for (name, lr) in [("generator_lr", self.generator_lr), ("clone_lr", self.clone_lr)] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.clean_seed.is_empty() {
            return Err(Error::invalid("distillation needs a non-empty clean seed set"));
        }
        Ok(())
    }

    /// Whether a distillation pass runs on this 1-based round.
    pub fn due(&self, round: usize) -> bool {
        self.query_budget > 0 && round % self.period == 0
    }
}

/// Mean logits of an ensemble on a batch.
pub fn ensemble_logits(models: &[Classifier], batch: &Array2<Real>) -> Result<Array2<Real>> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("ensemble of zero models"))?;
    let mut sum = first.logits(batch)?;
    for m in &models[1..] {
        let l = m.logits(batch)?;
        if l.dim() != sum.dim() {
            return Err(Error::shape("ensemble members disagree on logit shape"));
        }
        sum += &l;
    }
    let inv = 1.0 / models.len() as Real;
    Ok(sum * inv)
}

/// Serves shuffled clean batches, reshuffling each time the set is
/// exhausted.
struct CleanBatches<'a> {
    data: &'a LabeledDataset,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> CleanBatches<'a> {
    fn new(data: &'a LabeledDataset) -> Self {
        CleanBatches { data, order: (0..data.len()).collect(), cursor: data.len() }
    }

    fn next(&mut self, size: usize, rng: &mut impl rand::Rng) -> Array2<Real> {
        let size = size.min(self.data.len());
        if self.cursor + size > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let idxs = &self.order[self.cursor..self.cursor + size];
        self.cursor += size;
        self.data.gather_inputs(idxs)
    }
}

fn l1_descent_step(
    clone: &mut Classifier,
    batch: &Array2<Real>,
    teacher: &Array2<Real>,
    lr: f64,
) -> Result<f64> {
    let trace = forward_trace(clone.arch(), clone.params(), batch)?;
    let (loss, d_student) = l1_logit_grad(trace.output(), teacher)?;
    let arch = clone.arch().clone();
    let (grads, _) = backward(&arch, clone.params(), &trace, &d_student)?;
    for (p, g) in clone.params_mut().values_mut().iter_mut().zip(&grads) {
        *p -= (lr * *g as f64) as Real;
    }
    Ok(loss)
}

/// Distills `global` against the benign ensemble. Returns the repaired
/// clone and the evolved generator. A zero query budget is a pass-through
/// that returns both inputs unchanged.
pub fn distill(
    global: &Classifier,
    benign: &[Classifier],
    generator: &Generator,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<(Classifier, Generator)> {
    cfg.validate()?;
    if cfg.query_budget == 0 {
        log::debug!("distillation disabled (zero query budget)");
        return Ok((global.clone(), generator.clone()));
    }
    if benign.is_empty() {
        return Err(Error::invalid("distillation needs at least one benign model"));
    }
    let input_dim = global.arch().input_dim();
    for m in benign {
        if m.arch().input_dim() != input_dim || m.num_classes() != global.num_classes() {
            return Err(Error::shape("benign model shape differs from global"));
        }
    }
    if generator.output_dim() != input_dim {
        return Err(Error::shape(format!(
            "generator emits {} features, model expects {input_dim}",
            generator.output_dim()
        )));
    }
    if cfg.clean_seed.dim() != input_dim {
        return Err(Error::shape(format!(
            "clean seed has {} features, model expects {input_dim}",
            cfg.clean_seed.dim()
        )));
    }

    let mut rng = seeding::rng(seeding::mix2(seed, seeding::STREAM_DISTILL));
    let mut clone = global.clone();
    let mut gen = generator.clone();
    let mut clean = CleanBatches::new(&cfg.clean_seed);
    let inv_k = 1.0 / benign.len() as f64;
    let mut queries = 0usize;

    while queries < cfg.query_budget {
        for _ in 0..cfg.generator_steps {
            if queries >= cfg.query_budget {
                break;
            }
            let z = gen.sample_latent(cfg.batch_size, &mut rng);
            let gtrace = forward_trace(gen.arch(), gen.params(), &z)?;
            let x = gtrace.output().clone();
            queries += x.nrows();

            let teacher_traces: Vec<_> = benign
                .iter()
                .map(|m| forward_trace(m.arch(), m.params(), &x))
                .collect::<Result<_>>()?;
            let mut teacher = teacher_traces[0].output().clone();
            for t in &teacher_traces[1..] {
                teacher += t.output();
            }
            teacher *= inv_k as Real;

            let ctrace = forward_trace(clone.arch(), clone.params(), &x)?;
            let (_, d_student) = l1_logit_grad(ctrace.output(), &teacher)?;
            let (_, mut dx) = backward(clone.arch(), clone.params(), &ctrace, &d_student)?;
            // The teacher mean sees the negated gradient, split across members.
            let d_teacher = d_student.mapv(|v| -(v * inv_k as Real));
            for (m, t) in benign.iter().zip(&teacher_traces) {
                let (_, dxm) = backward(m.arch(), m.params(), t, &d_teacher)?;
                dx += &dxm;
            }
            let (g_grads, _) = backward(gen.arch(), gen.params(), &gtrace, &dx)?;
            // Ascent: the generator seeks disagreement.
            for (p, g) in gen.params_mut().values_mut().iter_mut().zip(&g_grads) {
                *p += (cfg.generator_lr * *g as f64) as Real;
            }
        }

        for _ in 0..cfg.clone_steps {
            if queries >= cfg.query_budget {
                break;
            }
            let z = gen.sample_latent(cfg.batch_size, &mut rng);
            let x_syn = gen.forward(&z)?;
            queries += x_syn.nrows();
            let t_syn = ensemble_logits(benign, &x_syn)?;
            l1_descent_step(&mut clone, &x_syn, &t_syn, cfg.clone_lr)?;

            let x_clean = clean.next(cfg.batch_size, &mut rng);
            let t_clean = ensemble_logits(benign, &x_clean)?;
            l1_descent_step(&mut clone, &x_clean, &t_clean, cfg.clone_lr)?;
        }
    }
    Ok((clone, gen))
}
