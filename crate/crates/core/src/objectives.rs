//! Leader/follower loss pairs for each supported GAN flavor.
//!
//! The follower loss `f` is what the discriminator *maximizes*; the leader
//! loss `F` is what the generator *minimizes*. Both are batch expectations
//! and both are differentiable in either parameter bank, so one evaluation
//! can produce any subset of the four gradients from a single shared forward
//! pass. All probability terms are computed from raw head scores through
//! stable log-sigmoid forms; nothing ever takes `ln` of a saturated sigmoid.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{MlpNet, SplitDiscriminator};
use crate::params::ParamVector;
use crate::tape::{Bank, BankGrads, NodeId, Tape};

/// Objective flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    /// `f = F = E[log D(x)] + E[log(1−D(G(z)))]` — the classic minimax pair.
    /// With a shared batch its response-corrected total gradient cancels
    /// exactly (see the bilevel module); kept selectable for ablation.
    VanillaSaturating,
    /// Default pairing: `f` as above, `F = −E[log D(G(z))]`.
    VanillaNonsat,
    /// `f = E[D(x)] − E[D(G(z))]`, `F = −E[D(G(z))]`, raw linear head.
    Wgan,
    /// `f = −½E[(D(x)−1)²] − ½E[D(G(z))²]`, `F = ½E[(D(G(z))−1)²]`,
    /// raw linear head.
    Lsgan,
    /// Feature-statistics-regularized discriminator loss: the head also sees
    /// batch mean/variance of the feature stack; `f = f1 + f2` with the
    /// cross-entropy forms, `F` non-saturating on the augmented head.
    BrcRf,
}

impl Flavor {
    pub fn parse(s: &str) -> Result<Flavor> {
        Ok(match s {
            "vanilla_saturating" => Flavor::VanillaSaturating,
            "vanilla_nonsat" => Flavor::VanillaNonsat,
            "wgan" => Flavor::Wgan,
            "lsgan" => Flavor::Lsgan,
            "brc_rf" => Flavor::BrcRf,
            other => {
                return Err(Error::Config(format!(
                    "unknown flavor '{other}' (expected vanilla_saturating, vanilla_nonsat, wgan, lsgan or brc_rf)"
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Flavor::VanillaSaturating => "vanilla_saturating",
            Flavor::VanillaNonsat => "vanilla_nonsat",
            Flavor::Wgan => "wgan",
            Flavor::Lsgan => "lsgan",
            Flavor::BrcRf => "brc_rf",
        }
    }

    /// Does the discriminator head consume batch feature statistics?
    pub fn uses_stats(&self) -> bool {
        matches!(self, Flavor::BrcRf)
    }

    /// Probability-producing head (affects only the score-to-probability
    /// forward; losses always work on raw scores).
    pub fn sigmoid_head(&self) -> bool {
        !matches!(self, Flavor::Wgan | Flavor::Lsgan)
    }
}

/// One training minibatch: real samples and latent draws, row-aligned.
#[derive(Debug, Clone)]
pub struct Batch {
    pub real: Matrix,
    pub latents: Matrix,
}

impl Batch {
    /// Placeholder for objectives that ignore data (analytic toy problems).
    pub fn empty() -> Batch {
        Batch {
            real: Matrix::zeros(0, 0),
            latents: Matrix::zeros(0, 0),
        }
    }
}

/// Which gradients an evaluation must produce.
#[derive(Debug, Clone, Copy, Default)]
pub struct Wants {
    pub leader_gen: bool,
    pub leader_disc: bool,
    pub follower_gen: bool,
    pub follower_disc: bool,
}

impl Wants {
    pub fn none() -> Self {
        Wants::default()
    }

    pub fn all() -> Self {
        Wants {
            leader_gen: true,
            leader_disc: true,
            follower_gen: true,
            follower_disc: true,
        }
    }

    pub fn follower_disc() -> Self {
        Wants {
            follower_disc: true,
            ..Wants::default()
        }
    }

    pub fn leader_gen() -> Self {
        Wants {
            leader_gen: true,
            ..Wants::default()
        }
    }

    pub fn follower_gen() -> Self {
        Wants {
            follower_gen: true,
            ..Wants::default()
        }
    }
}

/// Values and requested gradients of one `(F, f)` evaluation at a point.
#[derive(Debug, Clone)]
pub struct PairEval {
    pub leader_val: f64,
    pub follower_val: f64,
    pub leader_grad_gen: Option<Vec<f64>>,
    pub leader_grad_disc: Option<Vec<f64>>,
    pub follower_grad_gen: Option<Vec<f64>>,
    pub follower_grad_disc: Option<Vec<f64>>,
}

/// A differentiable leader/follower pair — the trainer-facing abstraction.
/// GAN objectives implement it through the tape engine; analytic toy
/// problems implement it with closed-form gradients.
pub trait BilevelObjective {
    fn gen_len(&self) -> usize;
    fn disc_len(&self) -> usize;
    fn eval(
        &self,
        gen: &ParamVector,
        disc: &ParamVector,
        batch: &Batch,
        wants: Wants,
    ) -> Result<PairEval>;
    /// Human-readable tag for logs.
    fn name(&self) -> String;
}

/// GAN leader/follower pair over MLP generator and split discriminator.
#[derive(Debug, Clone)]
pub struct GanObjective {
    pub gen: MlpNet,
    pub disc: SplitDiscriminator,
    pub flavor: Flavor,
}

impl GanObjective {
    /// Builds the discriminator to mirror the generator (same width, same
    /// number of activated layers, same leak) with the head dictated by the
    /// flavor.
    pub fn new(gen: MlpNet, flavor: Flavor) -> Result<Self> {
        gen.validate()?;
        if gen.hidden_layers == 0 {
            return Err(Error::Config("generator needs at least one hidden layer".into()));
        }
        let disc = SplitDiscriminator::new(
            gen.output_dim,
            gen.hidden_width,
            gen.hidden_layers,
            gen.leak,
            flavor.uses_stats(),
            flavor.sigmoid_head(),
        )?;
        Ok(GanObjective { gen, disc, flavor })
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.real.rows < 2 {
            return Err(Error::Config(format!(
                "batch needs at least 2 rows, got {}",
                batch.real.rows
            )));
        }
        if batch.real.rows != batch.latents.rows {
            return Err(Error::Shape(format!(
                "real batch has {} rows, latents {}",
                batch.real.rows, batch.latents.rows
            )));
        }
        if batch.real.cols != self.gen.output_dim {
            return Err(Error::Shape(format!(
                "real batch dim {} vs generator output {}",
                batch.real.cols, self.gen.output_dim
            )));
        }
        if batch.latents.cols != self.gen.input_dim {
            return Err(Error::Shape(format!(
                "latent dim {} vs generator input {}",
                batch.latents.cols, self.gen.input_dim
            )));
        }
        Ok(())
    }

    /// Builds leader and follower roots on `tape`. For the saturating flavor
    /// both handles are the *same node*, which makes downstream exact
    /// cancellations observable rather than approximate.
    fn build_losses(
        &self,
        tape: &mut Tape,
        gen_p: &ParamVector,
        disc_p: &ParamVector,
        batch: &Batch,
    ) -> Result<(NodeId, NodeId)> {
        let z = tape.constant(batch.latents.clone());
        let x_real = tape.constant(batch.real.clone());
        let fake = self.gen.forward(tape, Bank::Gen, gen_p, 0, z)?;
        let s_real = self.disc.score(tape, disc_p, x_real)?;
        let s_fake = self.disc.score(tape, disc_p, fake)?;

        let pair = match self.flavor {
            Flavor::VanillaSaturating | Flavor::VanillaNonsat | Flavor::BrcRf => {
                // f = E[log σ(s_real)] + E[log(1−σ(s_fake))]
                //   = E[log σ(s_real)] + E[log σ(−s_fake)].
                let ls_real = tape.log_sigmoid(s_real);
                let m_real = tape.mean_all(ls_real);
                let neg_fake = tape.scale(s_fake, -1.0);
                let ls_neg_fake = tape.log_sigmoid(neg_fake);
                let m_neg_fake = tape.mean_all(ls_neg_fake);
                let f = tape.add(m_real, m_neg_fake)?;
                let big_f = if matches!(self.flavor, Flavor::VanillaSaturating) {
                    f
                } else {
                    // Non-saturating generator objective −E[log σ(s_fake)].
                    let ls_fake = tape.log_sigmoid(s_fake);
                    let m_fake = tape.mean_all(ls_fake);
                    tape.scale(m_fake, -1.0)
                };
                (big_f, f)
            }
            Flavor::Wgan => {
                let m_real = tape.mean_all(s_real);
                let m_fake = tape.mean_all(s_fake);
                let neg_fake = tape.scale(m_fake, -1.0);
                let f = tape.add(m_real, neg_fake)?;
                let big_f = tape.scale(m_fake, -1.0);
                (big_f, f)
            }
            Flavor::Lsgan => {
                let real_shift = tape.add_const(s_real, -1.0);
                let real_sq = tape.square(real_shift);
                let m_real = tape.mean_all(real_sq);
                let fake_sq = tape.square(s_fake);
                let m_fake = tape.mean_all(fake_sq);
                let a = tape.scale(m_real, -0.5);
                let b = tape.scale(m_fake, -0.5);
                let f = tape.add(a, b)?;
                let fake_shift = tape.add_const(s_fake, -1.0);
                let fs_sq = tape.square(fake_shift);
                let m_fs = tape.mean_all(fs_sq);
                let big_f = tape.scale(m_fs, 0.5);
                (big_f, f)
            }
        };
        Ok(pair)
    }
}

impl BilevelObjective for GanObjective {
    fn gen_len(&self) -> usize {
        self.gen.layout().total_len()
    }

    fn disc_len(&self) -> usize {
        self.disc.layout().total_len()
    }

    fn eval(
        &self,
        gen: &ParamVector,
        disc: &ParamVector,
        batch: &Batch,
        wants: Wants,
    ) -> Result<PairEval> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let (leader, follower) = self.build_losses(&mut tape, gen, disc, batch)?;
        let leader_val = tape.scalar(leader);
        let follower_val = tape.scalar(follower);
        if !leader_val.is_finite() || !follower_val.is_finite() {
            let culprit = tape
                .first_non_finite()
                .map(|(i, name)| format!("{name} (node {i})"))
                .unwrap_or_else(|| "loss reduction".into());
            return Err(Error::NonFinite(format!(
                "{} loss became non-finite at {culprit}",
                self.flavor.as_str()
            )));
        }

        let mut out = PairEval {
            leader_val,
            follower_val,
            leader_grad_gen: None,
            leader_grad_disc: None,
            follower_grad_gen: None,
            follower_grad_disc: None,
        };
        if wants.leader_gen || wants.leader_disc {
            let mut g = BankGrads::new(
                wants.leader_gen.then(|| gen.len()),
                wants.leader_disc.then(|| disc.len()),
            );
            tape.backward(leader, &mut g)?;
            out.leader_grad_gen = g.gen;
            out.leader_grad_disc = g.disc;
        }
        if wants.follower_gen || wants.follower_disc {
            let mut g = BankGrads::new(
                wants.follower_gen.then(|| gen.len()),
                wants.follower_disc.then(|| disc.len()),
            );
            tape.backward(follower, &mut g)?;
            out.follower_grad_gen = g.gen;
            out.follower_grad_disc = g.disc;
        }
        Ok(out)
    }

    fn name(&self) -> String {
        format!("gan-{}", self.flavor.as_str())
    }
}
