//! Analytic bilevel toy problems with closed-form gradients and, where it
//! exists, a closed-form best response. They exercise every trainer and
//! hypergradient estimator against pencil-and-paper oracles, with no
//! networks, batches or tapes involved.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mathx;
use crate::matrix::Matrix;
use crate::objectives::{Batch, BilevelObjective, PairEval, Wants};
use crate::params::{Layout, LayoutEntry, ParamVector};

/// Dense solve of `a x = b` by Gaussian elimination with partial pivoting.
/// Only for the tiny systems of this module; not a general solver.
fn solve_dense(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    if a.cols != n || b.len() != n {
        return Err(Error::Shape(format!(
            "solve_dense: {}x{} with rhs {}",
            a.rows,
            a.cols,
            b.len()
        )));
    }
    let mut m = a.data.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if mathx::abs(m[r * n + col]) > mathx::abs(m[piv * n + col]) {
                piv = r;
            }
        }
        if mathx::abs(m[piv * n + col]) < 1e-14 {
            return Err(Error::Solver("solve_dense: singular matrix".into()));
        }
        if piv != col {
            for cc in 0..n {
                m.swap(col * n + cc, piv * n + cc);
            }
            x.swap(col, piv);
        }
        for r in col + 1..n {
            let factor = m[r * n + col] / m[col * n + col];
            for cc in col..n {
                m[r * n + cc] -= factor * m[col * n + cc];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for cc in col + 1..n {
            s -= m[col * n + cc] * x[cc];
        }
        x[col] = s / m[col * n + col];
    }
    Ok(x)
}

fn matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows)
        .map(|i| mathx::dot(m.row(i), v))
        .collect()
}

fn matvec_t(m: &Matrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for i in 0..m.rows {
        for j in 0..m.cols {
            out[j] += m.at(i, j) * v[i];
        }
    }
    out
}

fn single_entry_layout(name: &str, len: usize) -> Arc<Layout> {
    Arc::new(Layout::new(vec![LayoutEntry::vector(name, len)]))
}

/// Quadratic bilevel problem with a closed-form best-response map:
///
/// * follower: `f(θ_G, θ_D) = −½ θ_Dᵀ A θ_D + θ_Dᵀ C θ_G` (strictly
///   concave in θ_D for SPD `A`), best response `θ_D*(θ_G) = A⁻¹ C θ_G`
///   with response Jacobian `A⁻¹C`;
/// * leader: `F = ½‖θ_G‖² + ½‖θ_D‖²`, so the exact hypergradient is
///   `θ_G + (A⁻¹C)ᵀ θ_D` and the unique bilevel minimizer is the origin.
#[derive(Debug, Clone)]
pub struct QuadraticBilevel {
    /// SPD follower curvature (negated), n×n.
    pub a: Matrix,
    /// Coupling matrix, n×m (follower dim × leader dim).
    pub c: Matrix,
}

impl QuadraticBilevel {
    pub fn new(a: Matrix, c: Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Shape(format!("a must be square, got {}x{}", a.rows, a.cols)));
        }
        if c.rows != a.rows {
            return Err(Error::Shape(format!(
                "c has {} rows but a is {}x{}",
                c.rows, a.rows, a.cols
            )));
        }
        for i in 0..a.rows {
            for j in 0..i {
                if mathx::abs(a.at(i, j) - a.at(j, i)) > 1e-12 {
                    return Err(Error::Config("a must be symmetric".into()));
                }
            }
        }
        Ok(QuadraticBilevel { a, c })
    }

    /// The instance used throughout the test suite: a hand-picked SPD 4×4
    /// (Gershgorin discs inside [1.0, 2.3]) with a 4×3 coupling.
    pub fn default_4x3() -> Self {
        let a = Matrix::from_rows(&[
            &[2.0, 0.3, 0.0, 0.0],
            &[0.3, 1.5, 0.2, 0.0],
            &[0.0, 0.2, 1.8, 0.1],
            &[0.0, 0.0, 0.1, 1.2],
        ])
        .unwrap();
        let c = Matrix::from_rows(&[
            &[0.5, -0.2, 0.1],
            &[0.3, 0.4, -0.3],
            &[-0.1, 0.2, 0.6],
            &[0.2, -0.5, 0.3],
        ])
        .unwrap();
        QuadraticBilevel::new(a, c).unwrap()
    }

    pub fn make_gen(&self, values: Vec<f64>) -> ParamVector {
        ParamVector::from_values(single_entry_layout("theta_g", self.c.cols), values).unwrap()
    }

    pub fn make_disc(&self, values: Vec<f64>) -> ParamVector {
        ParamVector::from_values(single_entry_layout("theta_d", self.a.rows), values).unwrap()
    }

    /// `θ_D*(θ_G) = A⁻¹ C θ_G`.
    pub fn analytic_best_response(&self, theta_g: &[f64]) -> Result<Vec<f64>> {
        let rhs = matvec(&self.c, theta_g);
        solve_dense(&self.a, &rhs)
    }

    /// The exact response gradient at any point: `Cᵀ A⁻¹ ∇_D F = Cᵀ A⁻¹ θ_D`.
    pub fn analytic_response_gradient(&self, theta_d: &[f64]) -> Result<Vec<f64>> {
        let b = solve_dense(&self.a, theta_d)?;
        Ok(matvec_t(&self.c, &b))
    }

    /// Direct plus response part of the leader gradient.
    pub fn analytic_total_gradient(&self, theta_g: &[f64], theta_d: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.analytic_response_gradient(theta_d)?;
        for (o, &g) in out.iter_mut().zip(theta_g) {
            *o += g;
        }
        Ok(out)
    }
}

impl BilevelObjective for QuadraticBilevel {
    fn gen_len(&self) -> usize {
        self.c.cols
    }

    fn disc_len(&self) -> usize {
        self.a.rows
    }

    fn eval(
        &self,
        gen: &ParamVector,
        disc: &ParamVector,
        _batch: &Batch,
        wants: Wants,
    ) -> Result<PairEval> {
        let g = &gen.values;
        let d = &disc.values;
        let ad = matvec(&self.a, d);
        let cg = matvec(&self.c, g);
        let f = -0.5 * mathx::dot(d, &ad) + mathx::dot(d, &cg);
        let big_f = 0.5 * mathx::dot(g, g) + 0.5 * mathx::dot(d, d);
        Ok(PairEval {
            leader_val: big_f,
            follower_val: f,
            leader_grad_gen: wants.leader_gen.then(|| g.clone()),
            leader_grad_disc: wants.leader_disc.then(|| d.clone()),
            follower_grad_gen: wants.follower_gen.then(|| matvec_t(&self.c, d)),
            follower_grad_disc: wants
                .follower_disc
                .then(|| ad.iter().zip(&cg).map(|(&a, &c)| -a + c).collect()),
        })
    }

    fn name(&self) -> String {
        "quadratic-bilevel".into()
    }
}

/// Consensus toy: the follower copies the leader, the leader wants `c`.
///
/// `f = −½‖θ_D − θ_G‖²`, `F = ½‖θ_G − c‖² + ½‖θ_D − c‖²`. Best response
/// `θ_D* = θ_G`, value function `‖θ_G − c‖²`, minimizer `θ_G* = c`.
#[derive(Debug, Clone)]
pub struct ConsensusToy {
    pub c: Vec<f64>,
}

impl ConsensusToy {
    pub fn make_gen(&self, values: Vec<f64>) -> ParamVector {
        ParamVector::from_values(single_entry_layout("theta_g", self.c.len()), values).unwrap()
    }

    pub fn make_disc(&self, values: Vec<f64>) -> ParamVector {
        ParamVector::from_values(single_entry_layout("theta_d", self.c.len()), values).unwrap()
    }
}

impl BilevelObjective for ConsensusToy {
    fn gen_len(&self) -> usize {
        self.c.len()
    }

    fn disc_len(&self) -> usize {
        self.c.len()
    }

    fn eval(
        &self,
        gen: &ParamVector,
        disc: &ParamVector,
        _batch: &Batch,
        wants: Wants,
    ) -> Result<PairEval> {
        let g = &gen.values;
        let d = &disc.values;
        let gap: Vec<f64> = d.iter().zip(g).map(|(&di, &gi)| di - gi).collect();
        let to_c_g: Vec<f64> = g.iter().zip(&self.c).map(|(&gi, &ci)| gi - ci).collect();
        let to_c_d: Vec<f64> = d.iter().zip(&self.c).map(|(&di, &ci)| di - ci).collect();
        let f = -0.5 * mathx::dot(&gap, &gap);
        let big_f = 0.5 * mathx::dot(&to_c_g, &to_c_g) + 0.5 * mathx::dot(&to_c_d, &to_c_d);
        Ok(PairEval {
            leader_val: big_f,
            follower_val: f,
            leader_grad_gen: wants.leader_gen.then(|| to_c_g.clone()),
            leader_grad_disc: wants.leader_disc.then(|| to_c_d.clone()),
            follower_grad_gen: wants.follower_gen.then(|| gap.clone()),
            follower_grad_disc: wants
                .follower_disc
                .then(|| gap.iter().map(|&x| -x).collect()),
        })
    }

    fn name(&self) -> String {
        "consensus".into()
    }
}

/// One-dimensional point-mass GAN: real data is a point mass at the origin,
/// the generator emits the single point `θ`, the discriminator is the
/// linear score `ψ·x`. With the non-saturating leader loss:
///
/// `f(θ, ψ) = log σ(0) + log σ(−ψθ)`, `F(θ, ψ) = −log σ(ψθ)`.
///
/// The unique equilibrium is `(θ, ψ) = (0, 0)`; simultaneous-gradient
/// training is known to orbit it instead of converging, which is what the
/// baseline-failure tests assert.
#[derive(Debug, Clone, Default)]
pub struct DiracToy;

impl DiracToy {
    pub fn make_gen(&self, theta: f64) -> ParamVector {
        ParamVector::from_values(single_entry_layout("theta", 1), vec![theta]).unwrap()
    }

    pub fn make_disc(&self, psi: f64) -> ParamVector {
        ParamVector::from_values(single_entry_layout("psi", 1), vec![psi]).unwrap()
    }
}

impl BilevelObjective for DiracToy {
    fn gen_len(&self) -> usize {
        1
    }

    fn disc_len(&self) -> usize {
        1
    }

    fn eval(
        &self,
        gen: &ParamVector,
        disc: &ParamVector,
        _batch: &Batch,
        wants: Wants,
    ) -> Result<PairEval> {
        let theta = gen.values[0];
        let psi = disc.values[0];
        let s = psi * theta;
        let f = mathx::log_sigmoid(0.0) + mathx::log_sigmoid(-s);
        let big_f = -mathx::log_sigmoid(s);
        // d/du log σ(u) = σ(−u).
        let d_f_ds = -mathx::sigmoid(s);
        let d_big_f_ds = -mathx::sigmoid(-s);
        Ok(PairEval {
            leader_val: big_f,
            follower_val: f,
            leader_grad_gen: wants.leader_gen.then(|| vec![d_big_f_ds * psi]),
            leader_grad_disc: wants.leader_disc.then(|| vec![d_big_f_ds * theta]),
            follower_grad_gen: wants.follower_gen.then(|| vec![d_f_ds * psi]),
            follower_grad_disc: wants.follower_disc.then(|| vec![d_f_ds * theta]),
        })
    }

    fn name(&self) -> String {
        "dirac".into()
    }
}
