//! Exact joint Bellman operators and their fixed-point iterations.
//!
//! Continuations of distinct branches are independent given their successors:
//! a second-moment coordinate for `x != y` backs up through the product of the
//! successor means, while the diagonal backs up through the successor's own
//! second moment. Branches at the same state share one noise draw.
//!
//! The fixed-point iterations carry their iterates in double-double precision so
//! that residuals stay meaningful well below the f64 rounding level of the
//! moments themselves; results are returned in f64.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use twofloat::TwoFloat;

use crate::env::{marginal_mdp, ExoJmdp, Policy};
use crate::error::{Error, Result};
use crate::moments::{
    decode, encode, lambda_distance, lambda_distance_n, LambdaWeights, MomentCollection2,
    MomentCollectionN,
};
use crate::real::{max_abs_diff, Real};
use crate::space::Index2;

/// Default cap on the size of one order-n moment collection, in bytes.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

fn check_dims(env: &ExoJmdp, policy: &Policy, nx: usize) -> Result<()> {
    policy.check_compatible(env)?;
    if nx != env.space().len() {
        return Err(Error::InvalidInput(format!(
            "moment collection has |X| = {nx}, environment has {}",
            env.space().len()
        )));
    }
    Ok(())
}

/// pi-averaged value of a per-x table at each state.
fn state_average<R: Real>(policy: &Policy, table: impl Fn(usize) -> R, na: usize, ns: usize) -> Vec<R> {
    (0..ns)
        .map(|s| {
            (0..na).fold(R::zero(), |acc, a| {
                acc + R::from_f64(policy.prob(s, a)) * table(s * na + a)
            })
        })
        .collect()
}

struct Continuation<R> {
    /// sum_a pi(a|s) M_mu(s, a)
    v: Vec<R>,
    /// sum_a pi(a|s) M_sigma((s, a), (s, a))
    w: Vec<R>,
}

impl<R: Real> Continuation<R> {
    fn new(env: &ExoJmdp, policy: &Policy, mu: &[R], sigma: &[R]) -> Self {
        let (ns, na) = (env.num_states(), env.num_actions());
        let nx = mu.len();
        Self {
            v: state_average(policy, |x| mu[x], na, ns),
            w: state_average(policy, |x| sigma[x * nx + x], na, ns),
        }
    }

    #[inline]
    fn branch(&self, env: &ExoJmdp, s: usize, a: usize, u: usize) -> R {
        R::from_f64(env.g(s, a, u)) + R::from_f64(env.gamma()) * self.v[env.h(s, a, u)]
    }

    fn mean(&self, env: &ExoJmdp, s: usize, a: usize) -> R {
        env.noise()
            .probs()
            .iter()
            .enumerate()
            .fold(R::zero(), |acc, (u, &p)| acc + R::from_f64(p) * self.branch(env, s, a, u))
    }

    fn same_state(&self, env: &ExoJmdp, s: usize, a: usize, b: usize) -> R {
        let gamma = R::from_f64(env.gamma());
        let two = R::from_f64(2.0);
        let probs = env.noise().probs();
        if a == b {
            probs.iter().enumerate().fold(R::zero(), |acc, (u, &p)| {
                let (r, sp) = (R::from_f64(env.g(s, a, u)), env.h(s, a, u));
                let term = r * r + two * gamma * r * self.v[sp] + gamma * gamma * self.w[sp];
                acc + R::from_f64(p) * term
            })
        } else {
            probs.iter().enumerate().fold(R::zero(), |acc, (u, &p)| {
                let prod = self.branch(env, s, a, u) * self.branch(env, s, b, u);
                acc + R::from_f64(p) * prod
            })
        }
    }
}

fn t2_tables<R: Real>(env: &ExoJmdp, policy: &Policy, mu: &[R], sigma: &[R]) -> (Vec<R>, Vec<R>) {
    let space = env.space();
    let nx = space.len();
    let cont = Continuation::new(env, policy, mu, sigma);
    let new_mu: Vec<R> = (0..nx)
        .map(|x| {
            let (s, a) = space.sa(x);
            cont.mean(env, s, a)
        })
        .collect();
    let mut new_sigma = vec![R::zero(); nx * nx];
    for x in 0..nx {
        let (s, a) = space.sa(x);
        for y in x..nx {
            let (t, b) = space.sa(y);
            let v = if s == t {
                cont.same_state(env, s, a, b)
            } else {
                new_mu[x] * new_mu[y]
            };
            new_sigma[x * nx + y] = v;
            new_sigma[y * nx + x] = v;
        }
    }
    (new_mu, new_sigma)
}

/// One application of the second-order joint Bellman operator.
pub fn apply_t2(env: &ExoJmdp, policy: &Policy, m: &MomentCollection2) -> Result<MomentCollection2> {
    check_dims(env, policy, m.nx())?;
    let (mu, sigma) = t2_tables(env, policy, m.mu(), m.sigma());
    Ok(MomentCollection2::from_parts(mu, sigma))
}

/// A single coordinate of `apply_t2(env, policy, m)`.
pub fn t2_coordinate(env: &ExoJmdp, policy: &Policy, m: &MomentCollection2, idx: Index2) -> Result<f64> {
    check_dims(env, policy, m.nx())?;
    let space = env.space();
    let cont = Continuation::new(env, policy, m.mu(), m.sigma());
    let check = |x: usize| {
        if x >= space.len() {
            Err(Error::InvalidQuery(format!("coordinate {x} out of range")))
        } else {
            Ok(space.sa(x))
        }
    };
    Ok(match idx {
        Index2::Mu(x) => {
            let (s, a) = check(x)?;
            cont.mean(env, s, a)
        }
        Index2::Sigma(x, y) => {
            let ((s, a), (t, b)) = (check(x)?, check(y)?);
            if s == t {
                cont.same_state(env, s, a, b)
            } else {
                cont.mean(env, s, a) * cont.mean(env, t, b)
            }
        }
    })
}

/// One row of a residual trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualRecord {
    pub iteration: usize,
    pub residual: f64,
    pub certified_bound: f64,
}

/// Outcome of a fixed-point iteration with a residual certificate.
#[derive(Clone, Debug)]
pub struct JipeReport<M> {
    /// The last iterate m_k, rounded to f64. Its residual is the last trace entry.
    pub final_moments: M,
    pub residual_trace: Vec<ResidualRecord>,
    /// Number of operator applications that produced `final_moments`.
    pub iterations: usize,
    pub certified: bool,
    /// last residual / (1 - gamma)
    pub certified_error_bound: f64,
    /// lambda-norm distance between `final_moments` and the extended-precision
    /// iterate the certificate refers to.
    pub rounding_error: f64,
}

pub type Jipe2Report = JipeReport<MomentCollection2>;
pub type JipeNReport = JipeReport<MomentCollectionN>;

/// Runs `m <- op(m)` with residuals from `dist`, stopping on certificate or budget.
/// Returns the report over the working representation `M`.
fn iterate<M>(
    gamma: f64,
    epsilon: f64,
    max_iter: usize,
    m0: M,
    mut op: impl FnMut(&M) -> Result<M>,
    mut dist: impl FnMut(&M, &M) -> Result<f64>,
    mut observe: impl FnMut(usize, &M, f64),
) -> Result<JipeReport<M>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be > 0, got {epsilon}")));
    }
    let stop = epsilon * (1.0 - gamma);
    let mut m = m0;
    let mut trace = Vec::new();
    for k in 0.. {
        let tm = op(&m)?;
        let r = dist(&m, &tm)?;
        let bound = r / (1.0 - gamma);
        trace.push(ResidualRecord {
            iteration: k,
            residual: r,
            certified_bound: bound,
        });
        observe(k, &m, r);
        let certified = r <= stop;
        if certified || k >= max_iter {
            return Ok(JipeReport {
                final_moments: m,
                residual_trace: trace,
                iterations: k,
                certified,
                certified_error_bound: bound,
                rounding_error: 0.0,
            });
        }
        m = tm;
    }
    unreachable!()
}

type Dd2 = (Vec<TwoFloat>, Vec<TwoFloat>);

fn to_dd(v: &[f64]) -> Vec<TwoFloat> {
    v.iter().map(|&x| TwoFloat::from(x)).collect()
}

fn round_dd(v: &[TwoFloat]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64()).collect()
}

fn non_finite() -> Error {
    Error::InvalidInput("iteration produced a non-finite moment".into())
}

fn dd2_distance(a: &Dd2, b: &Dd2, lambda: f64) -> Result<f64> {
    let dm = max_abs_diff(&a.0, &b.0).ok_or_else(non_finite)?;
    let ds = max_abs_diff(&a.1, &b.1).ok_or_else(non_finite)?;
    Ok(dm.max(ds / lambda))
}

/// Iterates `m <- T m` from `m0` until `||m - T m||_lambda <= epsilon (1 - gamma)`,
/// which certifies `||m - M*||_lambda <= epsilon`. Stops uncertified after
/// `max_iter` applications.
pub fn jipe2(
    env: &ExoJmdp,
    policy: &Policy,
    epsilon: f64,
    max_iter: usize,
    m0: &MomentCollection2,
) -> Result<Jipe2Report> {
    iterate2(env, policy, epsilon, max_iter, m0, None)
}

/// [`jipe2`] with a callback receiving `(k, m_k, residual_k)` at every iterate,
/// with `m_k` rounded to f64.
pub fn jipe2_observe(
    env: &ExoJmdp,
    policy: &Policy,
    epsilon: f64,
    max_iter: usize,
    m0: &MomentCollection2,
    mut observe: impl FnMut(usize, &MomentCollection2, f64),
) -> Result<Jipe2Report> {
    iterate2(env, policy, epsilon, max_iter, m0, Some(&mut observe))
}

fn iterate2(
    env: &ExoJmdp,
    policy: &Policy,
    epsilon: f64,
    max_iter: usize,
    m0: &MomentCollection2,
    mut observe: Option<&mut dyn FnMut(usize, &MomentCollection2, f64)>,
) -> Result<Jipe2Report> {
    check_dims(env, policy, m0.nx())?;
    let w = LambdaWeights::new(env.gamma())?;
    let lambda = w.lambda();
    let rep = iterate(
        env.gamma(),
        epsilon,
        max_iter,
        (to_dd(m0.mu()), to_dd(m0.sigma())),
        |m: &Dd2| Ok(t2_tables(env, policy, &m.0, &m.1)),
        |a, b| dd2_distance(a, b, lambda),
        |k, m, r| {
            if let Some(f) = observe.as_mut() {
                f(k, &MomentCollection2::from_parts(round_dd(&m.0), round_dd(&m.1)), r);
            }
        },
    )?;
    let (mu, sigma) = &rep.final_moments;
    let rounded = MomentCollection2::from_parts(round_dd(mu), round_dd(sigma));
    let rounding_error = dd2_distance(&(to_dd(rounded.mu()), to_dd(rounded.sigma())), &rep.final_moments, lambda)?;
    Ok(JipeReport {
        final_moments: rounded,
        residual_trace: rep.residual_trace,
        iterations: rep.iterations,
        certified: rep.certified,
        certified_error_bound: rep.certified_error_bound,
        rounding_error,
    })
}

/// Bytes needed to hold one order-`n` collection over `nx` coordinates.
pub fn tn_memory_bytes(nx: usize, n: usize) -> Option<usize> {
    let mut total = 0usize;
    let mut size = 1usize;
    for _ in 0..n {
        size = size.checked_mul(nx)?;
        total = total.checked_add(size)?;
    }
    total.checked_mul(std::mem::size_of::<f64>())
}

fn check_budget(nx: usize, n: usize, budget: usize) -> Result<()> {
    match tn_memory_bytes(nx, n) {
        Some(b) if b <= budget => Ok(()),
        Some(b) => Err(Error::SizeLimit(format!(
            "order-{n} moments over |X| = {nx} need {b} bytes, budget is {budget}"
        ))),
        None => Err(Error::SizeLimit(format!(
            "order-{n} moments over |X| = {nx} overflow the address space"
        ))),
    }
}

fn binomial_rows(n: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![1.0]];
    for m in 1..=n {
        let prev = &rows[m - 1];
        let mut row = vec![1.0; m + 1];
        for j in 1..m {
            row[j] = prev[j - 1] + prev[j];
        }
        rows.push(row);
    }
    rows
}

fn tn_tables<R: Real>(env: &ExoJmdp, policy: &Policy, nx: usize, tables: &[Vec<R>]) -> Vec<Vec<R>> {
    let n = tables.len();
    let space = env.space();
    let (ns, na) = (space.num_states(), space.num_actions());
    let gamma = env.gamma();
    let probs = env.noise().probs();

    // diag[j][s] = sum_a pi(a|s) M^(j)(x, ..., x), diag[0] = 1.
    let mut diag = vec![vec![R::from_f64(1.0); ns]];
    for j in 1..=n {
        let t = &tables[j - 1];
        diag.push(state_average(policy, |x| t[encode(&vec![x; j], nx)], na, ns));
    }
    let binom = binomial_rows(n);
    let gamma_pow: Vec<R> = (0..=n).map(|j| R::from_f64(gamma).powi(j as i32)).collect();

    let class_factor = |s: usize, a: usize, mult: usize, u: usize| -> R {
        let (r, sp) = (R::from_f64(env.g(s, a, u)), env.h(s, a, u));
        (0..=mult).fold(R::zero(), |acc, j| {
            acc + R::from_f64(binom[mult][j]) * r.powi((mult - j) as i32) * gamma_pow[j] * diag[j][sp]
        })
    };

    let tuple_value = |sorted: &[usize]| -> R {
        let mut total = R::from_f64(1.0);
        let mut i = 0;
        while i < sorted.len() {
            let s = space.state_of(sorted[i]);
            let mut classes: Vec<(usize, usize)> = Vec::new();
            while i < sorted.len() && space.state_of(sorted[i]) == s {
                let a = space.sa(sorted[i]).1;
                match classes.last_mut() {
                    Some((last, mult)) if *last == a => *mult += 1,
                    _ => classes.push((a, 1)),
                }
                i += 1;
            }
            let group = probs.iter().enumerate().fold(R::zero(), |acc, (u, &p)| {
                let prod = classes
                    .iter()
                    .fold(R::from_f64(1.0), |q, &(a, mult)| q * class_factor(s, a, mult, u));
                acc + R::from_f64(p) * prod
            });
            total = total * group;
        }
        total
    };

    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        let size = nx.pow(k as u32);
        let mut t = vec![R::zero(); size];
        let mut coords = vec![0usize; k];
        for flat in 0..size {
            decode(flat, nx, &mut coords);
            coords.sort_unstable();
            let canon = encode(&coords, nx);
            // The sorted permutation has the smallest flat index, so it is already filled.
            t[flat] = if canon == flat {
                tuple_value(&coords)
            } else {
                t[canon]
            };
        }
        out.push(t);
    }
    out
}

/// One application of the order-n joint Bellman operator.
///
/// A tuple is split into groups sharing a current state; each group draws one
/// noise value, groups are independent. Repeated coordinates are one branch, so
/// a class of multiplicity `m` contributes `E[(R + gamma Z')^m]` expanded
/// binomially over the pi-averaged diagonal moments of the successor.
pub fn apply_tn(
    env: &ExoJmdp,
    policy: &Policy,
    m: &MomentCollectionN,
    memory_budget: usize,
) -> Result<MomentCollectionN> {
    check_dims(env, policy, m.nx())?;
    check_budget(m.nx(), m.order(), memory_budget)?;
    Ok(MomentCollectionN::from_tables(
        m.nx(),
        tn_tables(env, policy, m.nx(), m.tables()),
    ))
}

fn ddn_distance(a: &[Vec<TwoFloat>], b: &[Vec<TwoFloat>], w: &LambdaWeights) -> Result<f64> {
    let mut out = 0.0f64;
    for (k, (p, q)) in a.iter().zip(b).enumerate() {
        out = out.max(max_abs_diff(p, q).ok_or_else(non_finite)? / w.lambda_k(k + 1));
    }
    Ok(out)
}

/// Order-n analogue of [`jipe2`]; starts from zero when `m0` is `None`.
pub fn jipe_n(
    env: &ExoJmdp,
    policy: &Policy,
    n: usize,
    epsilon: f64,
    max_iter: usize,
    m0: Option<&MomentCollectionN>,
    memory_budget: usize,
) -> Result<JipeNReport> {
    if n == 0 {
        return Err(Error::InvalidInput("order must be at least 1".into()));
    }
    let nx = env.space().len();
    check_dims(env, policy, nx)?;
    // The double-double working copy needs twice the f64 footprint.
    check_budget(nx, n, memory_budget / 2)?;
    let start: Vec<Vec<TwoFloat>> = match m0 {
        Some(m) if m.order() != n || m.nx() != nx => {
            return Err(Error::InvalidInput(format!(
                "initial collection has order {} over |X| = {}, expected order {n} over {nx}",
                m.order(),
                m.nx()
            )))
        }
        Some(m) => m.tables().iter().map(|t| to_dd(t)).collect(),
        None => (1..=n).map(|k| vec![TwoFloat::from(0.0); nx.pow(k as u32)]).collect(),
    };
    let w = LambdaWeights::new(env.gamma())?;
    let rep = iterate(
        env.gamma(),
        epsilon,
        max_iter,
        start,
        |m: &Vec<Vec<TwoFloat>>| Ok(tn_tables(env, policy, nx, m)),
        |a, b| ddn_distance(a, b, &w),
        |_, _, _| {},
    )?;
    let rounded: Vec<Vec<f64>> = rep.final_moments.iter().map(|t| round_dd(t)).collect();
    let back: Vec<Vec<TwoFloat>> = rounded.iter().map(|t| to_dd(t)).collect();
    let rounding_error = ddn_distance(&back, &rep.final_moments, &w)?;
    Ok(JipeReport {
        final_moments: MomentCollectionN::from_tables(nx, rounded),
        residual_trace: rep.residual_trace,
        iterations: rep.iterations,
        certified: rep.certified,
        certified_error_bound: rep.certified_error_bound,
        rounding_error,
    })
}

/// Plain f64 residual `||m - T m||_lambda`.
pub fn residual2(env: &ExoJmdp, policy: &Policy, m: &MomentCollection2) -> Result<f64> {
    lambda_distance(m, &apply_t2(env, policy, m)?, &LambdaWeights::new(env.gamma())?)
}

/// Plain f64 residual for order-n collections.
pub fn residual_n(env: &ExoJmdp, policy: &Policy, m: &MomentCollectionN, memory_budget: usize) -> Result<f64> {
    let tm = apply_tn(env, policy, m, memory_budget)?;
    lambda_distance_n(m, &tm, &LambdaWeights::new(env.gamma())?)
}

/// Classical policy evaluation of the marginal MDP: solves `(I - gamma P^pi) q = r`.
pub fn solve_mean_linear(env: &ExoJmdp, policy: &Policy) -> Result<Vec<f64>> {
    policy.check_compatible(env)?;
    let mdp = marginal_mdp(env);
    let nx = env.space().len();
    let k = mdp.state_action_kernel(policy);
    let gamma = env.gamma();
    let a = DMatrix::from_fn(nx, nx, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * k[i * nx + j]
    });
    let b = DVector::from_vec(mdp.reward_mean.clone());
    a.lu()
        .solve(&b)
        .map(|q| q.iter().copied().collect())
        .ok_or_else(|| Error::InvalidInput("policy evaluation system is singular".into()))
}

/// Writes a residual trace with columns `iteration,residual_lambda,certified_bound`.
pub fn write_residual_csv<W: Write>(trace: &[ResidualRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "residual_lambda", "certified_bound"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.residual.to_string(),
            r.certified_bound.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_residual_csv(trace: &[ResidualRecord], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_residual_csv(trace, std::io::BufWriter::new(f))
}
