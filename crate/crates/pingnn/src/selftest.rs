//! Invariant suites run by the `selftest` command and reused by the
//! acceptance tests.

use pingnn_core::gnn::{Adjacency, Encoder, EncoderConfig};
use pingnn_core::maf::{Flow, FlowConfig};
use pingnn_core::metrics::{kde, mre_stats, nrmse, r2, smape};
use pingnn_core::model::{gradient_check, Head, Model, ModelConfig};
use pingnn_core::rng::{CounterRng, Domain};
use pingnn_core::target::{HeadKind, HeadSpec, TargetSpec};
use pingnn_core::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub failed: usize,
    /// Largest observed deviation from the oracle.
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    fn new(name: &str, tolerance: f64) -> Self {
        Self { name: name.into(), cases: 0, failed: 0, worst: 0.0, tolerance }
    }

    fn record(&mut self, deviation: f64) {
        self.cases += 1;
        if !(deviation <= self.tolerance) {
            self.failed += 1;
        }
        if deviation.is_nan() || deviation > self.worst {
            self.worst = deviation;
        }
    }

    pub fn passed(&self) -> bool {
        self.failed == 0 && self.cases > 0
    }
}

/// Puts random values into every unmasked weight of the last conditioner
/// layer (the one zeroed at initialization) so the flow is far from identity.
pub fn perturb_flow<T: Scalar>(flow: &mut Flow<T>, rng: &mut CounterRng, scale: f64) {
    for block in &mut flow.blocks {
        let l = &mut block.l3;
        let mask = l.mask.clone();
        for (i, w) in l.weight.iter_mut().enumerate() {
            if mask.as_ref().is_none_or(|m| m[i]) {
                *w = T::lit(rng.uniform_in(-scale, scale));
            }
        }
        for b in &mut l.bias {
            *b = T::lit(rng.uniform_in(-scale, scale));
        }
    }
}

/// A random connected graph: a random spanning tree plus up to `n` extra edges.
pub fn random_graph(n: usize, rng: &mut CounterRng) -> Vec<(u32, u32)> {
    let mut edges: Vec<(u32, u32)> = (1..n as u32).map(|v| (rng.below(v as u64) as u32, v)).collect();
    for _ in 0..n {
        let (a, b) = (rng.below(n as u64) as u32, rng.below(n as u64) as u32);
        if a != b {
            edges.push((a.min(b), a.max(b)));
        }
    }
    edges
}

/// Maximum `|y − inverse(forward(y))|` over random pairs on a perturbed
/// 32-bit scalar flow with the default block count and width.
pub fn flow_round_trip(cases: usize, seed: u64) -> SuiteResult {
    let context = 16;
    let mut rng = CounterRng::new(seed, Domain::Test, 10);
    let mut flow = Flow::<f32>::init(FlowConfig::scalar(context), &mut rng);
    perturb_flow(&mut flow, &mut rng, 0.02);
    let mut out = SuiteResult::new("flow round trip", 1e-5);
    for _ in 0..cases {
        let h: Vec<f32> = (0..context).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect();
        let y = [(2.0 * rng.normal()) as f32];
        let dev = match flow.forward(&y, &h).and_then(|(z, _)| flow.inverse(&z, &h)) {
            Ok(back) => (back[0] - y[0]).abs() as f64,
            Err(_) => f64::INFINITY,
        };
        out.record(dev);
    }
    out
}

/// `|∫ p(y|h) dy − 1|` by the trapezoid rule over `[−12, 12]` with step
/// `1e-3`, for `draws` random parameter sets and `contexts` contexts each.
pub fn density_normalization(draws: usize, contexts: usize, seed: u64) -> SuiteResult {
    let context = 8;
    let mut out = SuiteResult::new("density normalization", 1e-3);
    let steps = 24_000usize;
    let dx = 24.0 / steps as f64;
    for d in 0..draws {
        let mut rng = CounterRng::new(seed, Domain::Test, 100 + d as u64);
        let mut flow =
            Flow::<f64>::init(FlowConfig { dim: 1, context, blocks: 10, hidden: 32 }, &mut rng);
        perturb_flow(&mut flow, &mut rng, 0.05);
        for _ in 0..contexts {
            let h: Vec<f64> = (0..context).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let Ok(cond) = flow.condition(&h) else {
                out.record(f64::INFINITY);
                continue;
            };
            let probe = rng.uniform_in(-3.0, 3.0);
            let direct = flow.log_prob(&[probe], &h).unwrap_or(f64::NAN);
            if (direct - cond.log_prob(probe)).abs() > 1e-9 {
                out.record(f64::INFINITY);
                continue;
            }
            let f = |i: usize| cond.log_prob(-12.0 + dx * i as f64).exp();
            let mut integral = 0.5 * (f(0) + f(steps));
            for i in 1..steps {
                integral += f(i);
            }
            out.record((integral * dx - 1.0).abs());
        }
    }
    out
}

/// `|logdet − log|det J||` for a random 3-dimensional flow, with `J` from
/// central finite differences.
pub fn jacobian_check(cases: usize, seed: u64) -> SuiteResult {
    let context = 4;
    let mut out = SuiteResult::new("triangular Jacobian (D=3)", 1e-4);
    for c in 0..cases {
        let mut rng = CounterRng::new(seed, Domain::Test, 1000 + c as u64);
        let mut flow = Flow::<f64>::init(FlowConfig { dim: 3, context, blocks: 3, hidden: 16 }, &mut rng);
        perturb_flow(&mut flow, &mut rng, 0.3);
        let h: Vec<f64> = (0..context).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let Ok((_, logdet)) = flow.forward(&y, &h) else {
            out.record(f64::INFINITY);
            continue;
        };
        let eps = 1e-5;
        let mut j = [[0.0; 3]; 3];
        for col in 0..3 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[col] += eps;
            ym[col] -= eps;
            let zp = flow.forward(&yp, &h).unwrap().0;
            let zm = flow.forward(&ym, &h).unwrap().0;
            for row in 0..3 {
                j[row][col] = (zp[row] - zm[row]) / (2.0 * eps);
            }
        }
        let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        out.record((det.abs().ln() - logdet).abs());
    }
    out
}

fn gradient_targets() -> TargetSpec {
    TargetSpec::new(vec![
        HeadSpec::new("det", "", HeadKind::Deterministic),
        HeadSpec::new("prob", "", HeadKind::Probabilistic),
    ])
    .expect("two distinct heads")
}

/// Maximum relative gradient deviation of a small 64-bit model with both
/// head kinds on a random graph of `n` nodes.
pub fn gradient_case(seed: u64, n: usize) -> f64 {
    let d = 3;
    let cfg = ModelConfig { hidden: 4, layers: 2, flow_blocks: 2, flow_hidden: 4 };
    let mut m = Model::<f64>::init(cfg, d, gradient_targets(), seed);
    let mut rng = CounterRng::new(seed, Domain::Test, 1);
    for head in &mut m.heads {
        match head {
            Head::Deterministic(l) => {
                for w in l.weight.iter_mut().chain(&mut l.bias) {
                    *w = rng.uniform_in(-0.5, 0.5);
                }
            }
            Head::Probabilistic(f) => perturb_flow(f, &mut rng, 0.5),
        }
    }
    for layer in &mut m.encoder.layers {
        layer.log_tau = rng.uniform_in(-0.3, 0.3);
    }
    let mut rng = CounterRng::new(seed, Domain::Test, 2);
    let edges = random_graph(n, &mut rng);
    let adj = Adjacency::new(n, &edges).expect("connected graph");
    let x: Vec<f64> = (0..n * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let y = [Some(rng.normal()), Some(rng.normal())];
    gradient_check(&m, &x, &adj, &y, &[1.0, 1.0]).unwrap_or(f64::INFINITY)
}

pub fn gradient_suite(seeds: impl IntoIterator<Item = u64>, nodes: usize) -> SuiteResult {
    let mut out = SuiteResult::new("gradient check (f64, MSE+NLL)", 1e-5);
    for s in seeds {
        out.record(gradient_case(s, nodes));
    }
    out
}

/// `max |encode(π·g) − encode(g)|` for random 32-bit graphs and permutations.
pub fn permutation_invariance(graphs: usize, seed: u64) -> SuiteResult {
    let d = 7;
    let mut rng = CounterRng::new(seed, Domain::Test, 20);
    let enc = Encoder::<f32>::init(EncoderConfig { in_dim: d, hidden: 128, layers: 4 }, &mut rng);
    let mut out = SuiteResult::new("permutation invariance (f32)", 1e-5);
    for _ in 0..graphs {
        let n = 2 + rng.below(20) as usize;
        let edges = random_graph(n, &mut rng);
        let x: Vec<f32> = (0..n * d).map(|_| rng.uniform() as f32).collect();
        let mut perm: Vec<u32> = (0..n as u32).collect();
        rng.shuffle(&mut perm);
        let pedges: Vec<(u32, u32)> = edges
            .iter()
            .map(|&(a, b)| {
                let (pa, pb) = (perm[a as usize], perm[b as usize]);
                (pa.min(pb), pa.max(pb))
            })
            .collect();
        let mut px = vec![0f32; n * d];
        for v in 0..n {
            let p = perm[v] as usize;
            px[p * d..(p + 1) * d].copy_from_slice(&x[v * d..(v + 1) * d]);
        }
        let a = Adjacency::new(n, &edges).and_then(|adj| enc.encode(&x, &adj));
        let b = Adjacency::new(n, &pedges).and_then(|adj| enc.encode(&px, &adj));
        let dev = match (a, b) {
            (Ok(a), Ok(b)) => a.iter().zip(&b).map(|(p, q)| (p - q).abs() as f64).fold(0.0, f64::max),
            _ => f64::INFINITY,
        };
        out.record(dev);
    }
    out
}

/// On the path a–b–c–d–e with the default depth of four layers, perturbing
/// e changes a's layer-k state exactly when `k ≥ 4`. Each layer index is one
/// case; a case deviates by 1 when the property fails.
///
/// Deeper stacks do not keep the property for every `k > 4`: neighbourhoods
/// exclude the node itself and the target-side score term cancels in the
/// softmax, so layer k sees exactly the walks of length k, and a path graph
/// is bipartite.
pub fn receptive_field(seed: u64) -> SuiteResult {
    let (n, d, layers) = (5, 3, 4);
    let mut rng = CounterRng::new(seed, Domain::Test, 30);
    let enc = Encoder::<f64>::init(EncoderConfig { in_dim: d, hidden: 16, layers }, &mut rng);
    let adj = Adjacency::new(n, &[(0, 1), (1, 2), (2, 3), (3, 4)]).expect("path graph");
    let x: Vec<f64> = (0..n * d).map(|_| rng.uniform()).collect();
    let mut xp = x.clone();
    for v in &mut xp[4 * d..] {
        *v += 0.5;
    }
    let a = enc.forward(&x, &adj).expect("path graph encodes");
    let b = enc.forward(&xp, &adj).expect("path graph encodes");
    let hid = enc.hidden();
    let mut out = SuiteResult::new("receptive field (5-node path)", 0.0);
    for k in 0..=layers {
        let changed = a.hidden[k][..hid] != b.hidden[k][..hid];
        out.record(if changed == (k >= 4) { 0.0 } else { 1.0 });
    }
    out
}

/// Zeroing the message output map of layer ℓ makes that layer's output
/// exactly zero.
pub fn no_residual(seed: u64) -> SuiteResult {
    let (n, d, layers) = (4, 3, 4);
    let mut out = SuiteResult::new("no residual path", 0.0);
    for l in 0..layers {
        let mut rng = CounterRng::new(seed, Domain::Test, 40 + l as u64);
        let mut enc = Encoder::<f64>::init(EncoderConfig { in_dim: d, hidden: 8, layers }, &mut rng);
        let m = &mut enc.layers[l].msg_out;
        m.weight.iter_mut().chain(&mut m.bias).for_each(|w| *w = 0.0);
        let adj = Adjacency::new(n, &[(0, 1), (1, 2), (1, 3)]).expect("star graph");
        let x: Vec<f64> = (0..n * d).map(|_| rng.uniform()).collect();
        let cache = enc.forward(&x, &adj).expect("graph encodes");
        out.record(cache.hidden[l + 1].iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    out
}

mod brute {
    pub fn r2(y: &[f64], p: &[f64]) -> f64 {
        let n = y.len() as f64;
        let mut mean = 0.0;
        for v in y {
            mean += v / n;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..y.len() {
            num += (y[i] - p[i]).powi(2);
            den += (y[i] - mean).powi(2);
        }
        1.0 - num / den
    }

    fn interp(sorted: &[f64], q: f64) -> f64 {
        let pos = q * (sorted.len() as f64 - 1.0);
        let i = pos.floor() as usize;
        if i + 1 >= sorted.len() {
            return sorted[i];
        }
        sorted[i] * (1.0 - (pos - i as f64)) + sorted[i + 1] * (pos - i as f64)
    }

    /// avg, p75, p90, frac<2%, frac<5%, frac>20%.
    pub fn mre(y: &[f64], p: &[f64]) -> [f64; 6] {
        let mut e = Vec::new();
        for i in 0..y.len() {
            if y[i] != 0.0 {
                e.push(((y[i] - p[i]) / y[i]).abs());
            }
        }
        for i in 1..e.len() {
            let mut j = i;
            while j > 0 && e[j - 1] > e[j] {
                e.swap(j - 1, j);
                j -= 1;
            }
        }
        let n = e.len() as f64;
        let count = |f: &dyn Fn(f64) -> bool| e.iter().filter(|v| f(**v)).count() as f64 / n;
        [
            e.iter().sum::<f64>() / n,
            interp(&e, 0.75),
            interp(&e, 0.90),
            count(&|v| v < 0.02),
            count(&|v| v < 0.05),
            count(&|v| v > 0.2),
        ]
    }

    pub fn nrmse(y: &[f64], p: &[f64]) -> f64 {
        let mut hi = f64::MIN;
        let mut lo = f64::MAX;
        let mut sq = 0.0;
        for i in 0..y.len() {
            hi = hi.max(y[i]);
            lo = lo.min(y[i]);
            sq += (y[i] - p[i]) * (y[i] - p[i]);
        }
        (sq / y.len() as f64).sqrt() / (hi - lo)
    }

    pub fn smape(y: &[f64], p: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for i in 0..y.len() {
            let den = y[i].abs() + p[i].abs();
            if den > 0.0 {
                s += 2.0 * (y[i] - p[i]).abs() / den;
                n += 1.0;
            }
        }
        s / n
    }

    pub fn kde(values: &[f64], x: f64, h: f64) -> f64 {
        let mut s = 0.0;
        for v in values {
            let u = (x - v) / h;
            s += (-u * u / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        }
        s / (values.len() as f64 * h)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Library metrics against independent loop implementations on random
/// vectors (length 2 to 50, with occasional exact zeros in the truth).
pub fn metric_oracles(vectors: usize, seed: u64) -> Vec<SuiteResult> {
    let mut rng = CounterRng::new(seed, Domain::Test, 50);
    let names = ["r2 oracle", "mre_stats oracle", "nrmse oracle", "smape oracle", "kde oracle"];
    let mut out: Vec<SuiteResult> = names.iter().map(|n| SuiteResult::new(n, 1e-12)).collect();
    for _ in 0..vectors {
        let n = 2 + rng.below(49) as usize;
        let y: Vec<f64> = (0..n)
            .map(|_| if rng.below(10) == 0 { 0.0 } else { rng.uniform_in(-5.0, 5.0) })
            .collect();
        let p: Vec<f64> = y.iter().map(|v| v + rng.normal() * 0.5).collect();

        let dev = match r2(&y, &p) {
            Ok(v) => rel(v, brute::r2(&y, &p)),
            Err(_) => f64::from(y.iter().any(|v| *v != y[0])),
        };
        out[0].record(dev);

        let dev = match mre_stats(&y, &p) {
            Ok(s) => {
                let b = brute::mre(&y, &p);
                [s.avg, s.p75, s.p90, s.frac_lt_2pct, s.frac_lt_5pct, s.frac_gt_20pct]
                    .iter()
                    .zip(b)
                    .map(|(a, b)| rel(*a, b))
                    .fold(0.0, f64::max)
            }
            Err(_) => f64::from(y.iter().any(|v| *v != 0.0)),
        };
        out[1].record(dev);

        let dev = match nrmse(&y, &p) {
            Ok(v) => rel(v, brute::nrmse(&y, &p)),
            Err(_) => f64::from(y.iter().any(|v| *v != y[0])),
        };
        out[2].record(dev);

        let dev = match smape(&y, &p) {
            Ok((v, _)) => rel(v, brute::smape(&y, &p)),
            Err(_) => f64::INFINITY,
        };
        out[3].record(dev);

        let h = rng.uniform_in(0.1, 2.0);
        let grid: Vec<f64> = (0..16).map(|_| rng.uniform_in(-7.0, 7.0)).collect();
        let dev = match kde(&y, &grid, h) {
            Ok(d) => grid.iter().zip(&d).map(|(x, v)| rel(*v, brute::kde(&y, *x, h))).fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        };
        out[4].record(dev);
    }
    out
}

/// Every suite at the sizes used by the `selftest` command.
pub fn run_all() -> Vec<SuiteResult> {
    let mut out = vec![
        flow_round_trip(1000, 1),
        density_normalization(4, 2, 2),
        jacobian_check(20, 3),
        gradient_suite(0..5, 5),
        permutation_invariance(20, 4),
        receptive_field(5),
        no_residual(6),
    ];
    out.extend(metric_oracles(200, 7));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for s in [
            flow_round_trip(50, 9),
            density_normalization(1, 1, 9),
            jacobian_check(5, 9),
            gradient_suite([9], 5),
            permutation_invariance(5, 9),
            receptive_field(9),
            no_residual(9),
        ] {
            assert!(s.passed(), "{s:?}");
        }
        for s in metric_oracles(30, 9) {
            assert!(s.passed(), "{s:?}");
        }
    }
}
