//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any fails.
//!
//! Oracles kept here, independent of the library: uniform-subcell proxies of histograms,
//! the direct sawtooth sum, and exact integer/rational bookkeeping of quantized tables.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spacefill::histogram::{multi_index, ConditionalTable, QuantizedHistogramD};
use spacefill::pwl::{sawtooth_eval, PiecewiseLinear, TransportSpec};
use spacefill::quantizer::{
    assemble_histogram, bin_of, compute_masses, default_delta, quantization_bound, quantize_masses,
    verify_mass_identity, CellMassGrid, InputDistribution,
};
use spacefill::relunet::{
    audit_quantization, build_pwl_net, build_sawtooth_net, build_transport_net, compose, encoded_bit_length,
};
use spacefill::wasserstein::{subcube_exactness, w_bound_report, w_discrete, DiscreteMeasure};
use spacefill_cli::{decay, Target};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(index: usize, title: &str, outcome: &Outcome, elapsed: Duration) -> bool {
    println!(
        "criterion {index:>2} [{}] {title}: {} ({:.2} s)",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64()
    );
    outcome.pass
}

/// Random composition of `a` into `n` positive parts.
fn composition(rng: &mut ChaCha8Rng, n: usize, a: u64) -> Vec<u64> {
    let mut q = vec![1u64; n];
    for _ in 0..a - n as u64 {
        q[rng.gen_range(0..n)] += 1;
    }
    q
}

fn random_table(rng: &mut ChaCha8Rng, d: usize, n: usize, a: u64) -> QuantizedHistogramD {
    let levels = (0..d).map(|t| (0..n.pow(t as u32)).flat_map(|_| composition(rng, n, a)).collect()).collect();
    QuantizedHistogramD::from_table(d, n, ConditionalTable::new(d, n, a, levels).unwrap()).unwrap()
}

struct Instance {
    target: QuantizedHistogramD,
    spec: TransportSpec,
}

impl Instance {
    fn label(&self) -> String {
        let (d, n, s) = (self.spec.dim(), self.spec.resolution(), self.spec.order());
        format!("d={d} n={n} s={s} A={}", self.target.table().denominator())
    }
}

fn instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..25)
        .map(|_| {
            let d = rng.gen_range(1..=3);
            let n = [2, 4][rng.gen_range(0..2)];
            let s = rng.gen_range(1..=5);
            let a = rng.gen_range(2 * n as u64..=4 * n as u64);
            let target = random_table(&mut rng, d, n, a);
            let spec = TransportSpec::from_quantized(&target, s).unwrap();
            Instance { target, spec }
        })
        .collect()
}

fn criterion_1(instances: &[Instance]) -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for inst in instances {
        let r = w_bound_report(&inst.spec).unwrap();
        worst_ratio = worst_ratio.max(r.measured / (r.bound + r.slack));
        if !r.within() {
            failures.push(format!("{}: {} > {}", inst.label(), r.measured, r.bound + r.slack));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && elapsed < 60.0;
    Outcome {
        pass,
        detail: format!(
            "25 targets, max measured/(bound+slack) = {worst_ratio:.4}, runtime {elapsed:.1} s (limit 60 s){}",
            if failures.is_empty() { String::new() } else { format!("; violations: {}", failures.join("; ")) }
        ),
    }
}

fn criterion_2(instances: &[Instance]) -> Outcome {
    let mut worst_grid: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for inst in instances {
        let r = subcube_exactness(&inst.spec, 20).unwrap();
        worst_grid = worst_grid.max(r.grid_deviation);
        worst_sum = worst_sum.max(r.t_sum_deviation);
    }
    Outcome {
        pass: worst_grid < 1e-6 && worst_sum < 1e-10,
        detail: format!(
            "max subcube deviation {worst_grid:.3e} (< 1e-6), max T-interval sum deviation {worst_sum:.3e} (< 1e-10)"
        ),
    }
}

fn criterion_3(instances: &[Instance]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for inst in instances {
        let net = build_transport_net(&inst.spec).unwrap();
        let mut buffers = (Vec::new(), Vec::new());
        for _ in 0..10_000 {
            let x: f64 = rng.gen();
            let exact = inst.spec.transport_eval(x).unwrap();
            let y = net.eval_with(&[x], &mut buffers);
            for (a, b) in y.iter().zip(&exact) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Outcome {
        pass: worst < 1e-9,
        detail: format!("max |forward − transport_eval| = {worst:.3e} over 25 × 10^4 points (< 1e-9)"),
    }
}

fn criterion_4(instances: &[Instance]) -> Outcome {
    let mut problems = Vec::new();
    for s in 1..=8u32 {
        let stats = build_sawtooth_net(s).unwrap().stats();
        if (stats.connectivity, stats.depth) != (11 * s as usize - 3, s as usize + 1) {
            problems.push(format!("sawtooth s={s}: ({}, {})", stats.connectivity, stats.depth));
        }
    }
    for inst in instances {
        let (d, s) = (inst.spec.dim(), inst.spec.order() as usize);
        let depth = build_transport_net(&inst.spec).unwrap().stats().depth;
        if depth != (s + 3) * d - s - 1 {
            problems.push(format!("{}: depth {depth}", inst.label()));
        }
    }
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            "sawtooth (M, L) = (11s−3, s+1) for s = 1..8; transport depth (s+3)d−s−1 on all 25 targets".into()
        } else {
            problems.join("; ")
        },
    }
}

fn criterion_5(instances: &[Instance]) -> Outcome {
    let mut failures = Vec::new();
    let mut weights = 0usize;
    for inst in instances {
        let denominator = inst.spec.resolution() as u64 * inst.target.table().denominator();
        let audit = audit_quantization(&build_transport_net(&inst.spec).unwrap(), denominator);
        weights += audit.type1 + audit.type2;
        if !audit.pass() {
            failures.push(format!("{}: {} off-grid weights", inst.label(), audit.neither.len()));
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("all {weights} nonzero weights of 25 networks are Type 1 or Type 2 for Δ = δ/n")
        } else {
            failures.join("; ")
        },
    }
}

/// Assembled histogram as atoms at the centers of a `4 × … × 4` subdivision of every tile.
fn subcell_proxy(h: &QuantizedHistogramD) -> DiscreteMeasure {
    let (d, n) = (h.base().dim(), h.base().resolution());
    let sub = 4usize;
    let side = n * sub;
    let share = 1.0 / sub.pow(d as u32) as f64;
    let (points, masses) = (0..side.pow(d as u32))
        .map(|flat| {
            let fine = multi_index(side, d, flat);
            let tile: Vec<usize> = fine.iter().map(|k| k / sub).collect();
            let point = fine.iter().map(|&k| (k as f64 + 0.5) / side as f64).collect();
            (point, h.base().cell_mass(&tile).unwrap() * share)
        })
        .unzip();
    DiscreteMeasure::new(points, masses).unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut problems = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..20 {
        let d: usize = rng.gen_range(1..=2);
        let n: usize = rng.gen_range(2..=3);
        let k = rng.gen_range(1..=12);
        let points: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let masses: Vec<f64> = raw.iter().map(|m| m / total).collect();
        let nu = DiscreteMeasure::new(points.clone(), masses.clone()).unwrap();

        let mut tiles = vec![0.0; n.pow(d as u32)];
        for (p, m) in points.iter().zip(&masses) {
            let flat = p.iter().fold(0, |acc, &x| acc * n + bin_of(x, n));
            tiles[flat] += m;
        }
        let grid = CellMassGrid::new(d, n, tiles).unwrap();
        let a = default_delta(d, n).unwrap();
        let ledger = quantize_masses(&compute_masses(&InputDistribution::Grid(grid), n).unwrap(), a).unwrap();
        let h = assemble_histogram(&ledger).unwrap();

        let distance = w_discrete(&nu, &subcell_proxy(&h)).unwrap().distance;
        let allowed = quantization_bound(d, n, 1.0 / a as f64) + 2.0 * (d as f64).sqrt() / (4.0 * n as f64);
        worst_ratio = worst_ratio.max(distance / allowed);
        if distance > allowed {
            problems.push(format!("d={d} n={n}: W = {distance} > {allowed}"));
        }
        // Sibling numerators sum to A exactly, so every prefix mass is the sum of its children.
        for t in 0..d {
            for row in 0..n.pow(t as u32) {
                let prefix = multi_index(n, t, row);
                let children: Vec<i64> = (0..n)
                    .map(|k| {
                        let mut z = prefix.clone();
                        z.push(k);
                        ledger.quantized_numerator(&z).unwrap()
                    })
                    .collect();
                if children.iter().sum::<i64>() != a as i64 {
                    problems
                        .push(format!("d={d} n={n}: numerators of {prefix:?} sum to {}", children.iter().sum::<i64>()));
                }
                if children.iter().any(|&q| q <= 0) {
                    problems.push(format!("d={d} n={n}: nonpositive quantized conditional below {prefix:?}"));
                }
            }
        }
        let positive = (a as usize) > n * (n - 1);
        if positive && h.base().weights().iter().any(|&w| w <= 0.0) {
            problems.push(format!("d={d} n={n}: zero quantized mass although δ < 1/(n(n−1))"));
        }
    }
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            format!("20 measures, max W/(bound + proxy slack) = {worst_ratio:.4}; marginals exact; all masses positive")
        } else {
            problems.join("; ")
        },
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for _ in 0..100 {
        let d: usize = rng.gen_range(1..=4);
        let n: usize = rng.gen_range(1..=3);
        let cells = n.pow(d as u32);
        let mut masses: Vec<f64> = (0..cells).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() }).collect();
        if masses.iter().all(|&m| m == 0.0) {
            masses[0] = 1.0;
        }
        let total: f64 = masses.iter().sum();
        masses.iter_mut().for_each(|m| *m /= total);
        let grid = CellMassGrid::new(d, n, masses).unwrap();
        let a = rng.gen_range(1..=40);
        let ledger = quantize_masses(&compute_masses(&InputDistribution::Grid(grid), n).unwrap(), a).unwrap();
        for k in 1..=d {
            for flat in 0..n.pow(k as u32) {
                worst = worst.max(verify_mass_identity(&ledger, &multi_index(n, k, flat)).unwrap());
                checked += 1;
            }
        }
    }
    Outcome {
        pass: worst < 1e-9,
        detail: format!("max residual {worst:.3e} over {checked} prefixes of 100 ledgers (< 1e-9)"),
    }
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let pieces = rng.gen_range(1..=6);
        let mut knots: Vec<f64> = (0..pieces).map(|i| if i == 0 { 0.0 } else { rng.gen::<f64>() }).collect();
        knots.sort_by(f64::total_cmp);
        let ramps = knots.iter().map(|&b| (rng.gen_range(-3.0..3.0), b)).collect();
        let f = PiecewiseLinear::new(ramps).unwrap();
        let s: u32 = rng.gen_range(1..=6);
        let teeth = 1usize << (s - 1);
        let net = compose(&build_pwl_net(&f).unwrap(), &build_sawtooth_net(s).unwrap()).unwrap();
        for j in 0..10_000 {
            let x = j as f64 / 9_999.0;
            let left = f.eval(sawtooth_eval(s, x));
            let right: f64 = (0..teeth).map(|k| f.eval(sawtooth_eval(1, teeth as f64 * x - k as f64))).sum();
            worst = worst.max((left - right).abs());
            worst = worst.max((net.forward(&[x]).unwrap()[0] - left).abs());
        }
    }
    Outcome {
        pass: worst < 1e-10,
        detail: format!("max disagreement {worst:.3e} on 10^4-point grids for 20 functions (< 1e-10)"),
    }
}

fn decay_target() -> QuantizedHistogramD {
    let table = ConditionalTable::new(2, 2, 8, vec![vec![3, 5], vec![2, 6, 5, 3]]).unwrap();
    QuantizedHistogramD::from_table(2, 2, table).unwrap()
}

fn criterion_9() -> Outcome {
    let rows = decay(&Target::Quantized(decay_target()), 2..=5).unwrap();
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[1].measured / w[0].measured).collect();
    let pass = ratios.iter().all(|r| (0.4..=0.6).contains(r));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
    Outcome {
        pass,
        detail: format!(
            "per-step ratios of the measured column for s = 2..5: [{}] (within [0.4, 0.6])",
            shown.join(", ")
        ),
    }
}

fn criterion_10() -> Outcome {
    let target = decay_target();
    let denominator = 2 * target.table().denominator();
    let bits: Vec<i64> = (1..=8u32)
        .map(|s| {
            let spec = TransportSpec::from_quantized(&target, s).unwrap();
            encoded_bit_length(&build_transport_net(&spec).unwrap(), denominator).unwrap() as i64
        })
        .collect();
    // Exact least squares in integers: residual is zero iff all second differences vanish.
    let second: Vec<i64> = bits.windows(3).map(|w| w[2] - 2 * w[1] + w[0]).collect();
    let slope = bits[1] - bits[0];
    let affine = second.iter().all(|&x| x == 0);
    Outcome {
        pass: affine && slope > 0,
        detail: format!(
            "bits for s = 1..8: {bits:?}; slope {slope} bits per halving of the bound, second differences {second:?}"
        ),
    }
}

/// A named acceptance check, run lazily so its timing can be reported.
type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() -> ExitCode {
    let built = Instant::now();
    let instances = instances();
    let setup = built.elapsed();
    println!("acceptance: 25 random δ-quantized targets ({:.2} s to build)", setup.as_secs_f64());
    for inst in &instances {
        println!("  {}", inst.label());
    }
    let checks: Vec<(&str, Criterion<'_>)> = vec![
        ("Wasserstein bound", Box::new(|| criterion_1(&instances))),
        ("mass exactness", Box::new(|| criterion_2(&instances))),
        ("network equals map", Box::new(|| criterion_3(&instances))),
        ("size formulas", Box::new(|| criterion_4(&instances))),
        ("quantization audit", Box::new(|| criterion_5(&instances))),
        ("quantizer bound", Box::new(criterion_6)),
        ("mass identity", Box::new(criterion_7)),
        ("sawtooth decomposition", Box::new(criterion_8)),
        ("exponential decay", Box::new(criterion_9)),
        ("bit-length scaling", Box::new(criterion_10)),
    ];
    let mut all = true;
    for (i, (title, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        all &= report(i + 1, title, &outcome, start.elapsed());
    }
    println!("acceptance: {}", if all { "all criteria passed" } else { "FAILED" });
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
