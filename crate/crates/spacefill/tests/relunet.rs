//! ReLU network builders, combinators, audit and coding against the mathematical objects they
//! realise (sawtooth, piecewise-linear and transport oracles) and against hand counts.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spacefill::histogram::{ConditionalTable, HistogramD, QuantizedHistogramD};
use spacefill::pwl::{pwl_from_uniform_histogram, sawtooth_eval, PiecewiseLinear, TransportSpec};
use spacefill::relunet::{
    audit_quantization, build_pwl_net, build_sawtooth_net, build_shaping_net, build_stage_net, build_transport_net,
    classify_weight, compose, compose_through_relu, elias_gamma_bits, encoded_bit_length, extend_depth, identity_net,
    parallelize, rescale_output, stage_output_prefixes, sum_net, transport_connectivity, AffineLayer, InputMode,
    ReluNetwork, WeightType,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn random_quantized(rng: &mut ChaCha8Rng, d: usize, n: usize, a: u64) -> QuantizedHistogramD {
    let levels = (0..d)
        .map(|t| {
            (0..n.pow(t as u32))
                .flat_map(|_| {
                    let mut q = vec![1u64; n];
                    for _ in 0..a - n as u64 {
                        q[rng.gen_range(0..n)] += 1;
                    }
                    q
                })
                .collect()
        })
        .collect();
    QuantizedHistogramD::from_table(d, n, ConditionalTable::new(d, n, a, levels).unwrap()).unwrap()
}

fn grid() -> impl Iterator<Item = f64> {
    (0..=1000).map(|j| j as f64 / 1000.0)
}

#[test]
fn sawtooth_network_values_and_sizes() {
    let one = build_sawtooth_net(1).unwrap();
    assert_eq!(one.forward(&[0.25]).unwrap(), vec![0.5]);
    assert_eq!(one.forward(&[0.75]).unwrap(), vec![0.5]);
    assert_eq!(build_sawtooth_net(2).unwrap().forward(&[0.125]).unwrap(), vec![0.5]);
    let stats = one.stats();
    assert_eq!((stats.connectivity, stats.depth), (8, 2));
    let four = build_sawtooth_net(4).unwrap().stats();
    assert_eq!((four.connectivity, four.depth, four.width), (41, 5, 3));
    for s in 1..=8 {
        let net = build_sawtooth_net(s).unwrap();
        for x in grid() {
            assert!(close(net.forward(&[x]).unwrap()[0], sawtooth_eval(s, x), 1e-12));
        }
    }
    assert!(build_sawtooth_net(0).is_err());
}

#[test]
fn zero_bias_network_maps_zero_to_zero() {
    let net = ReluNetwork::new(vec![
        AffineLayer::from_rows(vec![vec![1.0, -2.0], vec![0.5, 3.0]], vec![0.0, 0.0]).unwrap(),
        AffineLayer::from_rows(vec![vec![1.0, 1.0]], vec![0.0]).unwrap(),
    ])
    .unwrap();
    assert_eq!(net.forward(&[0.0, 0.0]).unwrap(), vec![0.0]);
    assert!(net.forward(&[0.0]).is_err());
}

#[test]
fn pwl_network_examples() {
    let id = build_pwl_net(&PiecewiseLinear::identity()).unwrap();
    assert_eq!(id.stats().connectivity, 2);
    assert_eq!(id.forward(&[0.3]).unwrap(), vec![0.3]);
    let f = pwl_from_uniform_histogram(&[0.5, 1.5]).unwrap();
    let net = build_pwl_net(&f).unwrap();
    assert!(close(net.forward(&[0.25]).unwrap()[0], 0.5, 1e-12));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 1..=8 {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x * n as f64 / total).collect();
        let f = pwl_from_uniform_histogram(&w).unwrap();
        let net = build_pwl_net(&f).unwrap();
        let stats = net.stats();
        assert!(stats.connectivity <= 4 * n - 2 && stats.depth == 2);
        for _ in 0..1000 {
            let x: f64 = rng.gen();
            assert!(close(net.forward(&[x]).unwrap()[0], f.eval(x), 1e-12));
        }
    }
}

#[test]
fn shaping_network_is_quantized_and_exact() {
    // n = 2, A = 7, q = (2, 5): merged slope increments would be off-grid; split ones are not.
    let w = [2.0 * 2.0 / 7.0, 2.0 * 5.0 / 7.0];
    let merged = 1.0 / w[1] - 1.0 / w[0];
    assert_eq!(classify_weight(merged, 14), WeightType::Neither);
    let net = build_shaping_net(&w, 1.0, 0.0).unwrap();
    assert!(audit_quantization(&net, 14).pass());
    assert_eq!(net.stats().connectivity, 6 * 2 - 4);
    let f = pwl_from_uniform_histogram(&w).unwrap();
    for x in grid() {
        assert!(close(net.forward(&[x]).unwrap()[0], f.eval(x), 1e-12));
    }
    let shifted = build_shaping_net(&w, 2.0, 1.0).unwrap();
    for x in grid() {
        assert!(close(shifted.forward(&[x]).unwrap()[0], 2.0 * f.eval(x) - 1.0, 1e-12));
    }
}

#[test]
fn compose_examples() {
    let one = build_sawtooth_net(1).unwrap();
    let twice = compose(&one, &one).unwrap();
    assert_eq!(twice.stats().depth, 3);
    for x in grid() {
        assert!(close(twice.forward(&[x]).unwrap()[0], sawtooth_eval(2, x), 1e-12));
    }
    let id = ReluNetwork::new(vec![AffineLayer::identity(1)]).unwrap();
    let same = compose(&id, &one).unwrap();
    for x in grid() {
        assert_eq!(same.forward(&[x]).unwrap(), one.forward(&[x]).unwrap());
    }
    let through = compose_through_relu(&one, &one).unwrap();
    assert_eq!(through.stats().depth, 4);
    for x in grid() {
        assert!(close(through.forward(&[x]).unwrap()[0], sawtooth_eval(2, x), 1e-12));
    }
    assert!(compose(&one, &parallelize(&[one.clone(), one.clone()], InputMode::Shared).unwrap()).is_err());
}

#[test]
fn parallelize_examples() {
    let id = identity_net(1, 2).unwrap();
    let pair = parallelize(&[id.clone(), id], InputMode::Shared).unwrap();
    assert_eq!(pair.forward(&[0.4]).unwrap(), vec![0.4, 0.4]);

    let saw = build_sawtooth_net(2).unwrap();
    let f = pwl_from_uniform_histogram(&[0.5, 1.5]).unwrap();
    let pwl = extend_depth(&build_pwl_net(&f).unwrap(), saw.stats().depth).unwrap();
    let both = parallelize(&[saw.clone(), pwl.clone()], InputMode::Shared).unwrap();
    assert_eq!(both.stats().connectivity, saw.stats().connectivity + pwl.stats().connectivity);
    for x in grid() {
        let y = both.forward(&[x]).unwrap();
        assert!(close(y[0], sawtooth_eval(2, x), 1e-12) && close(y[1], f.eval(x), 1e-12));
    }
    let split = parallelize(&[saw.clone(), pwl], InputMode::Split).unwrap();
    let y = split.forward(&[0.125, 0.25]).unwrap();
    assert!(close(y[0], 0.5, 1e-12) && close(y[1], 0.5, 1e-12));
    assert!(parallelize(&[saw, build_sawtooth_net(1).unwrap()], InputMode::Shared).is_err());
}

#[test]
fn extend_depth_and_sum() {
    let one = build_sawtooth_net(1).unwrap();
    let longer = extend_depth(&one, 4).unwrap();
    assert_eq!(longer.stats().depth, 4);
    assert_eq!(longer.stats().connectivity, one.stats().connectivity + 2);
    for x in grid() {
        assert_eq!(longer.forward(&[x]).unwrap(), one.forward(&[x]).unwrap());
    }
    assert_eq!(extend_depth(&one, 2).unwrap(), one);
    assert!(extend_depth(&one, 1).is_err());

    // Padding a shaping network to depth s + 3 costs s + 1 extra weights.
    let n = 3;
    let s = 4;
    let f = pwl_from_uniform_histogram(&[0.6, 1.2, 1.2]).unwrap();
    let padded = extend_depth(&build_pwl_net(&f).unwrap(), s + 3).unwrap();
    assert!(padded.stats().connectivity < 4 * n + s);

    assert_eq!(sum_net(1).unwrap().forward(&[0.7]).unwrap(), vec![0.7]);
    assert!(close(sum_net(3).unwrap().forward(&[0.1, 0.2, 0.3]).unwrap()[0], 0.6, 1e-15));
    assert_eq!(sum_net(2).unwrap().forward(&[-1.0, 0.5]).unwrap(), vec![0.5]);
}

#[test]
fn stage_networks() {
    // r = 0, uniform n = 1: (g_s(x), x).
    let spec = TransportSpec::new(&HistogramD::uniform(2, 1).unwrap(), 3).unwrap();
    let stage = build_stage_net(&spec, 0).unwrap();
    assert_eq!(stage.stats().depth, 3 + 3);
    for x in grid() {
        let y = stage.forward(&[x]).unwrap();
        assert!(close(y[0], sawtooth_eval(3, x), 1e-12) && close(y[1], x, 1e-12));
    }
    // r = 1 of a d = 3 target: outputs (F_2 components, Z_1, Z_2).
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let target = random_quantized(&mut rng, 3, 2, 7);
    let spec = TransportSpec::from_quantized(&target, 2).unwrap();
    let net = compose_through_relu(&build_stage_net(&spec, 1).unwrap(), &build_stage_net(&spec, 0).unwrap()).unwrap();
    let prefixes = stage_output_prefixes(2, 1);
    assert_eq!(net.output_dim(), prefixes.len() + 2);
    for _ in 0..2000 {
        let x: f64 = rng.gen();
        let y = net.forward(&[x]).unwrap();
        let f = spec.f_values(x);
        for (i, p) in prefixes.iter().enumerate() {
            assert!(close(y[i], f[2][p[0] * 2 + p[1]], 1e-9));
        }
        let z = spec.transport_eval(x).unwrap();
        assert!(close(y[4], z[0], 1e-9) && close(y[5], z[1], 1e-9));
    }
    assert!(build_stage_net(&spec, 2).is_ok());
    assert!(build_stage_net(&spec, 3).is_err());
}

#[test]
fn transport_network_examples() {
    let spec = TransportSpec::new(&HistogramD::uniform(2, 1).unwrap(), 2).unwrap();
    let net = build_transport_net(&spec).unwrap();
    let y = net.forward(&[0.125]).unwrap();
    assert!(close(y[0], 0.125, 1e-12) && close(y[1], 0.5, 1e-12));
    let spec = TransportSpec::new(&HistogramD::uniform(2, 2).unwrap(), 1).unwrap();
    assert_eq!(build_transport_net(&spec).unwrap().stats().depth, 6);
}

#[test]
fn transport_network_equals_map_and_passes_audit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (d, n, s, a) in [(1, 3, 2, 7), (2, 2, 3, 5), (2, 3, 2, 10), (3, 2, 2, 6), (2, 4, 1, 9), (4, 2, 1, 5)] {
        let target = random_quantized(&mut rng, d, n, a);
        let spec = TransportSpec::from_quantized(&target, s).unwrap();
        let net = build_transport_net(&spec).unwrap();
        let stats = net.stats();
        assert_eq!(stats.depth, (s as usize + 3) * d - s as usize - 1);
        assert_eq!(stats.connectivity, transport_connectivity(d, n, s), "d={d} n={n} s={s}");
        let audit = audit_quantization(&net, n as u64 * a);
        assert!(audit.pass(), "off-grid weights: {:?}", audit.neither);
        let mut buffers = (Vec::new(), Vec::new());
        for _ in 0..10_000 {
            let x: f64 = rng.gen();
            let exact = spec.transport_eval(x).unwrap();
            let y = net.eval_with(&[x], &mut buffers);
            for (u, v) in y.iter().zip(&exact) {
                assert!(close(*u, *v, 1e-9));
            }
        }
    }
}

#[test]
fn connectivity_regression_bound() {
    // The builder's constant for d ≤ 4: M ≤ 40 (n^d + s n^{d−1}). The identity chains that carry
    // Z_1, …, Z_r contribute O(d² s), which dominates for n = 1.
    for d in 2..=4usize {
        for n in 1..=6usize {
            for s in 1..=40u32 {
                let m = transport_connectivity(d, n, s) as f64;
                let scale = (n.pow(d as u32) + s as usize * n.pow(d as u32 - 1)) as f64;
                assert!(m <= 40.0 * scale, "d={d} n={n} s={s}: {m} > 40·{scale}");
            }
        }
    }
}

#[test]
fn audit_examples() {
    let audit = audit_quantization(&build_sawtooth_net(3).unwrap(), 4);
    assert!(audit.pass());
    assert_eq!(audit.type2, 0);
    // 1/3 at Δ = 1/4: its reciprocal 3 = 12·Δ lies in [−4, 4], so it is Type 2 by definition.
    assert_eq!(classify_weight(1.0 / 3.0, 4), WeightType::Type2(12));
    let fifth = ReluNetwork::new(vec![AffineLayer::new(1, 1, vec![0.2], vec![0.0]).unwrap()]).unwrap();
    let audit = audit_quantization(&fifth, 4);
    assert!(!audit.pass());
    assert_eq!(audit.neither.len(), 1);
    assert_eq!(classify_weight(0.75, 4), WeightType::Type1(3));
    assert_eq!(classify_weight(8.0, 2), WeightType::Neither);
    // Type 1 knots and Type 2 slopes of a quantized shaping network.
    let w = [2.0 * 1.0 / 4.0, 2.0 * 3.0 / 4.0];
    let net = build_shaping_net(&w, 1.0, 0.0).unwrap();
    let audit = audit_quantization(&net, 8);
    assert!(audit.pass() && audit.type2 > 0);
}

#[test]
fn bit_length_examples() {
    let single = ReluNetwork::new(vec![AffineLayer::new(1, 1, vec![0.5], vec![0.0]).unwrap()]).unwrap();
    let header = elias_gamma_bits(2) + 2 * elias_gamma_bits(2) + elias_gamma_bits(1) + elias_gamma_bits(2) + 1;
    assert_eq!(encoded_bit_length(&single, 2).unwrap(), header + 1 + 4);
    let two = ReluNetwork::new(vec![AffineLayer::new(1, 1, vec![0.5], vec![0.5]).unwrap()]).unwrap();
    assert!(encoded_bit_length(&two, 2).unwrap() > encoded_bit_length(&single, 2).unwrap());
    let off_grid = ReluNetwork::new(vec![AffineLayer::new(1, 1, vec![0.3], vec![0.0]).unwrap()]).unwrap();
    assert!(encoded_bit_length(&off_grid, 2).is_err());
    // Affine growth in s for a fixed target.
    let target = random_quantized(&mut ChaCha8Rng::seed_from_u64(4), 2, 3, 8);
    let bits: Vec<u64> = (1..=6)
        .map(|s| {
            encoded_bit_length(&build_transport_net(&TransportSpec::from_quantized(&target, s).unwrap()).unwrap(), 24)
                .unwrap()
        })
        .collect();
    assert!(bits.windows(3).all(|w| w[2] + w[0] == 2 * w[1]));
}

#[test]
fn rescale_examples() {
    let id = parallelize(&[identity_net(1, 2).unwrap(), identity_net(1, 2).unwrap()], InputMode::Split).unwrap();
    assert_eq!(rescale_output(&id, 1.0, &[0.0, 0.0]).unwrap(), id);
    let scaled = rescale_output(&id, 2.0, &[1.0, 1.0]).unwrap();
    assert_eq!(scaled.forward(&[0.5, 0.25]).unwrap(), vec![2.0, 1.5]);
    assert!(rescale_output(&id, 0.0, &[0.0, 0.0]).is_err());
    assert!(rescale_output(&id, 1.0, &[0.0]).is_err());
}

#[test]
fn serialization() {
    let net = build_sawtooth_net(3).unwrap();
    let back = ReluNetwork::from_json(&net.to_json().unwrap()).unwrap();
    assert_eq!(back.stats(), net.stats());
    for x in grid() {
        assert_eq!(back.forward(&[x]).unwrap(), net.forward(&[x]).unwrap());
    }
    assert!(ReluNetwork::from_json(r#"{"layers": []}"#).is_err());
    assert!(ReluNetwork::from_json("not json").is_err());
    let golden = r#"{"layers":[{"A":[[2.0],[4.0],[2.0]],"b":[0.0,-2.0,-2.0]},{"A":[[1.0,-1.0,1.0]],"b":[0.0]}]}"#;
    assert_eq!(ReluNetwork::from_json(golden).unwrap(), build_sawtooth_net(1).unwrap());
    // Full-precision weights survive the round trip exactly.
    let spec = TransportSpec::from_quantized(&random_quantized(&mut ChaCha8Rng::seed_from_u64(5), 2, 3, 7), 2).unwrap();
    let net = build_transport_net(&spec).unwrap();
    assert_eq!(ReluNetwork::from_json(&net.to_json().unwrap()).unwrap(), net);
}

proptest! {
    #[test]
    fn compose_is_function_composition(s1 in 1u32..=4, s2 in 1u32..=4, x in 0.0f64..=1.0) {
        let (a, b) = (build_sawtooth_net(s1).unwrap(), build_sawtooth_net(s2).unwrap());
        let c = compose(&a, &b).unwrap();
        prop_assert_eq!(c.stats().depth, a.stats().depth + b.stats().depth - 1);
        let inner = b.forward(&[x]).unwrap();
        prop_assert!(close(c.forward(&[x]).unwrap()[0], a.forward(&inner).unwrap()[0], 1e-12));
    }

    #[test]
    fn parallel_is_concatenation(s1 in 1u32..=3, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let a = build_sawtooth_net(s1).unwrap();
        let b = extend_depth(&build_sawtooth_net(1).unwrap(), a.stats().depth).unwrap();
        let p = parallelize(&[a.clone(), b.clone()], InputMode::Split).unwrap();
        let out = p.forward(&[x, y]).unwrap();
        prop_assert!(close(out[0], a.forward(&[x]).unwrap()[0], 1e-12));
        prop_assert!(close(out[1], b.forward(&[y]).unwrap()[0], 1e-12));
    }
}
