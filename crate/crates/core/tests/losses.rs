#[path = "support/oracle.rs"]
mod oracle;

use std::f64::consts::PI;

use gmc_core::autodiff::{Tape, Tensor, Var};
use gmc_core::bias::BiasScore;
use gmc_core::corpus::{Corpus, DEFAULT_N_MAX};
use gmc_core::encoders::{dual_cosines, encode_batch, fusion_matrix, fusion_pair, FeatureProvider, FusionHead, HeadVars};
use gmc_core::losses::{balance_margins, loss_bfcl, loss_mcl, margin, MarginOrientation, PairRef, TAU_MCL};
use gmc_core::model::{Dataset, Model};
use gmc_core::synth::{zipf_corpus, ZipfConfig};
use gmc_core::trainer::TrainConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn bias(xi: f64) -> BiasScore {
    BiasScore { y_hat: xi.cos(), xi_hat: xi }
}

/// `L_mcl` on encoder rows `v`, `t` with the given bias angles.
fn mcl_value(v: &Tensor, t: &Tensor, xi: &[f64], orientation: MarginOrientation) -> f64 {
    let mut tape = Tape::new();
    let (v, t) = (tape.leaf(v.clone()), tape.leaf(t.clone()));
    let (cos, theta) = dual_cosines(&mut tape, v, t).unwrap();
    let biases: Vec<BiasScore> = xi.iter().map(|&x| bias(x)).collect();
    let (loss, _) = loss_mcl(&mut tape, cos, theta, &biases, orientation, TAU_MCL).unwrap();
    tape.scalar(loss)
}

fn rows(m: &Tensor) -> Vec<Vec<f64>> {
    (0..m.dims2().unwrap().0).map(|i| m.row(i).to_vec()).collect()
}

fn head_vars(tape: &mut Tape, head: &FusionHead) -> HeadVars {
    HeadVars {
        wq: tape.leaf(head.wq.clone()),
        wk: tape.leaf(head.wk.clone()),
        wv: tape.leaf(head.wv.clone()),
        w1: tape.leaf(head.w1.clone()),
        b1: tape.leaf(head.b1.clone()),
        w2: tape.leaf(head.w2.clone()),
        b2: tape.leaf(head.b2.clone()),
    }
}

fn permute_rows(m: &Tensor, order: &[usize]) -> Tensor {
    let (_, c) = m.dims2().unwrap();
    Tensor::matrix(order.len(), c, order.iter().flat_map(|&i| m.row(i).to_vec()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn zero_bias_angle_reduces_to_info_nce(seed in any::<u64>(), b in 2usize..10, d in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_matrix(&mut rng, b, d);
        let t = random_matrix(&mut rng, b, d);
        let got = mcl_value(&v, &t, &vec![0.0; b], MarginOrientation::Literal);
        let want = oracle::info_nce(&rows(&v), &rows(&t), TAU_MCL);
        prop_assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn margin_never_pushes_past_pi(xi in 0.0..PI, theta in 0.0..PI, complement in any::<bool>()) {
        let orientation = if complement { MarginOrientation::Complement } else { MarginOrientation::Literal };
        let mut tape = Tape::new();
        let th = tape.leaf(Tensor::matrix(1, 1, vec![theta]).unwrap());
        let m = margin(&mut tape, &bias(xi), th, orientation).unwrap();
        let m = tape.scalar(m);
        prop_assert!(theta + m <= PI);
        prop_assert!((theta + m).cos() >= -1.0);
        prop_assert!(m >= 0.0);
    }

    #[test]
    fn larger_bias_angle_hardens_the_loss(seed in any::<u64>(), b in 2usize..8, row in 0usize..8, bump in 0.0..1.0f64) {
        let row = row % b;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_matrix(&mut rng, b, 6);
        let t = random_matrix(&mut rng, b, 6);
        let xi: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..2.0)).collect();
        let mut harder = xi.clone();
        harder[row] += bump;
        let base = mcl_value(&v, &t, &xi, MarginOrientation::Literal);
        let hard = mcl_value(&v, &t, &harder, MarginOrientation::Literal);
        prop_assert!(hard >= base - 1e-12, "{hard} < {base}");
    }

    #[test]
    fn losses_are_permutation_invariant(seed in any::<u64>(), b in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_matrix(&mut rng, b, 5);
        let t = random_matrix(&mut rng, b, 5);
        let xi: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..PI)).collect();
        let mut order: Vec<usize> = (0..b).collect();
        for i in (1..b).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let (pv, pt) = (permute_rows(&v, &order), permute_rows(&t, &order));
        let pxi: Vec<f64> = order.iter().map(|&i| xi[i]).collect();
        let a = mcl_value(&v, &t, &xi, MarginOrientation::Literal);
        let p = mcl_value(&pv, &pt, &pxi, MarginOrientation::Literal);
        prop_assert!((a - p).abs() <= 1e-10 * a.abs().max(1.0));

        let fused = random_matrix(&mut rng, b, b);
        let permuted = Tensor::matrix(b, b, order.iter().flat_map(|&i| order.iter().map(move |&j| (i, j))).map(|(i, j)| fused.get2(i, j)).collect()).unwrap();
        let mut tape = Tape::new();
        let f = tape.leaf(fused);
        let g = tape.leaf(permuted);
        let lf = loss_bfcl(&mut tape, f, 1.0).unwrap();
        let lg = loss_bfcl(&mut tape, g, 1.0).unwrap();
        prop_assert!((tape.scalar(lf) - tape.scalar(lg)).abs() <= 1e-12);
    }

    #[test]
    fn fusion_matrix_matches_per_pair_head(seed in any::<u64>(), b in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = FusionHead::init(&mut rng, 6, 4, 5);
        let mut tape = Tape::new();
        let vars = head_vars(&mut tape, &head);
        let v = tape.leaf(random_matrix(&mut rng, b, 6));
        let t = tape.leaf(random_matrix(&mut rng, b, 6));
        let m = fusion_matrix(&mut tape, v, t, &vars).unwrap();
        for i in 0..b {
            for j in 0..b {
                let vi = tape.rows(v, &[i]).unwrap();
                let tj = tape.rows(t, &[j]).unwrap();
                let s = fusion_pair(&mut tape, vi, tj, &vars).unwrap();
                prop_assert!((tape.value(m).get2(i, j) - tape.scalar(s)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dual_cosines_match_naive(seed in any::<u64>(), b in 1usize..6, d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_matrix(&mut rng, b, d);
        let t = random_matrix(&mut rng, b, d);
        let mut tape = Tape::new();
        let (vv, tv) = (tape.leaf(v.clone()), tape.leaf(t.clone()));
        let (cos, theta) = dual_cosines(&mut tape, vv, tv).unwrap();
        for i in 0..b {
            for j in 0..b {
                let c = oracle::vector_cosine(v.row(i), t.row(j));
                prop_assert!((tape.value(cos).get2(i, j) - c).abs() <= 1e-12);
                let th = c.clamp(-1.0 + 1e-6, 1.0 - 1e-6).acos();
                prop_assert!((tape.value(theta).get2(i, j) - th).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn encoding_is_deterministic() {
    let records = zipf_corpus(&ZipfConfig { num_videos: 6, captions_per_video: 4, ..ZipfConfig::default() });
    let dataset = Dataset::new(Corpus::from_records(records, DEFAULT_N_MAX).unwrap()).unwrap();
    let config = TrainConfig::toy();
    let model = Model::init(&config.dims(), dataset.corpus.num_videos(), dataset.vocab.len(), true, 5);
    let pairs: Vec<PairRef> = (0..6).map(|v| PairRef { video: v, caption: v % 4 }).collect();
    let batch = dataset.batch(pairs).unwrap();
    let encode = || {
        let mut tape = Tape::new();
        let (vars, _) = model.register(&mut tape);
        let (v, t): (Var, Var) = encode_batch(&mut tape, &batch, &dataset, &FeatureProvider::Synthetic, &vars.encoders).unwrap();
        (tape.value(v).clone(), tape.value(t).clone())
    };
    assert_eq!(encode(), encode());
}

/// At the optimum of the two-pair problem the margined angles agree, so the
/// pair with the smaller margin is left with the larger raw angle.
#[test]
fn balanced_pairs_trade_angle_for_margin() {
    let r = balance_margins(0.2, 0.6, 1.6, MarginOrientation::Literal, 0.05, 100_000).unwrap();
    assert!((r.total_a() - r.total_b()).abs() <= 1e-3, "{r:?}");
    assert!(r.margin_a < r.margin_b);
    assert!(r.theta_a > r.theta_b);
    assert!(((r.theta_a - r.theta_b) - (r.margin_b - r.margin_a)).abs() <= 1e-3);
}
