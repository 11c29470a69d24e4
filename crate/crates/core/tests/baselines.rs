mod common;

use approx::assert_abs_diff_eq;

use common::randn;
use vidalign::baselines::{
    adversarial_losses, grad_reverse, grl_ramp, infonce_cross_domain_loss, mcd_discrepancy, mcd_step, mmd_loss,
    target_pseudo_ce, vicreg_cross_domain_loss, DomainClassifier, McdStep, VicRegWeights, BANDWIDTH_MULTIPLIERS,
};
use vidalign::gradcheck::{analytic_grad, finite_difference_grad, relative_error};
use vidalign::loss::cross_entropy;
use vidalign::model::linear;
use vidalign::optim::{Sgd, SgdConfig};
use vidalign::rng::SeededRng;
use vidalign::{Tensor64, TensorError};

type F<'a> = Box<dyn Fn(&Tensor64) -> Result<Tensor64, TensorError> + 'a>;

fn grad_check(name: &str, x: &Tensor64, f: F<'_>, tol: f64) {
    let a = analytic_grad(&f, x).unwrap();
    let n = finite_difference_grad(&f, x, 1e-6).unwrap();
    let err = relative_error(&a, &n);
    assert!(err < tol, "{name}: relative error {err:e}");
}

fn rows(m: &Tensor64) -> Vec<Vec<f64>> {
    let d = m.shape()[1];
    m.to_vec().chunks(d).map(|r| r.to_vec()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn mmd_oracle(s: &Tensor64, t: &Tensor64) -> f64 {
    let (s, t) = (rows(s), rows(t));
    let joint: Vec<&Vec<f64>> = s.iter().chain(&t).collect();
    let mut ds = Vec::new();
    for i in 0..joint.len() {
        for j in i + 1..joint.len() {
            ds.push(sq_dist(joint[i], joint[j]));
        }
    }
    ds.sort_by(f64::total_cmp);
    let n = ds.len();
    let med = if n % 2 == 1 { ds[n / 2] } else { 0.5 * (ds[n / 2 - 1] + ds[n / 2]) };
    let k = |a: &[f64], b: &[f64]| BANDWIDTH_MULTIPLIERS.iter().map(|m| (-sq_dist(a, b) / (m * med)).exp()).sum::<f64>();
    let mean_k = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        let mut acc = 0.0;
        for a in x {
            for b in y {
                acc += k(a, b);
            }
        }
        acc / (x.len() * y.len()) as f64
    };
    mean_k(&s, &s) + mean_k(&t, &t) - 2.0 * mean_k(&s, &t)
}

#[test]
fn mmd_matches_kernel_sum_oracle() {
    for seed in 0..10 {
        let mut rng = SeededRng::stream(seed, 80);
        let s = randn(&mut rng, 4, 3);
        let t = randn(&mut rng, 4, 3).add_scalar(0.5).unwrap();
        assert_abs_diff_eq!(mmd_loss(&s, &t).unwrap().item(), mmd_oracle(&s, &t), epsilon = 1e-10);
    }
    let mut rng = SeededRng::new(81);
    let s = randn(&mut rng, 3, 2);
    let t = randn(&mut rng, 6, 2);
    assert_abs_diff_eq!(mmd_loss(&s, &t).unwrap().item(), mmd_oracle(&s, &t), epsilon = 1e-10);
}

#[test]
fn mmd_is_zero_on_identical_rows_and_positive_when_separated() {
    let s = randn(&mut SeededRng::new(1), 5, 4);
    assert_abs_diff_eq!(mmd_loss(&s, &s).unwrap().item(), 0.0, epsilon = 1e-9);
    let far = s.add_scalar(10.0).unwrap();
    assert!(mmd_loss(&s, &far).unwrap().item() > 0.1);
    let one = randn(&mut SeededRng::new(2), 1, 4);
    assert!(mmd_loss(&one, &one.add_scalar(1.0).unwrap()).unwrap().item().is_finite());
    assert!(mmd_loss(&s, &Tensor64::zeros(&[0, 4])).is_err());
}

#[test]
fn zero_initialized_domain_head_gives_ln2() {
    let head = DomainClassifier::<f64>::zeroed(6, 4).unwrap();
    let feats = randn(&mut SeededRng::new(3), 8, 6);
    let flags: Vec<bool> = (0..8).map(|i| i < 4).collect();
    let out = adversarial_losses(&feats, &flags, 1.0, &head).unwrap();
    assert_abs_diff_eq!(out.domain_classifier_loss.item(), 2f64.ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(out.feature_loss, -(2f64.ln()), epsilon = 1e-12);
}

#[test]
fn reversal_negates_and_scales_the_finite_difference_gradient() {
    let mut rng = SeededRng::new(4);
    let head = DomainClassifier::<f64>::new(5, 6, &mut rng).unwrap();
    let feats = randn(&mut rng, 6, 5);
    let flags = [true, false, true, false, true, false];
    for scale in [0.0, 0.3, 1.0] {
        let reversed = |x: &Tensor64| -> Result<Tensor64, TensorError> {
            Ok(adversarial_losses(x, &flags, scale, &head).map_err(unwrap_tensor)?.domain_classifier_loss)
        };
        let plain = |x: &Tensor64| -> Result<Tensor64, TensorError> {
            let labels: Vec<usize> = flags.iter().map(|&f| usize::from(f)).collect();
            cross_entropy(&head.logits(x).map_err(unwrap_tensor)?, &labels)
        };
        let a = analytic_grad(reversed, &feats).unwrap();
        let n = finite_difference_grad(plain, &feats, 1e-6).unwrap();
        let expect: Vec<f64> = n.iter().map(|g| -scale * g).collect();
        if scale == 0.0 {
            assert!(a.iter().all(|&g| g == 0.0));
        } else {
            assert!(relative_error(&a, &expect) < 1e-4);
        }
    }
    let x = Tensor64::param(&[2], vec![1.0, -2.0]).unwrap();
    let y = grad_reverse(&x, 0.5).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

fn unwrap_tensor(e: vidalign::Error) -> TensorError {
    match e {
        vidalign::Error::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

#[test]
fn ramp_runs_from_zero_to_nearly_one() {
    assert_eq!(grl_ramp(0.0), 0.0);
    assert!(grl_ramp(1.0) > 0.99);
    assert!(grl_ramp(0.3) < grl_ramp(0.6));
}

#[test]
fn discrepancy_extremes() {
    let a = randn(&mut SeededRng::new(5), 4, 3);
    assert_eq!(mcd_discrepancy(&a, &a).unwrap().item(), 0.0);
    let l1 = Tensor64::from_vec(&[2, 2], vec![100.0, -100.0, 100.0, -100.0]).unwrap();
    let l2 = Tensor64::from_vec(&[2, 2], vec![-100.0, 100.0, -100.0, 100.0]).unwrap();
    assert_abs_diff_eq!(mcd_discrepancy(&l1, &l2).unwrap().item(), 2.0, epsilon = 1e-12);
}

/// A linear encoder feeding two linear heads; one MCD iteration at a small
/// rate must lower the target discrepancy through the encoder step.
#[test]
fn encoder_step_reduces_discrepancy() {
    let mut rng = SeededRng::new(6);
    let w = Tensor64::param(&[4, 3], rng.normal_vec(12, 0.5)).unwrap();
    let wb = Tensor64::param(&[3], vec![0.0; 3]).unwrap();
    let c1 = Tensor64::param(&[3, 2], rng.normal_vec(6, 1.0)).unwrap();
    let c2 = Tensor64::param(&[3, 2], rng.normal_vec(6, 1.0)).unwrap();
    let b1 = Tensor64::param(&[2], vec![0.0; 2]).unwrap();
    let b2 = Tensor64::param(&[2], vec![0.0; 2]).unwrap();
    let xs = randn(&mut rng, 6, 4);
    let xt = randn(&mut rng, 6, 4);
    let features = || -> vidalign::Result<(Tensor64, Tensor64)> { Ok((linear(&xs, &w, &wb)?, linear(&xt, &w, &wb)?)) };
    let heads = |f: &Tensor64| -> vidalign::Result<(Tensor64, Tensor64)> { Ok((linear(f, &c1, &b1)?, linear(f, &c2, &b2)?)) };
    let labels = [0, 1, 0, 1, 1, 0];
    let step = McdStep {
        features: &features,
        heads: &heads,
        encoder: vec![("w", &w), ("wb", &wb)],
        classifiers: vec![("c1", &c1), ("b1", &b1), ("c2", &c2), ("b2", &b2)],
        source_labels: &labels,
        pseudo: None,
    };
    let mut opt = Sgd::new(SgdConfig { momentum: 0.0, weight_decay: 0.0 });
    let report = mcd_step(&step, &mut opt, 1e-2).unwrap();
    let (_, ft) = features().unwrap();
    let (t1, t2) = heads(&ft).unwrap();
    let after = mcd_discrepancy(&t1, &t2).unwrap().item();
    assert!(after < report.discrepancy_min, "{after} vs {}", report.discrepancy_min);
    assert!(report.discrepancy_max > 0.0 && report.source_ce > 0.0);
}

fn infonce_oracle(s: &Tensor64, ls: &[usize], t: &Tensor64, lt: &[usize], tau: f64) -> f64 {
    let norm = |v: &Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let s: Vec<Vec<f64>> = rows(s).iter().map(norm).collect();
    let t: Vec<Vec<f64>> = rows(t).iter().map(norm).collect();
    let sim = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / tau;
    let mut total = 0.0;
    let mut anchors = 0;
    let mut side = |anchors_v: &[Vec<f64>], la: &[usize], cands: &[Vec<f64>], lc: &[usize]| {
        for (a, &l) in anchors_v.iter().zip(la) {
            let pos: Vec<usize> = (0..cands.len()).filter(|&j| lc[j] == l).collect();
            if pos.is_empty() {
                continue;
            }
            let z: f64 = cands.iter().map(|c| sim(a, c).exp()).sum();
            let mean_log: f64 = pos.iter().map(|&j| (sim(a, &cands[j]).exp() / z).ln()).sum::<f64>() / pos.len() as f64;
            total -= mean_log;
            anchors += 1;
        }
    };
    side(&s, ls, &t, lt);
    side(&t, lt, &s, ls);
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

#[test]
fn infonce_matches_scalar_oracle() {
    // Hand-set: two anchors per side, one positive and one negative each.
    let s = Tensor64::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let t = Tensor64::from_vec(&[2, 2], vec![0.6, 0.8, 0.8, 0.6]).unwrap();
    let got = infonce_cross_domain_loss(&s, &[0, 1], &t, &[0, 1], 0.1).unwrap().item();
    // Every anchor sees its positive at 0.6 and its negative at 0.8.
    let hand = -((6.0f64).exp() / ((6.0f64).exp() + (8.0f64).exp())).ln();
    assert_abs_diff_eq!(got, hand, epsilon = 1e-10);
    for seed in 0..10 {
        let mut rng = SeededRng::stream(seed, 90);
        let s = randn(&mut rng, 5, 4);
        let t = randn(&mut rng, 6, 4);
        let ls = common::random_labels(&mut rng, 5, 3);
        let lt = common::random_labels(&mut rng, 6, 3);
        let got = infonce_cross_domain_loss(&s, &ls, &t, &lt, 0.1).unwrap().item();
        assert_abs_diff_eq!(got, infonce_oracle(&s, &ls, &t, &lt, 0.1), epsilon = 1e-10);
    }
}

#[test]
fn infonce_edge_cases() {
    let s = Tensor64::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
    let t = Tensor64::from_vec(&[1, 2], vec![-1.0, 0.5]).unwrap();
    assert_abs_diff_eq!(infonce_cross_domain_loss(&s, &[3], &t, &[3], 0.1).unwrap().item(), 0.0, epsilon = 1e-12);
    assert_eq!(infonce_cross_domain_loss(&s, &[1], &t, &[2], 0.1).unwrap().item(), 0.0);
    assert!(infonce_cross_domain_loss(&s, &[1], &t, &[1], 0.0).is_err());
    // Duplicating the candidate set changes the denominator.
    let mut rng = SeededRng::new(91);
    let s = randn(&mut rng, 3, 4);
    let t = randn(&mut rng, 3, 4);
    let base = infonce_cross_domain_loss(&s, &[0, 1, 2], &t, &[0, 1, 1], 0.1).unwrap().item();
    let t2 = Tensor64::concat(&[t.clone(), t.clone()], 0).unwrap();
    let doubled = infonce_cross_domain_loss(&s, &[0, 1, 2], &t2, &[0, 1, 1, 0, 1, 1], 0.1).unwrap().item();
    assert!((base - doubled).abs() > 1e-6);
}

fn vicreg_oracle(s: &Tensor64, t: &Tensor64) -> f64 {
    let (s, t) = (rows(s), rows(t));
    let (b, d) = (s.len(), s[0].len());
    let inv = s.iter().zip(&t).map(|(a, c)| sq_dist(a, c)).sum::<f64>() / (b * d) as f64;
    let side = |z: &[Vec<f64>]| {
        let mean: Vec<f64> = (0..d).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / b as f64).collect();
        let cov = |i: usize, j: usize| z.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (b - 1) as f64;
        let hinge: f64 = (0..d).map(|j| (1.0 - (cov(j, j) + 1e-8).sqrt()).max(0.0)).sum();
        let mut off = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    off += cov(i, j).powi(2);
                }
            }
        }
        (hinge, off / d as f64)
    };
    let (vs, cs) = side(&s);
    let (vt, ct) = side(&t);
    25.0 * inv + 25.0 * (vs + vt) + (cs + ct)
}

#[test]
fn vicreg_matches_double_loop_oracle() {
    let w = VicRegWeights::default();
    for seed in 0..10 {
        let mut rng = SeededRng::stream(seed, 95);
        let s = randn(&mut rng, 4, 3).scale(0.7).unwrap();
        let t = randn(&mut rng, 4, 3);
        let got = vicreg_cross_domain_loss(&s, &t, w).unwrap().unwrap().item();
        assert_abs_diff_eq!(got, vicreg_oracle(&s, &t), epsilon = 1e-10);
    }
}

#[test]
fn vicreg_trivial_cases() {
    let w = VicRegWeights::default();
    // Orthogonal ±2 columns: per-feature std above one and zero covariance.
    let z = Tensor64::from_vec(&[4, 2], vec![2.0, 2.0, 2.0, -2.0, -2.0, 2.0, -2.0, -2.0]).unwrap();
    assert_abs_diff_eq!(vicreg_cross_domain_loss(&z, &z, w).unwrap().unwrap().item(), 0.0, epsilon = 1e-12);
    let flat = Tensor64::full(&[5, 3], 0.4);
    let collapsed = vicreg_cross_domain_loss(&flat, &flat, w).unwrap().unwrap().item();
    assert_abs_diff_eq!(collapsed, 25.0 * 3.0 * 2.0 * (1.0 - 1e-4), epsilon = 1e-9);
    let one = Tensor64::zeros(&[1, 3]);
    assert!(vicreg_cross_domain_loss(&one, &one, w).unwrap().is_none());
}

#[test]
fn target_ce_oracle_and_extremes() {
    let logits = Tensor64::from_vec(&[2, 3], vec![0.2, -1.0, 3.0, 1.5, 0.5, -0.5]).unwrap();
    let lse = |r: &[f64]| r.iter().map(|v| v.exp()).sum::<f64>().ln();
    let oracle = 0.5 * ((lse(&[0.2, -1.0, 3.0]) - 3.0) + (lse(&[1.5, 0.5, -0.5]) - 0.5));
    assert_abs_diff_eq!(target_pseudo_ce(&logits, &[2, 1], 1.0).unwrap().item(), oracle, epsilon = 1e-12);
    assert_abs_diff_eq!(target_pseudo_ce(&logits, &[2, 1], 0.5).unwrap().item(), 0.5 * oracle, epsilon = 1e-12);
    let uniform = Tensor64::zeros(&[4, 5]);
    assert_abs_diff_eq!(target_pseudo_ce(&uniform, &[0, 1, 2, 3], 1.0).unwrap().item(), 5f64.ln(), epsilon = 1e-9);
    let sharp = Tensor64::from_vec(&[1, 3], vec![0.0, 60.0, 0.0]).unwrap();
    assert!(target_pseudo_ce(&sharp, &[1], 1.0).unwrap().item() < 1e-20);
}

#[test]
fn every_baseline_gradient_matches_finite_differences() {
    let w = VicRegWeights::default();
    for seed in 0..5 {
        let mut rng = SeededRng::stream(seed, 99);
        let s = randn(&mut rng, 4, 3);
        let t = randn(&mut rng, 5, 3).add_scalar(0.3).unwrap();
        let tp = randn(&mut rng, 4, 3);
        let ls = [0, 1, 2, 1];
        let lt = [1, 0, 2, 2, 1];
        grad_check("mmd source", &s, Box::new(|x| mmd_loss(x, &t)), 1e-4);
        grad_check("mmd target", &t, Box::new(|x| mmd_loss(&s, x)), 1e-4);
        grad_check("infonce source", &s, Box::new(|x| infonce_cross_domain_loss(x, &ls, &t, &lt, 0.1)), 1e-4);
        grad_check("infonce target", &t, Box::new(|x| infonce_cross_domain_loss(&s, &ls, x, &lt, 0.1)), 1e-4);
        grad_check("vicreg", &s, Box::new(|x| Ok(vicreg_cross_domain_loss(x, &tp, w)?.unwrap())), 1e-4);
        grad_check("cross entropy", &t, Box::new(|x| cross_entropy(x, &[2, 0, 1, 1, 0])), 1e-4);
        grad_check("target ce", &s, Box::new(|x| target_pseudo_ce(x, &[0, 2, 2, 1], 0.7)), 1e-4);
        let head = DomainClassifier::<f64>::new(3, 4, &mut rng).unwrap();
        let joint = Tensor64::concat(&[s.clone(), t.clone()], 0).unwrap();
        let flags: Vec<bool> = (0..9).map(|i| i < 4).collect();
        let w1 = head.params.get("domain.fc1.weight").clone();
        grad_check(
            "adversarial head",
            &w1,
            Box::new(|x| {
                let h = linear(&joint, x, head.params.get("domain.fc1.bias"))?.relu()?;
                let logits = linear(&h, head.params.get("domain.fc2.weight"), head.params.get("domain.fc2.bias"))?;
                cross_entropy(&logits, &flags.iter().map(|&f| usize::from(f)).collect::<Vec<_>>())
            }),
            1e-4,
        );
        let l2 = randn(&mut rng, 5, 3);
        grad_check("mcd discrepancy", &t, Box::new(|x| mcd_discrepancy(x, &l2)), 1e-4);
    }
}

#[test]
fn baseline_losses_are_non_negative() {
    let w = VicRegWeights::default();
    for seed in 0..20 {
        let mut rng = SeededRng::stream(seed, 100);
        let s = randn(&mut rng, 6, 4);
        let t = randn(&mut rng, 6, 4);
        let ls = common::random_labels(&mut rng, 6, 3);
        let lt = common::random_labels(&mut rng, 6, 3);
        assert!(mmd_loss(&s, &t).unwrap().item() >= -1e-12);
        assert!(infonce_cross_domain_loss(&s, &ls, &t, &lt, 0.1).unwrap().item() >= 0.0);
        assert!(vicreg_cross_domain_loss(&s, &t, w).unwrap().unwrap().item() >= 0.0);
        assert!(mcd_discrepancy(&s, &t).unwrap().item() >= 0.0);
    }
}
