use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::forge::SurrogateEnsemble;
use crate::nn::{Activation, ModelSpec, Weights};

fn hand_profile(components: Vec<Vec<f64>>, target: Option<Vec<f64>>) -> LossProfile {
    LossProfile::new(vec![0.5], components, target).unwrap()
}

fn random_profile(rng: &mut ChaCha8Rng, components: usize, per: usize, targets: usize) -> LossProfile {
    let by = (0..components)
        .map(|_| (0..per).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let target = (0..targets).map(|_| rng.gen::<f64>()).collect();
    LossProfile::new(vec![0.0], by, Some(target)).unwrap()
}

fn tiny_ensemble(seed: u64, components: usize, snapshots: usize) -> SurrogateEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = (0..components)
        .map(|i| {
            let spec = if i % 2 == 0 {
                ModelSpec::linear(3, 2).unwrap()
            } else {
                ModelSpec::mlp(3, &[5], 2, Activation::Tanh).unwrap()
            };
            (0..snapshots).map(|_| Weights::random(spec.clone(), &mut rng).unwrap()).collect()
        })
        .collect();
    SurrogateEnsemble::from_snapshots(comps, seed).unwrap()
}

#[test]
fn profile_arithmetic() {
    let p = hand_profile(vec![vec![0.2], vec![0.4]], None);
    assert!((p.risk() - 0.3).abs() < 1e-15);
    let same = hand_profile(vec![vec![0.7, 0.7, 0.7]], None);
    assert_eq!(variance_decomposition(&same).within, 0.0);
}

#[test]
fn profile_rejects_unbounded_or_ragged() {
    assert!(LossProfile::new(vec![], vec![vec![1.2]], None).is_err());
    assert!(LossProfile::new(vec![], vec![vec![0.2], vec![0.1, 0.3]], None).is_err());
    assert!(LossProfile::new(vec![], vec![], None).is_err());
    assert!(LossProfile::new(vec![], vec![vec![0.2]], Some(vec![])).is_err());
}

#[test]
fn profile_matches_model_by_model_loop() {
    let e = tiny_ensemble(1, 3, 2);
    let t = tiny_ensemble(2, 2, 2);
    let x = [0.2, 0.7, 0.4];
    let kind = LossKind::ClassProbability { label: 1 };
    let p = profile(&x, &e, Some(&t), kind).unwrap();
    let mut flat = Vec::new();
    for c in e.components() {
        for w in &c.snapshots {
            flat.push(w.loss(&x, kind).unwrap());
        }
    }
    assert_eq!(p.surrogate_losses(), flat);
    let target: Vec<f64> = t.models().map(|w| w.loss(&x, kind).unwrap()).collect();
    assert_eq!(p.target.as_deref().unwrap(), &target[..]);
    assert!(profile(&x, &e, None, LossKind::NegCrossEntropy { label: 0 }).is_err());
}

#[test]
fn tv_examples() {
    let p = hand_profile(vec![vec![0.3]], Some(vec![0.7]));
    assert!((d_tv(&[p]).unwrap() - 0.4).abs() < 1e-15);
    let q = hand_profile(vec![vec![0.1, 0.5]], Some(vec![0.5, 0.1]));
    assert_eq!(d_tv(&[q]).unwrap(), 0.0);
    assert_eq!(d_tv(&[]).unwrap(), 0.0);
    assert!(d_tv(&[hand_profile(vec![vec![0.1]], None)]).is_err());
}

#[test]
fn kl_examples() {
    let grid = default_t_grid();
    let same = hand_profile(vec![vec![0.2, 0.6, 0.9]], Some(vec![0.9, 0.2, 0.6]));
    let v = d_kl(&[same.clone()], &grid).unwrap();
    assert!(v >= 0.0 && v < 1e-12, "{v}");
    assert_eq!(d_kl(&[same], &[0.0]).unwrap(), 0.0);
    assert!(d_kl(&[], &[1.0]).is_err());
}

/// Two-level losses: target puts mass `p` on 1, surrogate mass `q`.
fn bernoulli_profile(p: f64, q: f64, n: usize) -> LossProfile {
    let ones = |frac: f64| -> Vec<f64> {
        let k = (frac * n as f64).round() as usize;
        (0..n).map(|i| if i < k { 1.0 } else { 0.0 }).collect()
    };
    hand_profile(vec![ones(q)], Some(ones(p)))
}

#[test]
fn kl_converges_to_bernoulli_kl() {
    for (p, q) in [(0.5, 0.25), (0.8, 0.5), (0.3, 0.3)] {
        let prof = bernoulli_profile(p, q, 20);
        let exact = bernoulli_undercoverage(p, q);
        let mut last_gap = f64::INFINITY;
        for per_sign in [10, 100, 1000] {
            let est = d_kl(&[prof.clone()], &log_grid(per_sign, 1e-3, 50.0)).unwrap();
            let gap = exact - est;
            assert!(gap >= -1e-12, "grid sup cannot exceed the true sup");
            assert!(gap <= last_gap + 1e-15);
            last_gap = gap;
        }
        assert!(last_gap < 1e-3, "({p},{q}) gap {last_gap}");
    }
}

#[test]
fn bernoulli_examples() {
    assert_eq!(bernoulli_undercoverage(0.4, 0.4), 0.0);
    let direct = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    assert!((bernoulli_undercoverage(0.5, 0.25) - direct).abs() < 1e-15);
    assert!((bernoulli_undercoverage(0.5, 0.25) - 0.14384).abs() < 1e-5);
    assert_eq!(bernoulli_undercoverage(0.5, 0.0), f64::INFINITY);
    assert_eq!(bernoulli_undercoverage(0.0, 0.0), 0.0);
    assert_eq!(bernoulli_undercoverage(1.0, 1.0), 0.0);
}

#[test]
fn chi2_examples() {
    let flat_delta = hand_profile(vec![vec![0.1, 0.5]], Some(vec![0.3]));
    assert_eq!(d_chi2(&[flat_delta]).unwrap(), 0.0);
    // Surrogate {0.1, 0.5}: mean 0.3, Var 0.04; target mean 0.5 gives Δ = 0.2.
    let p = hand_profile(vec![vec![0.1, 0.5]], Some(vec![0.5]));
    assert!((d_chi2(&[p]).unwrap() - 1.0).abs() < 1e-12);
    assert!((chi2_optimal_t(0.2, 0.04) - 10.0).abs() < 1e-12);
    let grid: Vec<f64> = (-5000..=5000).map(|i| i as f64 * 0.01).collect();
    assert!((chi2_grid_sup(0.2, 0.04, &grid) - 1.0).abs() < 1e-6);
    let singular = hand_profile(vec![vec![0.4, 0.4]], Some(vec![0.6]));
    assert_eq!(d_chi2(&[singular]).unwrap(), f64::INFINITY);
}

#[test]
fn k_s_examples() {
    let constant = [0.3; 5];
    assert_eq!(k_s(2.0, &constant, Phi::Chi2), 0.0);
    assert!(k_s(2.0, &constant, Phi::Kl).abs() < 1e-15);
    let coin = [0.0, 1.0];
    let direct = ((1.0 + 1f64.exp()) / 2.0).ln() - 0.5;
    assert!((k_s(1.0, &coin, Phi::Kl) - direct).abs() < 1e-15);
    let var04 = [0.1, 0.5];
    assert!((k_s(2.0, &var04, Phi::Chi2) - 0.04).abs() < 1e-15);
    assert_eq!(k_s(3.0, &var04, Phi::Tv), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let losses: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
    for &t in &default_t_grid() {
        assert!(k_s(t, &losses, Phi::Kl) >= 0.0);
        assert!(k_s(t, &losses, Phi::Chi2) >= 0.0);
    }
    assert_eq!(k_s(0.0, &losses, Phi::Kl), 0.0);
    assert_eq!(k_s(0.0, &losses, Phi::Chi2), 0.0);
}

/// Bisection for the root of `f` on `[lo, hi]`, with `f(lo) < 0 < f(hi)`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn feasibility_examples() {
    let losses = [0.2, 0.4, 0.6];
    let c1 = bisect(|c| c2_threshold(c, &losses, Phi::Kl).unwrap() - 1.0, 0.1, 5.0);
    assert!((c1 - 1.2564).abs() < 1e-4, "{c1}");
    assert!((1.0 / c1 - 0.796).abs() < 5e-4);
    let f = feasibility(c1 + 1e-9, 1.0, &losses, Phi::Kl).unwrap();
    assert!(!f.feasible && f.margin < 0.0);
    assert!(feasibility(c1 - 1e-9, 1.0, &losses, Phi::Kl).unwrap().feasible);

    let t = c2_threshold(1e-3, &losses, Phi::Kl).unwrap();
    assert!((t - 1e-3 / 2.0).abs() < 1e-5);

    // χ²: Var ≤ E[ℓ] for losses in [0, 1], so c₂ = c₁/4 is always enough and
    // c₂ = 1 admits c₁ = 4, a discrepancy coefficient of 0.25.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let l: Vec<f64> = (0..6).map(|_| rng.gen::<f64>()).collect();
        assert!(c2_threshold(4.0, &l, Phi::Chi2).unwrap() <= 1.0);
        assert!(feasibility(4.0, 1.0, &l, Phi::Chi2).unwrap().feasible);
    }
    let f = feasibility(4.0, 0.5, &[0.0, 1.0], Phi::Chi2).unwrap();
    assert!(f.feasible && f.margin.abs() < 1e-15);
    assert!(!feasibility(4.0 + 1e-9, 0.5, &[0.0, 1.0], Phi::Chi2).unwrap().feasible);

    assert!(feasibility(1.0, 0.0, &losses, Phi::Tv).unwrap().feasible);
    assert!(!feasibility(1.5, 0.0, &losses, Phi::Tv).unwrap().feasible);
    assert!(feasibility(0.0, 1.0, &losses, Phi::Kl).is_err());
    assert!(feasibility(-1.0, 1.0, &losses, Phi::Chi2).is_err());
}

#[test]
fn variance_decomposition_examples() {
    let p = hand_profile(vec![vec![0.2, 0.2], vec![0.4, 0.4]], None);
    let v = variance_decomposition(&p);
    assert!((v.between - 0.01).abs() < 1e-15 && v.within == 0.0 && (v.total - 0.01).abs() < 1e-15);
    let one = hand_profile(vec![vec![0.1, 0.9, 0.5]], None);
    let v = variance_decomposition(&one);
    assert_eq!(v.between, 0.0);
    assert!((v.total - v.within).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let i = rng.gen_range(1..6);
        let n = rng.gen_range(1..8);
        let v = variance_decomposition(&random_profile(&mut rng, i, n, 1));
        assert!((v.between + v.within - v.total).abs() < 1e-12);
    }
}

/// Independent transcription of the PAC term.
fn eps_pac_oracle(d: f64, k: f64, gamma: f64, rho: f64, delta: f64, r: f64) -> f64 {
    let inner = 1.0 + (gamma / rho).powi(2) * (1.0 + ((k.ln()) / d).sqrt()).powi(2);
    let o = 0.5 + 2.0 * (2.0 + 3.0 * d + 6.0 * r.powi(2) * k + 4.0 * d * ((d.sqrt()) + k.ln().sqrt()).ln()).ln();
    ((0.5 * d * inner.ln() + (k / delta).ln() + o) / (2.0 * (k - 1.0))).sqrt()
}

#[test]
fn eps_pac_examples() {
    let g = 4.0 / 255.0;
    let v = eps_pac(3072, 200, g, g, 0.05, 0.1).unwrap();
    assert!((v - eps_pac_oracle(3072.0, 200.0, g, g, 0.05, 0.1)).abs() < 1e-10);
    let collapsed = eps_pac(10, 100, 0.0, 0.3, 0.1, 0.2).unwrap();
    let o = 0.5 + 2.0 * (2.0 + 30.0 + 6.0 * 0.04 * 100.0 + 40.0 * (10f64.sqrt() + 100f64.ln().sqrt()).ln()).ln();
    assert!((collapsed - ((1000f64.ln() + o) / 198.0).sqrt()).abs() < 1e-15);
    let mut last = f64::INFINITY;
    for k in [50, 100, 200, 400, 800, 1600, 3200] {
        let v = eps_pac(20, k, 0.1, 0.1, 0.05, 0.3).unwrap();
        assert!(v < last);
        last = v;
    }
    let mut last = f64::INFINITY;
    for rho in [0.01, 0.02, 0.05, 0.1, 0.5] {
        let v = eps_pac(20, 100, 0.1, rho, 0.05, 0.3).unwrap();
        assert!(v < last);
        last = v;
    }
    assert!(eps_pac(20, 1, 0.1, 0.1, 0.05, 0.3).is_err());
    assert!(eps_pac(20, 10, 0.1, 0.0, 0.05, 0.3).is_err());
    assert!(eps_pac(20, 10, 0.1, 0.1, 1.0, 0.3).is_err());
    assert!(eps_pac(0, 10, 0.1, 0.1, 0.5, 0.3).is_err());
}

#[test]
fn sharpness_of_linear_and_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = 0.7;
    let linear = |p: &[f64]| Ok((0.5 + a * p[0], vec![a]));
    let s = sharpness_of(linear, &[0.0], 0.1, 20, 3, &mut rng).unwrap();
    assert!((s.value - a * 0.1).abs() <= 0.05 * a * 0.1, "{}", s.value);

    let curvature = 3.0;
    let center = [0.4, 0.6, 0.2];
    let bowl = |p: &[f64]| {
        let diff: Vec<f64> = p.iter().zip(&center).map(|(a, b)| a - b).collect();
        let v = curvature / 2.0 * diff.iter().map(|d| d * d).sum::<f64>();
        Ok((v, diff.iter().map(|d| curvature * d).collect()))
    };
    let rho = 0.2;
    let s = sharpness_of(bowl, &center, rho, 20, 3, &mut rng).unwrap();
    let exact = curvature / 2.0 * rho * rho;
    assert!((s.value - exact).abs() <= 0.05 * exact, "{} vs {exact}", s.value);

    let s = sharpness_of(bowl, &center, 0.0, 20, 3, &mut rng).unwrap();
    assert_eq!(s.value, 0.0);
}

#[test]
fn ensemble_sharpness_counts_calls() {
    let e = tiny_ensemble(3, 2, 2);
    let counter = crate::nn::GradCounter::new();
    let s = sharpness(&[0.5; 3], &e, LossKind::ClassProbability { label: 0 }, 0.05, 4, 2, 1, &counter).unwrap();
    assert!(s.value >= 0.0);
    assert_eq!(counter.get(), s.evaluations * e.len() as u64);
}

#[test]
fn estimators_are_monotone_in_r_and_vanish_without_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = log_grid(50, 1e-2, 20.0);
    for _ in 0..10 {
        let pool: Vec<LossProfile> = (0..15).map(|_| random_profile(&mut rng, 2, 3, 4)).collect();
        let mut last = [0.0; 3];
        for r in [0.1, 0.3, 0.5, 0.7, 1.0] {
            let set = CandidateSetXr::from_pool(&pool, &[0.0], 0.0, r).unwrap();
            let now = [
                d_tv(&set.candidates).unwrap(),
                d_kl(&set.candidates, &grid).unwrap(),
                d_chi2(&set.candidates).unwrap(),
            ];
            for (a, b) in now.iter().zip(&last) {
                assert!(a >= b);
            }
            last = now;
        }
        let mirrored: Vec<LossProfile> = pool
            .iter()
            .map(|p| {
                let mut t = p.surrogate_losses();
                t.reverse();
                LossProfile::new(p.candidate.clone(), p.by_component.clone(), Some(t)).unwrap()
            })
            .collect();
        assert_eq!(d_tv(&mirrored).unwrap(), 0.0);
        assert_eq!(d_chi2(&mirrored).unwrap(), 0.0);
        assert_eq!(d_kl(&mirrored, &grid).unwrap(), 0.0);
    }
}

#[test]
fn candidate_set_filters_by_risk_and_ball() {
    let near = LossProfile::new(vec![0.5], vec![vec![0.2]], None).unwrap();
    let far = LossProfile::new(vec![0.9], vec![vec![0.1]], None).unwrap();
    let risky = LossProfile::new(vec![0.5], vec![vec![0.8]], None).unwrap();
    let set = CandidateSetXr::from_pool(&[near.clone(), far, risky], &[0.5], 0.1, 0.5).unwrap();
    assert_eq!(set.candidates, vec![near]);
    assert!(CandidateSetXr::from_pool(&[], &[0.5], 0.1, 1.5).is_err());
}

#[test]
fn assembled_bound_is_sum_of_terms() {
    let e = tiny_ensemble(5, 4, 3);
    let t = tiny_ensemble(6, 2, 2);
    let x = [0.3, 0.5, 0.7];
    let kind = LossKind::ClassProbability { label: 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pool = candidate_pool(&x, &[x.to_vec()], 0.05, 20, &mut rng, &e, Some(&t), kind).unwrap();
    let set = CandidateSetXr::from_pool(&pool, &x, 0.05, 1.0).unwrap();
    let cfg = BoundConfig {
        phi: Phi::Chi2,
        c1: 1.0,
        c2: 1.0,
        r: 1.0,
        gamma: 0.05,
        rho: 0.05,
        ..BoundConfig::default()
    };
    let rep = assemble_bound(&x, &e, Some(&t), kind, &set, &cfg).unwrap();
    let sum: f64 = rep.terms().iter().map(|(_, v)| v).sum();
    assert!((rep.assembled - sum).abs() < 1e-12);
    assert!(rep.feasible && rep.margin >= 0.0);
    assert_eq!(rep.candidates, 21);
    assert_eq!(rep.csv_row().split(',').count(), BOUND_HEADER.split(',').count());

    let tight = BoundConfig { phi: Phi::Kl, c1: 2.0, c2: 0.1, ..cfg.clone() };
    let err = assemble_bound(&x, &e, Some(&t), kind, &set, &tight).unwrap_err();
    assert!(err.to_string().contains("kl requires"), "{err}");
}

#[test]
fn zero_shift_tv_bound() {
    let e = tiny_ensemble(7, 2, 2);
    let x = [0.4, 0.4, 0.4];
    let kind = LossKind::ClassProbability { label: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool = candidate_pool(&x, &[], 0.05, 10, &mut rng, &e, Some(&e), kind).unwrap();
    let set = CandidateSetXr::from_pool(&pool, &x, 0.05, 1.0).unwrap();
    let cfg = BoundConfig { phi: Phi::Tv, c1: 1.0, c2: 0.5, r: 0.4, gamma: 0.05, rho: 0.05, ..BoundConfig::default() };
    let rep = assemble_bound(&x, &e, Some(&e), kind, &set, &cfg).unwrap();
    assert_eq!(rep.d_hat, 0.0);
    assert!((rep.assembled - (rep.risk + rep.sharpness + 0.5 * 0.4 + rep.eps_pac)).abs() < 1e-15);
}

#[test]
fn csv_renders_infinity() {
    let rep = BoundReport {
        phi: Phi::Chi2,
        r: 0.5,
        c1: 1.0,
        c2: 1.0,
        risk: 0.1,
        sharpness: 0.0,
        d_hat: f64::INFINITY,
        k_s: 0.0,
        feasible: true,
        margin: 0.0,
        eps_pac: 0.3,
        assembled: f64::INFINITY,
        realized_target_risk: None,
        in_localized_space: true,
        candidates: 1,
    };
    assert_eq!(rep.csv_row(), "chi2,0.5,1,1,0,inf,0,0.3,inf,");
}

#[test]
fn phi_parses() {
    assert_eq!("KL".parse::<Phi>().unwrap(), Phi::Kl);
    assert_eq!("chi2".parse::<Phi>().unwrap(), Phi::Chi2);
    assert!("js".parse::<Phi>().is_err());
}
