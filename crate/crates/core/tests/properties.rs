use proptest::prelude::*;

use seqdiff::data::{gen_dataset, split_streams, DataConfig, LabelSet, Normalizer};
use seqdiff::diffusion::{
    cfg_combine, eps_from_x0, posterior_mean, posterior_mean_from_eps, q_sample, x0_from_eps, GuidanceConfig,
};
use seqdiff::metrics::{frechet_distance, transition_distance};
use seqdiff::ndcore::{psd_sqrt, Matrix, SeedStream};
use seqdiff::sampling::{PromptStream, SegmentPlan};
use seqdiff::schedule::cosine_schedule;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn psd_sqrt_reconstructs(seed in any::<u64>(), n in 1usize..9, norm in 1e-3f64..1e3) {
        let mut rng = SeedStream::new(seed);
        let b = rng.gaussian(n, n + 2);
        let mut a = b.matmul_t(&b);
        let top = a.frobenius_norm();
        a = a.scale(norm / top);
        let s = psd_sqrt(&a).unwrap();
        let err = s.matmul(&s).sub(&a).frobenius_norm();
        prop_assert!(err < 1e-8, "reconstruction error {err:e}");
    }

    #[test]
    fn schedule_invariants(steps in 2usize..1000) {
        let s = cosine_schedule(steps).unwrap();
        let (betas, alphas, ab, pv) = (s.betas(), s.alphas(), s.alpha_bars(), s.posterior_vars());
        for t in 0..steps {
            prop_assert!(betas[t] > 0.0 && betas[t] <= 0.999);
            prop_assert!(ab[t] > 0.0 && ab[t] < 1.0);
            let prev = if t == 0 { 1.0 } else { ab[t - 1] };
            prop_assert!((ab[t] - prev * alphas[t]).abs() < 1e-12);
            let ratio = (1.0 - prev) / (1.0 - ab[t]);
            prop_assert!((pv[t] / betas[t] - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_parameterizations_agree(seed in any::<u64>(), t in 1usize..=100) {
        let s = cosine_schedule(100).unwrap();
        let mut rng = SeedStream::new(seed);
        let x0 = rng.gaussian(4, 3).scale(2.0);
        let eps = rng.gaussian(4, 3);
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        prop_assert!(x0_from_eps(&xt, &eps, t, &s).unwrap().sub(&x0).max_abs() < 1e-10);
        prop_assert!(eps_from_x0(&xt, &x0, t, &s).unwrap().sub(&eps).max_abs() < 1e-10);
        let a = posterior_mean(&xt, &x0, t, &s).unwrap();
        let b = posterior_mean_from_eps(&xt, &eps, t, &s).unwrap();
        prop_assert!(a.sub(&b).max_abs() < 1e-10);
    }

    #[test]
    fn unit_guidance_is_conditional(seed in any::<u64>()) {
        let mut rng = SeedStream::new(seed);
        let c = rng.gaussian(5, 4);
        let u = rng.gaussian(5, 4).scale(100.0);
        prop_assert_eq!(cfg_combine(&c, &u, GuidanceConfig::conditional_only()).unwrap(), c);
    }

    #[test]
    fn composed_weights_sum_to_one(lengths in prop::collection::vec(1usize..30, 1..6), half in 0usize..8) {
        let ltr = (2 * half).min(*lengths.iter().min().unwrap() / 2 * 2);
        let plan = SegmentPlan::new(&lengths, ltr).unwrap();
        for i in 0..plan.total_len() {
            let cover = plan.coverage(i);
            prop_assert!(!cover.is_empty() && cover.len() <= 2);
            prop_assert_eq!(cover.iter().map(|c| c.1).sum::<f64>(), 1.0);
            for (v, _) in cover {
                let (a, b) = plan.views()[v];
                prop_assert!(a <= i && i < b);
            }
        }
        // Identical content in every view composes back to itself.
        let m = SeedStream::new(lengths.len() as u64).gaussian(plan.total_len(), 2);
        let back = plan.compose(&plan.split(&m).unwrap()).unwrap();
        prop_assert!(back.sub(&m).max_abs() < 1e-15);
    }

    #[test]
    fn transition_distance_ignores_shared_shift(seed in any::<u64>(), shift in prop::array::uniform4(-50.0f64..50.0)) {
        let mut rng = SeedStream::new(seed);
        let a = rng.gaussian(6, 4);
        let b = rng.gaussian(5, 4);
        let move_by = |m: &Matrix| Matrix::from_fn(m.rows(), 4, |r, c| m.get(r, c) + shift[c]);
        let d0 = transition_distance(&a, &b).unwrap();
        let d1 = transition_distance(&move_by(&a), &move_by(&b)).unwrap();
        prop_assert!((d0 - d1).abs() < 1e-9);
    }

    #[test]
    fn frechet_is_symmetric_and_non_negative(seed in any::<u64>(), shift in -3.0f64..3.0) {
        let mut rng = SeedStream::new(seed);
        let a: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let b: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| shift + 1.5 * rng.normal()).collect()).collect();
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
        prop_assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn corpus_tiles_and_stays_continuous(seed in any::<u64>()) {
        let cfg = DataConfig { num_streams: 12, test_streams: 4, seed, ..DataConfig::default() };
        let streams = gen_dataset(&cfg).unwrap();
        for s in &streams {
            let total: usize = s.segments().iter().map(|g| g.len).sum();
            prop_assert_eq!(total, s.frames().len());
            for b in s.boundaries() {
                let (p, q) = (s.frames().frame(b - 1), s.frames().frame(b));
                let step = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                prop_assert!(step <= cfg.step_bound);
            }
        }
        let (train, test) = split_streams(streams.clone(), cfg.test_streams, seed);
        prop_assert_eq!(test.len(), 4);
        prop_assert_eq!(train.len() + test.len(), streams.len());
        for t in &test {
            prop_assert!(!train.contains(t));
        }
    }

    #[test]
    fn normalizer_round_trips(seed in any::<u64>()) {
        let cfg = DataConfig { num_streams: 6, test_streams: 0, seed, ..DataConfig::default() };
        let streams = gen_dataset(&cfg).unwrap();
        let n = Normalizer::fit(&streams).unwrap();
        let m = streams[0].frames().frames();
        prop_assert!(n.denormalize(&n.normalize(m)).sub(m).max_abs() < 1e-12);
    }

    #[test]
    fn stream_spec_round_trips(items in prop::collection::vec((0usize..8, 1usize..64), 1..6)) {
        let labels = LabelSet::default_set();
        let spec: Vec<String> = items.iter().map(|(l, n)| format!("{}:{n}", labels.name(*l).unwrap())).collect();
        let parsed = PromptStream::parse(&spec.join(","), &labels).unwrap();
        let got: Vec<(usize, usize)> = parsed.prompts().iter().map(|p| (p.label, p.len)).collect();
        prop_assert_eq!(got, items);
    }
}
