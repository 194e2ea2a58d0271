// Scratch: recovery ceiling at long horizons (per-word fixation regime).
// Not part of the test suite.

use helprank_core::inference::Trainer;
use helprank_core::model::HyperParams;
use helprank_core::synth::{generate, well_separated_config};

fn main() {
    for (delta, iters) in [(0.001f64, 150usize), (0.01, 150)] {
        let mut recs = Vec::new();
        let mut hists = Vec::new();
        for seed in 0..5u64 {
            let mut cfg = well_separated_config(2, 2, 10, 150, 10, 40, 200 + seed);
            cfg.true_theta = vec![0.8, 0.2, 0.2, 0.8];
            cfg.true_pi = vec![0.5, 0.5, 0.0, 1.0];
            for (i, v) in cfg.psi_star.xi.iter_mut().enumerate() {
                *v = if i % 2 == 0 { 0.3 } else { -0.3 };
            }
            let output = generate(&cfg).unwrap();
            let hyper = HyperParams {
                e_levels: 2,
                facets: 2,
                delta,
                mu: 0.01,
                outer_iterations: iters,
                seed: 700 + seed,
                convergence_tol: 0.0,
                ..HyperParams::default()
            };
            let trainer = Trainer::new(&output.split, output.vocab, &hyper).unwrap();
            let outcome = trainer.train().unwrap();
            let mut hist = [0usize; 2];
            for &e in &outcome.assignments.expertise {
                hist[(e - 1) as usize] += 1;
            }
            hists.push(hist);
            let w_count = cfg.vocab_size;
            let top = |probs: &[f64]| {
                let mut o: Vec<usize> = (0..probs.len()).collect();
                o.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
                o.truncate(5);
                o
            };
            let mut matched = 0usize;
            for level in 0..2usize {
                let truth: Vec<Vec<usize>> = (0..2)
                    .map(|z| top(&cfg.true_phi[(level * 2 + z) * w_count..(level * 2 + z + 1) * w_count]))
                    .collect();
                let learned: Vec<Vec<usize>> = (0..2)
                    .map(|z| {
                        let probs: Vec<f64> = (0..w_count as u32)
                            .map(|w| outcome.state.phi((level + 1) as u32, z as u32, w))
                            .collect();
                        top(&probs)
                    })
                    .collect();
                let id = truth[0].iter().filter(|w| learned[0].contains(w)).count()
                    + truth[1].iter().filter(|w| learned[1].contains(w)).count();
                let sw = truth[0].iter().filter(|w| learned[1].contains(w)).count()
                    + truth[1].iter().filter(|w| learned[0].contains(w)).count();
                matched += id.max(sw);
            }
            recs.push(matched * 5); // % of 20
        }
        println!("delta {delta} iters {iters}: recovery {recs:?}%  levels {hists:?}");
    }
}
