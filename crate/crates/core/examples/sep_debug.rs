// Scratch diagnostics for one recovery run. Not part of the test suite.

use helprank_core::inference::Trainer;
use helprank_core::model::HyperParams;
use helprank_core::synth::{generate, well_separated_config};

fn main() {
    let seed = 703u64;
    let cfg = well_separated_config(2, 3, 10, 150, 10, 30, 200 + (seed - 700));
    let output = generate(&cfg).unwrap();
    let hyper = HyperParams {
        e_levels: 2,
        facets: 3,
        mu: 0.01,
        outer_iterations: 30,
        seed,
        ..HyperParams::default()
    };
    let trainer = Trainer::new(&output.split, output.vocab, &hyper).unwrap();
    let outcome = trainer.train().unwrap();

    let mut agree = 0usize;
    for (i, r) in output.split.train.iter().enumerate() {
        if outcome.assignments.expertise[i] == output.truth.expertise[r.review_index as usize] {
            agree += 1;
        }
    }
    println!(
        "expertise agreement: {agree}/{} ({:.0}%)",
        output.split.train.len(),
        100.0 * agree as f64 / output.split.train.len() as f64
    );

    let w_count = cfg.vocab_size;
    let top = |probs: &[f64], k: usize| {
        let mut o: Vec<usize> = (0..probs.len()).collect();
        o.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
        o.truncate(k);
        o
    };
    for level in 0..2usize {
        for z in 0..3usize {
            let cell = level * 3 + z;
            let truth = top(&cfg.true_phi[cell * w_count..(cell + 1) * w_count], 5);
            println!("true   (e{} z{z}): {truth:?}  [block {}..{})", level + 1, cell * 10, (cell + 1) * 10);
        }
        for z in 0..3usize {
            let probs: Vec<f64> = (0..w_count as u32)
                .map(|w| outcome.state.phi((level + 1) as u32, z as u32, w))
                .collect();
            let mass: f64 = outcome.state.word_row_totals
                [outcome.state.row_index((level + 1) as u32, z as u32)] as f64;
            println!(
                "learned(e{} z{z}): {:?}  tokens {mass}",
                level + 1,
                top(&probs, 5)
            );
        }
    }
}
