//! Library-level pipeline: dataset generation, storage, training, evaluation.

use superopt::asm;
use superopt::data::{self, Dataset, GenParams, HD_OUTPUT_MASK};
use superopt::isa::Isa;
use superopt::learn::{mean_score, train, ModelKind, Proposal, TrainConfig, TrainState};
use superopt::mcmc::SearchConfig;

fn small_hd(isa: &Isa) -> Dataset {
    data::generate(
        isa,
        GenParams::HdAugment {
            variants: 4,
            walk_budget: 300,
        },
        1,
    )
    .unwrap()
}

#[test]
fn references_render_and_parse_back() {
    let isa = Isa::standard();
    for task in data::hd_tasks(&isa) {
        let text = asm::render(&isa, &task.reference);
        assert_eq!(asm::parse(&isa, &text).unwrap(), task.reference, "task {}", task.id);
    }
}

#[test]
fn augmented_programs_pass_their_tests() {
    let isa = Isa::standard();
    let ds = small_hd(&isa);
    let tasks = data::hd_tasks(&isa);
    for e in ds.train.iter().chain(&ds.test) {
        let task = &tasks[e.task.unwrap() as usize - 1];
        for tc in &e.tests {
            assert_eq!(tc.mask, HD_OUTPUT_MASK);
            let out = isa.execute(&e.start, &tc.input).unwrap();
            assert_eq!(out.regs[0], task.oracle(tc.input.regs[0], tc.input.regs[1]), "{}", e.id);
        }
    }
}

#[test]
fn stored_dataset_trains_like_the_original() {
    let isa = Isa::standard();
    let ds = small_hd(&isa);
    let dir = tempfile::tempdir().unwrap();
    ds.write(&isa, dir.path()).unwrap();
    let back = Dataset::read(&isa, dir.path()).unwrap();
    assert_eq!(back.train, ds.train);
    assert_eq!(back.test, ds.test);

    let mut config = TrainConfig::new(ModelKind::Bias, 1.0);
    config.epochs = 3;
    config.minibatch = 8;
    config.rollouts = 8;
    config.eval_runs = 2;
    config.search = SearchConfig {
        budget: 100,
        ..SearchConfig::default()
    };
    let run = |d: &Dataset| {
        let mut state = TrainState::init(&isa, &config);
        let curve = train(&isa, &d.train, &d.test, &mut state, &config, |_, _| {}).unwrap();
        (state, curve)
    };
    let (state, curve) = run(&ds);
    let (state_back, curve_back) = run(&back);
    assert_eq!(state.model.params(), state_back.model.params());
    assert_eq!(curve, curve_back);
    assert_eq!(curve.len(), 4);
    assert!(state.model.params().iter().all(|p| p.is_finite()));
    assert!(state.model.params().iter().any(|&p| p != 0.0));

    // The trained proposal is no worse than Uniform on the programs it saw.
    let search = config.search;
    let uniform = mean_score(&isa, &ds.train, Proposal::Uniform, &search, 10, 5).unwrap();
    let learned = mean_score(&isa, &ds.train, Proposal::Model(&state.model), &search, 10, 5).unwrap();
    assert!(learned <= uniform + 0.02, "learned {learned} vs uniform {uniform}");
}
