//! Shared fixtures for the benchmarks: a small synthetic corpus, a briefly
//! trained model and its top-K lists.

use counter_core::corpus::{build_matrices, split};
use counter_core::recsys::{recommend_top_k, train};
use counter_core::synth::generate;
use counter_core::{AspectMatrices, RankedList, RecommenderModel, SynthSpec, TrainHyper};

pub const K: usize = 5;

pub struct Fixture {
    pub matrices: AspectMatrices,
    pub model: RecommenderModel,
    pub lists: Vec<RankedList>,
}

pub fn fixture() -> Fixture {
    let spec = SynthSpec {
        m: 40,
        n: 200,
        r: 12,
        density: 0.05,
        seed: 1,
        ..SynthSpec::default()
    };
    let (corpus, _) = generate(&spec).expect("synthetic corpus");
    let s = split(&corpus);
    let matrices = build_matrices(&corpus, &s);
    let hyper = TrainHyper {
        epochs: 5,
        batch_size: 16,
        ..TrainHyper::default()
    };
    let model = train(&matrices, &hyper, 1).expect("training").model;
    let lists = s
        .evaluable_users()
        .map(|u| recommend_top_k(u, K, &model, &matrices).expect("top-k list"))
        .collect();
    Fixture {
        matrices,
        model,
        lists,
    }
}
