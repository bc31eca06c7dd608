#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use typescore::meta_eval::{Answer, Question};
use typescore_annotate::store::{is_swapped, GoldItem, PairTask, TaskImage, TaskPayload};
use typescore_annotate::Store;

pub fn image(model: &str, id: &str) -> TaskImage {
    TaskImage {
        model_id: model.into(),
        image_id: id.into(),
        path: format!("{model}/{id}.png"),
    }
}

pub fn pairs(n: usize) -> Vec<PairTask> {
    (0..n)
        .map(|i| PairTask {
            pair_id: format!("p{i}"),
            instruction_id: format!("ti-{i:03}"),
            instruction: format!("A sign that says \"Open {i}\""),
            a: image("alpha", &format!("a{i}")),
            b: image("beta", &format!("b{i}")),
        })
        .collect()
}

/// Ten gold items; answers alternate LEFT and RIGHT.
pub fn gold() -> Vec<GoldItem> {
    (0..10)
        .map(|i| GoldItem {
            gold_id: format!("g{i}"),
            instruction: format!("A banner reading \"Gold {i}\""),
            a: image("ref", &format!("ga{i}")),
            b: image("ref2", &format!("gb{i}")),
            question: Question::TextFidelity,
            answer: if i % 2 == 0 { Answer::Left } else { Answer::Right },
        })
        .collect()
}

/// Gold answers with the first `wrong` of them flipped.
pub fn gold_answers(wrong: usize) -> BTreeMap<String, Answer> {
    gold()
        .into_iter()
        .enumerate()
        .map(|(i, g)| (g.gold_id, if i < wrong { g.answer.flipped() } else { g.answer }))
        .collect()
}

pub fn open_store(dir: &Path, n_pairs: usize, seed: u64) -> Store {
    Store::create(dir, &pairs(n_pairs), &gold()).unwrap();
    Store::open(dir, seed).unwrap()
}

/// Answers every question with `canonical` translated to the shown layout.
pub fn shown(task: &TaskPayload, canonical: Answer) -> BTreeMap<Question, Answer> {
    let a = if is_swapped(task.presentation_seed) {
        canonical.flipped()
    } else {
        canonical
    };
    Question::ALL.into_iter().map(|q| (q, a)).collect()
}
