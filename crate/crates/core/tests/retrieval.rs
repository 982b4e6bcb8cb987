//! Retrieval stages chained together on the synthetic paraphrase corpus.

use dapt_core::fixtures::{retrieval_fixture, retrieval_judge, retrieval_qgen};
use dapt_core::retrieval::{
    generate_samples, hit_rate, train_embedder, DenseEmbedder, PassageIndex, SampleGenConfig, Scorer, TrainConfig,
    DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_TEMPERATURE,
};

#[test]
fn loss_decreases_over_first_five_epochs() {
    let fx = retrieval_fixture();
    let index = PassageIndex::build(fx.passages.clone()).unwrap();
    let cfg = SampleGenConfig {
        n_samples: 400,
        seed: 2,
        ..Default::default()
    };
    let samples = generate_samples(
        &index,
        &retrieval_qgen(fx.lexicon.clone()),
        &retrieval_judge(fx.lexicon.clone()),
        Scorer::Bm25,
        &cfg,
    )
    .unwrap();
    let init = DenseEmbedder::random(DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_TEMPERATURE, 8);
    let train = TrainConfig {
        epochs: 5,
        learning_rate: 0.01,
        seed: 3,
    };
    let out = train_embedder(init, &samples, &index, &train).unwrap();
    assert!(
        out.epoch_losses.windows(2).all(|w| w[1] < w[0]),
        "{:?}",
        out.epoch_losses
    );
}

#[test]
fn stored_vectors_match_fresh_embedding() {
    let fx = retrieval_fixture();
    let mut index = PassageIndex::build(fx.passages.clone()).unwrap();
    let e = DenseEmbedder::random(1 << 10, 16, DEFAULT_TEMPERATURE, 1);
    assert!(index.retrieve("x", 3, Scorer::Stored(&e)).is_err());
    index.attach_dense(&e);
    let q = &fx.queries[0].query;
    assert_eq!(
        index.retrieve(q, 8, Scorer::Stored(&e)).unwrap(),
        index.retrieve(q, 8, Scorer::Dense(&e)).unwrap()
    );
    let stored = hit_rate(&index, &fx.queries, 8, Scorer::Stored(&e)).unwrap();
    let fresh = hit_rate(&index, &fx.queries, 8, Scorer::Dense(&e)).unwrap();
    assert_eq!(stored, fresh);
}

#[test]
fn saved_index_round_trips_with_vectors() {
    let fx = retrieval_fixture();
    let mut index = PassageIndex::build(fx.passages[..20].to_vec()).unwrap();
    let e = DenseEmbedder::random(1 << 10, 16, DEFAULT_TEMPERATURE, 1);
    index.attach_dense(&e);
    let dir = tempfile::tempdir().unwrap();
    index.save(dir.path()).unwrap();
    let back = PassageIndex::load(dir.path()).unwrap();
    let q = "how do signals relate";
    assert_eq!(
        back.retrieve(q, 5, Scorer::Stored(&e)).unwrap(),
        index.retrieve(q, 5, Scorer::Stored(&e)).unwrap()
    );
    assert_eq!(back.retrieve(q, 5, Scorer::Bm25).unwrap(), index.retrieve(q, 5, Scorer::Bm25).unwrap());
}
