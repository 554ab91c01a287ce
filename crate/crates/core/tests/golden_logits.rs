use lglab::model::{HeadId, Model, ModelConfig, PositionalEmbeddings, SoftmaxMode};
use lglab::numerics::Activation;
use serde::{Deserialize, Serialize};

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/toy_logits_seed7.json");

#[derive(Serialize, Deserialize)]
struct Golden {
    seed: u64,
    config: ModelConfig,
    tokens: Vec<u32>,
    main: Vec<Vec<f64>>,
    aux: Vec<Vec<f64>>,
}

fn toy() -> ModelConfig {
    ModelConfig {
        depth: 2,
        d: 16,
        heads: 4,
        d_mlp: 32,
        vocab: 103,
        activation: Activation::Gelu,
        softmax_mode: SoftmaxMode::Standard,
        context_length: 16,
        positional_embeddings: PositionalEmbeddings::None,
    }
}

fn rows(model: &Model, tokens: &[u32], head: HeadId) -> Vec<Vec<f64>> {
    let logits = model.forward(tokens, 5, head, false).unwrap().logits;
    (0..logits.rows()).map(|i| logits.row(i).to_vec()).collect()
}

/// `[5, 17, 43, 78, 92, ⊥]` through the seed-7 toy model. Set
/// `LGLAB_BLESS=1` to rewrite the stored logits.
#[test]
fn toy_model_reproduces_stored_logits() {
    let tokens = vec![6, 18, 44, 79, 93, 1];
    let model = Model::<f64>::init(toy(), 7).unwrap();
    let current = Golden { seed: 7, config: toy(), main: rows(&model, &tokens, HeadId::Main), aux: rows(&model, &tokens, HeadId::Aux), tokens };
    if std::env::var_os("LGLAB_BLESS").is_some() {
        std::fs::write(GOLDEN, serde_json::to_string_pretty(&current).unwrap() + "\n").unwrap();
        return;
    }
    let stored: Golden = serde_json::from_str(&std::fs::read_to_string(GOLDEN).expect("golden file")).unwrap();
    assert_eq!((stored.seed, &stored.config, &stored.tokens), (current.seed, &current.config, &current.tokens));
    for (want, got) in [(&stored.main, &current.main), (&stored.aux, &current.aux)] {
        assert_eq!(want.len(), 6);
        for (w, g) in want.iter().flatten().zip(got.iter().flatten()) {
            assert!((w - g).abs() <= 1e-12 * w.abs().max(1.0), "{w} vs {g}");
        }
    }
}
