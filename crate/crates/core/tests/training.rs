mod common;

use compgen::data::{generate, task_vocabulary, tagged_ids, tagging_vocabulary, DatasetSpec, LenRange, TaggedExample, Task};
use compgen::model::{checkpoint, Encoding, Mode, ModelConfig, ParentHead, Seq2SeqBatch, Transformer, Vocabulary};
use compgen::tensor::Graph;
use compgen::train::{train, TrainConfig, TrainSet};

fn toy_model(encoding: Encoding, copy: bool, d: usize, vocab: Vocabulary, seed: u64) -> Transformer<f32> {
    let c = ModelConfig {
        encoding,
        copy_decoder: copy,
        d_model: d,
        d_ff: 2 * d,
        heads: 2,
        layers: 1,
        max_len: 12,
        ..Default::default()
    };
    Transformer::new(c, vocab, None, seed).unwrap()
}

fn copy_data() -> Vec<(Vec<usize>, Vec<usize>)> {
    // every sequence over {3, 4, 5} of length 1..=3
    let mut out = Vec::new();
    for len in 1..=3u32 {
        for code in 0..3usize.pow(len) {
            let mut x = code;
            let seq: Vec<usize> = (0..len)
                .map(|_| {
                    let t = 3 + x % 3;
                    x /= 3;
                    t
                })
                .collect();
            out.push((seq.clone(), seq));
        }
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn toy_copy_task_loss_drops_below_tenth() {
    let data = copy_data();
    let mut m = toy_model(Encoding::Abs, false, 32, Vocabulary::new(["a", "b", "c"]), 3);
    let cfg = TrainConfig { epochs: 160, batch_size: 16, warmup: 100 };
    let log = train(&mut m, TrainSet::Seq2Seq(&data), &cfg, 0, None).unwrap();
    assert!(log.len() <= 500, "{} steps", log.len());
    let tail: Vec<f64> = log[log.len() - 10..].iter().map(|l| l.loss).collect();
    assert!(mean(&tail) < 0.1, "final loss {}", mean(&tail));
}

#[test]
fn same_seed_gives_identical_checkpoint_bytes() {
    let data = copy_data();
    let cfg = TrainConfig { epochs: 3, batch_size: 8, warmup: 20 };
    let bytes = |seed: u64| {
        let mut m = toy_model(Encoding::Rel2Eb, true, 16, Vocabulary::new(["a", "b", "c"]), seed);
        let log = train(&mut m, TrainSet::Seq2Seq(&data), &cfg, seed, None).unwrap();
        let mut buf = Vec::new();
        checkpoint::write_checkpoint(&m, &mut buf).unwrap();
        (buf, log.iter().map(|l| l.loss.to_bits()).collect::<Vec<_>>())
    };
    let (a, la) = bytes(5);
    let (b, lb) = bytes(5);
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let (c, _) = bytes(6);
    assert_ne!(a, c);
}

#[test]
fn labels_under_pad_do_not_affect_gradients() {
    let m = toy_model(Encoding::RelEb, true, 16, common::toy_vocab(), 1);
    let batch = common::toy_batch();
    let mut perturbed = batch.clone();
    for (i, keep) in batch.tgt_mask.iter().enumerate() {
        if !keep {
            perturbed.tgt_out[i] = 5;
        }
    }
    assert_ne!(batch.tgt_out, perturbed.tgt_out);
    let grads = |b: &Seq2SeqBatch| {
        let mut g = Graph::new();
        let loss = m.seq2seq_loss(&mut g, b).unwrap();
        g.backward(loss).unwrap();
        let v = g.value(loss).data()[0];
        let gs: Vec<Option<Vec<f32>>> = g.param_grads().into_iter().map(|(_, x)| x.map(|s| s.to_vec())).collect();
        (v, gs)
    };
    assert_eq!(grads(&batch), grads(&perturbed));
}

fn small_spec(task: Task) -> DatasetSpec {
    let (train_len, test_len) = match task {
        Task::Add | Task::AddNeg => ((1, 3), (4, 4)),
        Task::Cart => ((1, 2), (3, 3)),
        _ => ((1, 5), (6, 6)),
    };
    DatasetSpec {
        train_size: 800,
        test_size: 8,
        train_len: LenRange::new(train_len.0, train_len.1),
        test_len: LenRange::new(test_len.0, test_len.1),
        pad_width: 5,
        ..DatasetSpec::defaults(task)
    }
}

#[test]
fn loss_decreases_over_first_hundred_steps_on_every_task() {
    for task in [Task::Add, Task::AddNeg, Task::Reverse, Task::Dup, Task::Cart, Task::Inters, Task::RevDup] {
        let spec = small_spec(task);
        let splits = generate(&spec).unwrap();
        let vocab = task_vocabulary(&spec);
        let data: Vec<(Vec<usize>, Vec<usize>)> = splits
            .train
            .iter()
            .map(|e| (vocab.encode(&e.src).unwrap(), vocab.encode(&e.tgt).unwrap()))
            .collect();
        let c = ModelConfig { d_model: 16, d_ff: 32, heads: 2, layers: 1, max_len: 24, ..Default::default() };
        let mut m = Transformer::new(c, vocab, None, 0).unwrap();
        let cfg = TrainConfig { epochs: 8, batch_size: 64, warmup: 50 };
        let log = train(&mut m, TrainSet::Seq2Seq(&data), &cfg, 0, None).unwrap();
        assert!(log.len() >= 100);
        let first = mean(&log[..10].iter().map(|l| l.loss).collect::<Vec<_>>());
        let last = mean(&log[90..100].iter().map(|l| l.loss).collect::<Vec<_>>());
        assert!(last < first, "{}: {first} -> {last}", task.name());
    }
}

fn tagged(tokens: &[&str], parents: &[Option<usize>], role: &[&str]) -> TaggedExample {
    let n = tokens.len();
    let none = |_: usize| "_".to_string();
    TaggedExample {
        src: tokens.iter().map(|s| s.to_string()).collect(),
        parents: parents.to_vec(),
        labels: [
            role.iter().map(|s| s.to_string()).collect(),
            (0..n).map(none).collect(),
            (0..n).map(none).collect(),
            (0..n).map(none).collect(),
        ],
    }
}

#[test]
fn tagging_loss_decreases_for_every_parent_head() {
    let examples = vec![
        tagged(&["the", "cat", "ran"], &[Some(1), Some(2), None], &["det", "agent", "root"]),
        tagged(&["a", "dog", "sat"], &[Some(1), Some(2), None], &["det", "agent", "root"]),
        tagged(&["dogs", "ran"], &[Some(1), None], &["agent", "root"]),
    ];
    let (vocab, labels) = tagging_vocabulary(examples.iter());
    let items: Vec<_> = examples.iter().map(|e| tagged_ids(e, &vocab, &labels).unwrap()).collect();
    for head in [ParentHead::Absolute, ParentHead::Relative, ParentHead::Attention] {
        let c = ModelConfig {
            mode: Mode::Tagging,
            parent_head: head,
            encoding: Encoding::RelEb,
            d_model: 16,
            d_ff: 16,
            heads: 2,
            layers: 1,
            max_len: 8,
            ..Default::default()
        };
        let mut m = Transformer::new(c, vocab.clone(), Some(labels.clone()), 2).unwrap();
        let cfg = TrainConfig { epochs: 60, batch_size: 3, warmup: 20 };
        let log = train(&mut m, TrainSet::Tagging(&items), &cfg, 0, None).unwrap();
        let first = log[0].loss;
        let last = log.last().unwrap().loss;
        assert!(last < 0.5 * first, "{head:?}: {first} -> {last}");
    }
}
