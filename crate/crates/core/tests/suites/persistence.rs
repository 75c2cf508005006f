//! Bit-exact persistence and seeded determinism.

use derender::network::{DeRenderNet, ModelConfig, TrainConfig, Trainer, TrainingSample};
use derender::synth::{export_corpus, generate, generate_corpus, load_corpus, SceneSpec};
use derender::tensor::{read_checkpoint, write_checkpoint, Tensor};
use derender::{Error, Plane};
use proptest::prelude::*;

fn tiny_model(seed: u64) -> ModelConfig {
    ModelConfig {
        width_scale: 0.0625,
        input_h: 16,
        input_w: 32,
        code_dim: 16,
        seed,
    }
}

fn tiny_samples(n: usize, seed: u64) -> Vec<TrainingSample> {
    generate_corpus(&SceneSpec::new(32, 16, seed), n)
        .unwrap()
        .iter()
        .map(|s| TrainingSample::from_scene(s).unwrap())
        .collect()
}

fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch: 2,
        epochs,
        ..TrainConfig::default()
    }
}

fn bits(t: &[(String, Tensor<f32>)]) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    t.iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn plane_bits(p: &Plane) -> Vec<u32> {
    p.data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    fn fpm_round_trip_is_bit_exact_property(
        (w, h, c, data) in (1usize..9, 1usize..9, 1usize..4)
            .prop_flat_map(|(w, h, c)| (Just(w), Just(h), Just(c), prop::collection::vec(any::<f32>(), w * h * c)))
    ) {
        let p = Plane::new(w, h, c, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.fpm");
        p.write_fpm(&path).unwrap();
        let q = Plane::read_fpm(&path).unwrap();
        prop_assert_eq!((q.width(), q.height(), q.channels()), (w, h, c));
        prop_assert_eq!(plane_bits(&q), plane_bits(&p));
    }

    fn checkpoint_round_trip_is_bit_exact_property(
        tensors in prop::collection::vec(
            ("[a-z.]{1,12}", prop::collection::vec(1usize..4, 0..4))
                .prop_flat_map(|(name, shape)| {
                    let n = shape.iter().product::<usize>();
                    (Just(name), Just(shape), prop::collection::vec(any::<f32>(), n))
                }),
            0..6,
        )
    ) {
        let tensors: Vec<(String, Tensor<f32>)> = tensors
            .into_iter()
            .map(|(n, s, d)| (n, Tensor::new(s, d).unwrap()))
            .collect();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, tensors.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        prop_assert_eq!(bits(&back), bits(&tensors));
    }
}

pub fn fpm_round_trip_is_bit_exact() {
    fpm_round_trip_is_bit_exact_property();
}

pub fn checkpoint_round_trip_is_bit_exact() {
    checkpoint_round_trip_is_bit_exact_property();
}


pub fn corrupt_fpm_is_reported_as_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.fpm");
    Plane::filled(4, 3, 1, 0.5).write_fpm(&path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    std::fs::write(&path, &bad_magic).unwrap();
    assert!(matches!(Plane::read_fpm(&path), Err(Error::Corrupt { .. })));

    std::fs::write(&path, &good[..good.len() - 2]).unwrap();
    assert!(matches!(Plane::read_fpm(&path), Err(Error::Corrupt { .. })));
}

pub fn scene_generation_is_deterministic() {
    for seed in [0, 7, 99] {
        let spec = SceneSpec::new(48, 32, seed);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }
    let a = generate(&SceneSpec::new(48, 32, 1)).unwrap();
    let b = generate(&SceneSpec::new(48, 32, 2)).unwrap();
    assert_ne!(a.image, b.image);
}

pub fn corpus_export_then_load_is_bit_exact() {
    let scenes = generate_corpus(&SceneSpec::new(32, 24, 5), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_corpus(&scenes, dir.path()).unwrap();
    let back = load_corpus(dir.path()).unwrap();
    assert_eq!(back.len(), scenes.len());
    for (a, b) in scenes.iter().zip(&back) {
        for (pa, pb) in [(&a.image, &b.image), (&a.albedo, &b.albedo), (&a.s_d, &b.s_d), (&a.s_i, &b.s_i)] {
            assert_eq!(plane_bits(pa), plane_bits(pb));
        }
        assert_eq!(plane_bits(&a.depth.to_plane()), plane_bits(&b.depth.to_plane()));
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.seed, b.seed);
    }
}

pub fn model_checkpoint_preserves_outputs() {
    let mut trainer = Trainer::new(tiny_model(3), tiny_train(1)).unwrap();
    let samples = tiny_samples(4, 30);
    trainer.run_epoch(&samples).unwrap();
    trainer.net.set_trained(true);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.drnw");
    trainer.net.save(&path).unwrap();
    let loaded = DeRenderNet::<f32>::load(&path).unwrap();
    assert_eq!(bits(&loaded.checkpoint_tensors()), bits(&trainer.net.checkpoint_tensors()));
    assert!(loaded.is_trained());

    let img = &samples[0].image;
    let before = trainer.net.decompose(&[img]).unwrap();
    let after = loaded.decompose(&[img]).unwrap();
    let again = loaded.decompose(&[img]).unwrap();
    for d in [&after[0], &again[0]] {
        assert_eq!(plane_bits(&d.albedo), plane_bits(&before[0].albedo));
        assert_eq!(plane_bits(&d.s_i), plane_bits(&before[0].s_i));
        assert_eq!(d.light.values(), before[0].light.values());
    }
    let code = &before[0].light;
    let s1 = trainer.net.render_shading(&[&samples[0].depth], &[code]).unwrap();
    let s2 = loaded.render_shading(&[&samples[0].depth], &[code]).unwrap();
    assert_eq!(plane_bits(&s1[0]), plane_bits(&s2[0]));
}

pub fn seeded_training_is_bit_identical() {
    let samples = tiny_samples(4, 31);
    let run = || {
        let mut t = Trainer::new(tiny_model(9), tiny_train(2)).unwrap();
        let logs = t.train(&samples, None, &mut std::io::sink()).unwrap();
        (logs, bits(&t.net.checkpoint_tensors()))
    };
    let (la, pa) = run();
    let (lb, pb) = run();
    assert_eq!(la, lb);
    assert_eq!(pa, pb);
}

pub fn resume_matches_uninterrupted_next_step() {
    let samples = tiny_samples(4, 32);
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("t.drnw");

    let mut straight = Trainer::new(tiny_model(4), tiny_train(3)).unwrap();
    straight.run_epoch(&samples).unwrap();
    straight.save(&ckpt).unwrap();
    let mut resumed = Trainer::resume(&ckpt, tiny_train(3)).unwrap();
    assert_eq!(resumed.epochs_done(), 1);
    assert_eq!(resumed.steps(), straight.steps());

    let batch = &straight.epoch_batches(&samples, 2).unwrap()[0];
    let ga = straight.gradients(batch).unwrap();
    let gb = resumed.gradients(batch).unwrap();
    assert_eq!(ga.losses, gb.losses);
    for ((ia, ta), (ib, tb)) in ga.grads.iter().zip(&gb.grads) {
        assert_eq!(ia, ib);
        assert_eq!(ta.data(), tb.data());
    }

    // and the optimizer state carries over: the rest of training agrees too
    straight.train(&samples, None, &mut std::io::sink()).unwrap();
    resumed.train(&samples, None, &mut std::io::sink()).unwrap();
    assert_eq!(bits(&straight.net.checkpoint_tensors()), bits(&resumed.net.checkpoint_tensors()));
}
