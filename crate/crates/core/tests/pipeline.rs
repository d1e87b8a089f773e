use quadscan::bbox::BBox;
use quadscan::numerics::gradcheck::{check, spread_probe};
use quadscan::numerics::{Graph, ParamStore, Tape, Tensor};
use quadscan::synthdata::{generate, GenConfig, Scenario};
use quadscan::tracker::{sample_input, tracking_loss, LossTargets, ModalInput, Modality, Tracker, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(mfm_blocks: Vec<usize>) -> TrackerConfig {
    TrackerConfig {
        dim: 8,
        head_hidden: 4,
        d_state: 2,
        mfm_blocks,
        ..TrackerConfig::default()
    }
}

fn random_input(cfg: &TrackerConfig, seed: u64) -> ModalInput<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = cfg.patch * cfg.patch * 3;
    let geo = cfg.geometry().unwrap();
    let mut mat = |rows| Tensor::from_fn(vec![rows, cols], |_| rng.random_range(-0.5..0.5));
    let template = (0..3).map(|_| mat(geo.template_tokens())).collect();
    let search = (0..3).map(|_| mat(geo.search_tokens())).collect();
    ModalInput {
        template,
        search,
        words: vec![1, 4, 13, 2, 16],
    }
}

/// Backbone output rows of the RGB stream after perturbing the thermal input.
fn rgb_rows(model: &Tracker, store: &ParamStore<f64>, input: &ModalInput<f64>) -> (Vec<f64>, Vec<f64>) {
    let run = |inp: &ModalInput<f64>| {
        let tape = Tape::new();
        let g = Graph::frozen(&tape, store);
        let h = model.backbone(&g, model.embed(&g, inp).unwrap()).unwrap();
        let n = model.geometry().tokens_per_modality();
        tape.value(tape.slice_rows(h, 0, n).unwrap()).data().to_vec()
    };
    let mut perturbed = input.clone();
    perturbed.search[1] = perturbed.search[1].map(|v| v + 0.25);
    perturbed.template[1] = perturbed.template[1].map(|v| -v);
    (run(input), run(&perturbed))
}

#[test]
fn streams_are_isolated_without_fusion() {
    let cfg = small(vec![]);
    let mut store = ParamStore::new();
    let model = Tracker::new(cfg.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (a, b) = rgb_rows(&model, &store, &random_input(&cfg, 2));
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn fusion_block_carries_thermal_into_rgb() {
    let cfg = small(vec![1]);
    let mut store = ParamStore::new();
    let model = Tracker::new(cfg.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (a, b) = rgb_rows(&model, &store, &random_input(&cfg, 2));
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6, "max change {diff}");
}

#[test]
fn full_pipeline_gradients_match_finite_differences() {
    let cfg = small(vec![0]);
    let mut store = ParamStore::<f64>::new();
    let model = Tracker::new(cfg.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let gen = GenConfig {
        frames: 3,
        ..GenConfig::default()
    };
    let seq = generate(Scenario::Plain, &gen, 5, "s").unwrap();
    let (cx, cy) = seq.gt[2].center();
    let (input, origin) = sample_input::<f64>(&cfg, &seq, &seq.gt[0], 2, (cx + 6.0, cy - 3.0));
    let gt: BBox = seq.gt[2].translate(-origin.0 as f64, -origin.1 as f64);
    let target = LossTargets::new(&cfg, &gt).unwrap();
    let grads = {
        let tape = Tape::new();
        let g = Graph::new(&tape, &store);
        let head = model.forward(&g, &input).unwrap();
        let (l, _) = tracking_loss(&tape, &cfg, &head, &target).unwrap();
        g.param_grads(&tape.backward(l).unwrap())
    };
    let mut worst = (0.0, String::new());
    for id in model.param_ids() {
        let x0 = store.get(id).clone();
        let analytic = grads[id.index()]
            .clone()
            .expect("every model parameter gets a gradient");
        let probe = spread_probe(x0.len(), 4);
        let mut s = store.clone();
        // Smaller steps drown tiny scan gradients in cancellation, larger ones
        // cross relu and abs kinks.
        let r = check(&x0, &analytic, 1e-5, Some(&probe), |x| {
            *s.get_mut(id) = x.clone();
            let tape = Tape::new();
            let g = Graph::frozen(&tape, &s);
            let head = model.forward(&g, &input)?;
            Ok(tracking_loss(&tape, &cfg, &head, &target)?.1.total)
        })
        .unwrap();
        if r.max_rel_err > worst.0 {
            worst = (r.max_rel_err, store.name(id).to_string());
        }
    }
    eprintln!("worst {worst:?}");
    assert!(worst.0 < 1e-3, "worst {worst:?}");
}

#[test]
fn language_stream_needs_rgb() {
    let cfg = TrackerConfig {
        modalities: vec![Modality::Thermal, Modality::Language],
        ..small(vec![])
    };
    let mut store = ParamStore::<f32>::new();
    assert!(Tracker::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}
