use std::sync::OnceLock;

use elasto::modes::{learn_modes, ModeBasis};
use elasto::pipeline::*;
use elasto::select::*;
use elasto::sim::*;
use elasto::RfFrame;

const DIMS: (usize, usize) = (128, 32);

struct Fixture {
    cfg: PipelineConfig,
    basis: ModeBasis,
    model: MlpModel,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let cfg = PipelineConfig {
            search_range: 12,
            ..PipelineConfig::default()
        };
        let ranges = InPlaneRanges::default();
        let corpus = training_corpus(DIMS, 60, 1, &ranges, CorpusSource::Refined, &cfg).unwrap();
        let basis = learn_modes(&corpus, cfg.num_modes).unwrap();
        let (data, _) = labelled_dataset(&basis, DIMS, 200, 2, &DatasetMix::default(), &cfg).unwrap();
        let instances: Vec<LabeledInstance> = data.into_iter().map(|e| e.instance).collect();
        let model = train(&instances, &TrainConfig::default()).unwrap();
        Fixture { cfg, basis, model }
    })
}

fn sequence(phantom_seed: u64, betas: &[f64]) -> Vec<RfFrame> {
    let phantom = PhantomSpec::random(DIMS, 1, phantom_seed);
    let mut frames = Vec::new();
    for (k, &beta) in betas.iter().enumerate() {
        let pair = synthesize_pair(&phantom, &DeformationSpec::new(DeformationKind::OutOfPlane, beta, 40 + k as u64)).unwrap();
        if k == 0 {
            frames.push(pair.pre);
        }
        frames.push(pair.post);
    }
    frames
}

#[test]
fn identical_frames_are_labelled_suitable() {
    let f = fixture();
    let pair = synthesize_pair(
        &PhantomSpec::random(DIMS, 1, 3),
        &DeformationSpec::new(DeformationKind::AxialCompression, 0.0, 3),
    )
    .unwrap();
    let inst = label_pair(&pair.pre, &pair.pre, &f.basis, &f.cfg.dp(DIMS.1), &f.cfg.refine).unwrap();
    assert!((inst.ncc_true - 1.0).abs() <= 1e-6, "{}", inst.ncc_true);
    assert!(inst.suitable);
    assert!(f.model.classify(&inst.w).unwrap());
    let again = f.model.predict(&inst.w).unwrap();
    assert_eq!(again, f.model.predict(&inst.w).unwrap());
}

#[test]
fn full_decorrelation_is_labelled_unsuitable() {
    let f = fixture();
    let mut rejected = 0;
    for seed in 0..10 {
        let pair = synthesize_pair(
            &PhantomSpec::random(DIMS, 1, 60 + seed),
            &DeformationSpec::new(DeformationKind::OutOfPlane, 1.0, seed),
        )
        .unwrap();
        let inst = label_pair(&pair.pre, &pair.post, &f.basis, &f.cfg.dp(DIMS.1), &f.cfg.refine).unwrap();
        rejected += usize::from(!inst.suitable);
    }
    assert!(rejected >= 9, "{rejected}/10");
}

#[test]
fn identical_twin_is_selected() {
    let f = fixture();
    let mut frames = sequence(7, &[0.9, 0.8, 1.0, 0.7, 0.95]);
    let twin = frames[0].clone();
    frames.insert(3, twin);
    let sel = select_best(&f.model, &frames, 0, &f.basis, &f.cfg.dp(DIMS.1), DEFAULT_WINDOW).unwrap();
    assert_eq!(sel.partner, 3, "{:?}", sel.predictions);
    assert_eq!(sel.predictions.len(), frames.len() - 1);
}

#[test]
fn frames_outside_the_window_do_not_matter() {
    let f = fixture();
    let betas: Vec<f64> = (0..12).map(|k| 0.1 + 0.07 * k as f64).collect();
    let frames = sequence(8, &betas);
    let dp = f.cfg.dp(DIMS.1);
    let base = select_best(&f.model, &frames, 2, &f.basis, &dp, DEFAULT_WINDOW).unwrap();
    let mut longer = frames.clone();
    longer.extend(sequence(9, &[0.3, 0.2, 0.1]).into_iter().skip(1));
    let after = select_best(&f.model, &longer, 2, &f.basis, &dp, DEFAULT_WINDOW).unwrap();
    assert_eq!(base, after);
    assert_eq!(
        base.predictions.iter().map(|p| p.0).collect::<Vec<_>>(),
        vec![0, 1, 3, 4, 5, 6, 7, 8, 9, 10]
    );
}

#[test]
fn selection_contract() {
    let f = fixture();
    let frames = sequence(10, &[0.5]);
    let dp = f.cfg.dp(DIMS.1);
    assert!(select_best(&f.model, &frames, 5, &f.basis, &dp, DEFAULT_WINDOW).is_err());
    assert!(select_best(&f.model, &frames[..1], 0, &f.basis, &dp, DEFAULT_WINDOW).is_err());
    assert_eq!(candidate_indices(20, 0, 16), (1..=8).collect::<Vec<_>>());
    assert!(f.model.check_architecture().is_ok());
}
