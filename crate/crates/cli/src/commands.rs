use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use elasto::coarse::coarse_estimate;
use elasto::dp::sparse_tde;
use elasto::modes::{learn_modes, learn_modes_from_arrays, ModeBasis};
use elasto::pipeline::{
    estimate, labelled_dataset, training_corpus, CorpusSource, DatasetMix, InPlaneRanges, PipelineConfig,
};
use elasto::raster::{read_raster_f64, write_raster_f64};
use elasto::refine::{refine, snr_cnr, strain, strain_of};
use elasto::select::{eval_classifier, label_pair, select_best, train, LabeledInstance, MlpModel, TrainConfig};
use elasto::sim::{synthesize_pair, DeformationKind, DeformationSpec, PhantomSpec};
use elasto::types::rms_difference;
use elasto::{RfFrame, Window};
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use crate::manifest::Outputs;
use crate::{
    Cli, Command, EstimateArgs, EvaluateArgs, LabelArgs, LearnModesArgs, SelectArgs, SimulateArgs, StageArg,
    SweepArgs, SweepParam, TrainArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli),
        Command::LearnModes(a) => learn(a, cli),
        Command::Estimate(a) => estimate_cmd(a, cli),
        Command::Label(a) => label(a, cli),
        Command::TrainClassifier(a) => train_cmd(a, cli),
        Command::SelectFrames(a) => select(a, cli),
        Command::Evaluate(a) => evaluate(a, cli),
        Command::Sweep(a) => sweep(a, cli),
    }
}

fn read_frame(path: &Path) -> Result<RfFrame> {
    let samples = read_raster_f64(path).with_context(|| format!("reading frame {}", path.display()))?;
    let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Ok(RfFrame::new(samples, id)?)
}

fn load_modes(dir: &Path) -> Result<ModeBasis> {
    ModeBasis::load(dir).with_context(|| format!("loading modes from {}", dir.display()))
}

fn write(out: &mut Outputs, name: &str, a: &Array2<f64>) -> Result<()> {
    let path = out.path(name);
    write_raster_f64(&path, a).with_context(|| format!("writing {}", path.display()))
}

fn simulate(a: &SimulateArgs, cli: &Cli) -> Result<()> {
    let phantom = PhantomSpec::random((a.rows, a.lines), a.inclusions, a.seed);
    let def = DeformationSpec::new(a.kind.into(), a.magnitude, a.seed);
    let pair = synthesize_pair(&phantom, &def)?;
    let mut out = Outputs::create(&a.out)?;
    write(&mut out, "pre.elas", pair.pre.samples())?;
    write(&mut out, "post.elas", pair.post.samples())?;
    write(&mut out, "oracle_axial.elas", &pair.oracle.axial)?;
    write(&mut out, "oracle_lateral.elas", &pair.oracle.lateral_or_zeros())?;
    out.write_json("specs.json", &json!({ "phantom": phantom, "deformation": def }))?;
    out.finish(cli, a.seed)
}

fn learn(a: &LearnModesArgs, cli: &Cli) -> Result<()> {
    let cfg = a.pipeline.config();
    let basis = if let Some(dir) = &a.input {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "elas"))
            .collect();
        paths.sort();
        ensure!(!paths.is_empty(), "no .elas rasters in {}", dir.display());
        let fields = paths
            .iter()
            .map(|p| read_raster_f64(p).with_context(|| format!("reading {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = fields.iter().map(|f| f.view()).collect();
        learn_modes_from_arrays(&views, cfg.num_modes)?
    } else {
        let count = a.synthetic.expect("clap requires --input or --synthetic");
        let corpus = training_corpus(
            (a.rows, a.lines),
            count,
            a.seed,
            &InPlaneRanges::default(),
            CorpusSource::Refined,
            &cfg,
        )?;
        learn_modes(&corpus, cfg.num_modes)?
    };
    basis.save(&a.out)?;
    let mut out = Outputs::create(&a.out)?;
    out.path(elasto::modes::MANIFEST_FILE);
    out.path("mean.elas");
    for n in 0..basis.n_modes() {
        out.path(format!("mode_{n:03}.elas"));
    }
    eprintln!(
        "learned {} modes, explained variance {:.4}",
        basis.n_modes(),
        basis.explained_variance_ratio()
    );
    out.finish(cli, a.seed)
}

fn estimate_cmd(a: &EstimateArgs, cli: &Cli) -> Result<()> {
    let cfg = a.pipeline.config();
    let pre = read_frame(&a.pre)?;
    let post = read_frame(&a.post)?;
    let dp = cfg.dp(pre.lines());
    let mut out = Outputs::create(&a.out)?;
    if let StageArg::Dp = a.stage {
        let sparse = sparse_tde(&pre, &post, &dp)?;
        let m = pre.rows();
        let axial = Array2::from_shape_fn((m, sparse.lines.len()), |(i, k)| sparse.values[k * m + i]);
        let lateral = Array2::from_shape_fn((m, sparse.lines.len()), |(i, k)| sparse.lateral_smoothed[k][i]);
        write(&mut out, "dp_axial.elas", &axial)?;
        write(&mut out, "dp_lateral.elas", &lateral)?;
        out.write_json("dp_lines.json", &sparse.lines)?;
        return out.finish(cli, a.seed);
    }
    let Some(modes) = &a.modes else {
        bail!("--modes is required for stage {:?}", a.stage);
    };
    let basis = load_modes(modes)?;
    let coarse = coarse_estimate(&basis, &pre, &post, &dp)?;
    if let StageArg::Coarse = a.stage {
        write(&mut out, "coarse_axial.elas", &coarse.field.axial)?;
        write(&mut out, "coarse_lateral.elas", &coarse.field.lateral_or_zeros())?;
        out.write_json("weights.json", &coarse.weights)?;
        return out.finish(cli, a.seed);
    }
    let refined = refine(&pre, &post, &coarse.field, &cfg.refine)?;
    let strain = strain(&refined.field, cfg.strain_window_for(pre.rows()))?;
    if let StageArg::Refined = a.stage {
        write(&mut out, "refined_axial.elas", &refined.field.axial)?;
        write(&mut out, "refined_lateral.elas", &refined.field.lateral_or_zeros())?;
    }
    write(&mut out, "strain.elas", &strain.strain)?;
    out.write_json(
        "refine.json",
        &json!({
            "iterations": refined.iterations,
            "converged": refined.converged,
            "cost_history": refined.cost_history,
        }),
    )?;
    out.finish(cli, a.seed)
}

fn label(a: &LabelArgs, cli: &Cli) -> Result<()> {
    let cfg = a.pipeline.config();
    let pre = read_frame(&a.pre)?;
    let post = read_frame(&a.post)?;
    let basis = load_modes(&a.modes)?;
    let mut inst = label_pair(&pre, &post, &basis, &cfg.dp(pre.lines()), &cfg.refine)?;
    inst.suitable = inst.ncc_true > a.ncc_threshold;
    println!("ncc {:.6} suitable {}", inst.ncc_true, inst.suitable);
    let mut out = Outputs::create(&a.out)?;
    out.write_json("label.json", &inst)?;
    out.finish(cli, a.seed)
}

fn read_instances(paths: &[std::path::PathBuf]) -> Result<Vec<LabeledInstance>> {
    let mut all = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        if value.is_array() {
            all.extend(serde_json::from_value::<Vec<LabeledInstance>>(value)?);
        } else {
            all.push(serde_json::from_value(value)?);
        }
    }
    Ok(all)
}

fn train_cmd(a: &TrainArgs, cli: &Cli) -> Result<()> {
    let cfg = a.pipeline.config();
    let mut out = Outputs::create(&a.out)?;
    let instances = match a.synthetic {
        Some(count) => {
            let basis = load_modes(a.modes.as_ref().expect("clap requires --modes"))?;
            let (data, dropped) = labelled_dataset(&basis, basis.dims(), count, a.seed, &DatasetMix::default(), &cfg)?;
            if dropped > 0 {
                eprintln!("dropped {dropped} pairs whose estimation failed");
            }
            let instances: Vec<LabeledInstance> = data.iter().map(|e| e.instance.clone()).collect();
            out.write_json("dataset.json", &instances)?;
            instances
        }
        None => read_instances(&a.dataset)?,
    };
    let instances: Vec<LabeledInstance> = instances
        .into_iter()
        .map(|mut i| {
            i.suitable = i.ncc_true > a.ncc_threshold;
            i
        })
        .collect();
    let mut tc = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        threshold: a.ncc_threshold,
        ..TrainConfig::default()
    };
    tc.adam.learning_rate = a.learning_rate;
    let model = train(&instances, &tc)?;
    model.save(&a.out)?;
    out.path("model.json");
    for k in 0..model.net.layers.len() {
        out.path(format!("layer_{k}_weights.elas"));
        out.path(format!("layer_{k}_bias.elas"));
    }
    let scores = eval_classifier(&model, &instances).ok();
    eprintln!(
        "trained on {} instances in {:.1} s; final validation MSE {:?}",
        model.metadata.n_train,
        model.metadata.seconds,
        model.metadata.final_validation_loss()
    );
    out.write_json("training.json", &json!({ "metadata": model.metadata, "scores_all": scores }))?;
    out.finish(cli, a.seed)
}

fn select(a: &SelectArgs, cli: &Cli) -> Result<()> {
    let cfg = a.pipeline.config();
    let frames = a.frames.iter().map(|p| read_frame(p)).collect::<Result<Vec<_>>>()?;
    ensure!(!frames.is_empty(), "no frames given");
    let basis = load_modes(&a.modes)?;
    let model = MlpModel::load(&a.model).with_context(|| format!("loading model from {}", a.model.display()))?;
    let sel = select_best(&model, &frames, a.anchor, &basis, &cfg.dp(frames[0].lines()), a.window)?;
    println!("anchor {} partner {}", sel.anchor, sel.partner);
    let mut out = Outputs::create(&a.out)?;
    out.write_json("selection.json", &sel)?;
    out.finish(cli, a.seed)
}

fn window(w: [usize; 4]) -> Window {
    Window::new(w[0], w[1], w[2], w[3])
}

fn evaluate(a: &EvaluateArgs, cli: &Cli) -> Result<()> {
    let s = read_raster_f64(&a.strain).with_context(|| format!("reading {}", a.strain.display()))?;
    let metrics = snr_cnr(&s, window(a.target), window(a.background))?;
    let rms = match &a.reference {
        Some(p) => {
            let r = read_raster_f64(p).with_context(|| format!("reading {}", p.display()))?;
            ensure!(r.dim() == s.dim(), "reference is {:?}, strain is {:?}", r.dim(), s.dim());
            Some(rms_difference(&s, &r, Window::new(0, s.nrows(), 0, s.ncols())))
        }
        None => None,
    };
    println!("snr {:.6} cnr {:.6}{}", metrics.snr, metrics.cnr, if metrics.saturated { " (saturated)" } else { "" });
    if let Some(e) = rms {
        println!("rms error {e:.6}");
    }
    let mut out = Outputs::create(&a.out)?;
    out.write_json("metrics.json", &json!({ "snr": metrics.snr, "cnr": metrics.cnr, "saturated": metrics.saturated, "rms_error": rms }))?;
    out.finish(cli, a.seed)
}

#[derive(Debug, Serialize)]
struct SweepPoint {
    value: f64,
    coarse_rms: f64,
    refined_rms: f64,
    strain_rms: f64,
    strain_file: String,
}

fn sweep(a: &SweepArgs, cli: &Cli) -> Result<()> {
    let dims = (a.rows, a.lines);
    let base = a.pipeline.config();
    let values: Vec<f64> = match a.param {
        SweepParam::N => vec![6.0, 12.0, 24.0],
        SweepParam::P => vec![2.0, 5.0, 10.0],
        SweepParam::Compression => vec![0.01, 0.03, 0.06],
    };
    let largest_n = match a.param {
        SweepParam::N => 24,
        _ => base.num_modes,
    };
    let basis = match &a.modes {
        Some(dir) => load_modes(dir)?,
        None => {
            let corpus = training_corpus(
                dims,
                a.corpus,
                a.seed.wrapping_add(1),
                &InPlaneRanges::default(),
                CorpusSource::Refined,
                &base,
            )?;
            learn_modes(&corpus, largest_n)?
        }
    };
    ensure!(basis.dims() == dims, "modes are {:?}, sweep frames are {dims:?}", basis.dims());
    let phantom = PhantomSpec::random(dims, 1, a.seed);
    let fixed = synthesize_pair(&phantom, &DeformationSpec::new(DeformationKind::AxialCompression, a.magnitude, a.seed))?;
    let all = Window::interior(dims, 0.8);
    let mut out = Outputs::create(&a.out)?;
    let mut points = Vec::new();
    let mut strains = Vec::new();
    for &v in &values {
        let mut cfg: PipelineConfig = base.clone();
        let mut b = basis.clone();
        let pair = match a.param {
            SweepParam::N => {
                b = basis.truncated(v as usize)?;
                cfg.num_modes = v as usize;
                fixed.clone()
            }
            SweepParam::P => {
                cfg.num_lines = v as usize;
                fixed.clone()
            }
            SweepParam::Compression => {
                synthesize_pair(&phantom, &DeformationSpec::new(DeformationKind::AxialCompression, v, a.seed))?
            }
        };
        let est = estimate(&b, &pair.pre, &pair.post, &cfg)?;
        let truth = strain_of(&pair.oracle.axial, cfg.strain_window_for(dims.0))?.strain;
        let name = format!("strain_{}.elas", label_value(a.param, v));
        write(&mut out, &name, &est.strain.strain)?;
        points.push(SweepPoint {
            value: v,
            coarse_rms: rms_difference(&est.coarse.field.axial, &pair.oracle.axial, all),
            refined_rms: rms_difference(&est.refined.field.axial, &pair.oracle.axial, all),
            strain_rms: rms_difference(&est.strain.strain, &truth, all),
            strain_file: name,
        });
        strains.push(est.strain.strain);
    }
    let whole = Window::new(0, dims.0, 0, dims.1);
    let pairwise: Vec<_> = (0..values.len() - 1)
        .map(|k| {
            json!({
                "from": values[k],
                "to": values[k + 1],
                "strain_rms_difference": rms_difference(&strains[k], &strains[k + 1], whole),
            })
        })
        .collect();
    for p in &points {
        println!(
            "{:>6}: coarse {:.4} refined {:.4} strain {:.6}",
            p.value, p.coarse_rms, p.refined_rms, p.strain_rms
        );
    }
    out.write_json("sweep.json", &json!({ "param": a.param, "points": points, "consecutive": pairwise }))?;
    out.finish(cli, a.seed)
}

fn label_value(param: SweepParam, v: f64) -> String {
    match param {
        SweepParam::N => format!("n{}", v as usize),
        SweepParam::P => format!("p{}", v as usize),
        SweepParam::Compression => format!("c{:.0}", v * 100.0),
    }
}
