//! Pipelines behind each command. Every output lands under `paths.output`
//! and a `<command>.manifest.json` records the config hash, the seed and
//! the files written.

use std::io::Write;
use std::path::{Path, PathBuf};

use posediff::checkpoint::{load_checkpoint, save_checkpoint};
use posediff::conditioning::{encode_condition, null_context, Condition, TextInput};
use posediff::data::{load_poses, save_poses, synth_corpus, PoseRecord, Split};
use posediff::denoiser::PoseModel;
use posediff::diffusion::{make_schedule, sample_batch, DiffusionSchedule, SamplingContext};
use posediff::metrics::{apd, d_nn, delta_q, fid, j2j, pa_mpjpe, write_metric_csv, MetricRow};
use posediff::skeleton::{forward_kinematics, CameraIntrinsics, KinematicTree, Pose, Shape};
use posediff::tasks::{
    complete_poses, denoise_poses, make_scenario, perturb_pose, refine_pose, smplify_fit, write_scenario_csv,
    Observation2D, OcclusionScenario, ScenarioRow,
};
use posediff::training::{train, training_examples};
use posediff::{Error, RngStream};
use serde_json::json;

use crate::config::{FitMethod, RunConfig};
use crate::CliError;

/// Root of the camera frame used for synthetic 2D observations.
pub const OBSERVATION_TRANSLATION: [f64; 3] = [0.0, 0.0, 4.0];

// Distinct stream families so commands never share random draws.
const STREAM_SAMPLE: u64 = 1;
const STREAM_FIT: u64 = 2;
const STREAM_COMPLETE: u64 = 3;
const STREAM_DENOISE: u64 = 4;

struct Run<'c> {
    command: &'c str,
    config: &'c RunConfig,
    hash: String,
    tree: KinematicTree,
    written: Vec<PathBuf>,
}

impl Run<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.config.paths.output.join(name)
    }

    fn record(&mut self, path: PathBuf) {
        log::info!("wrote {}", path.display());
        self.written.push(path);
    }

    fn schedule(&self) -> Result<DiffusionSchedule, CliError> {
        Ok(make_schedule(self.config.schedule.steps)?)
    }

    fn model(&self) -> Result<PoseModel, CliError> {
        Ok(load_checkpoint(&self.config.paths.checkpoint, &self.tree)?)
    }

    fn held_out(&self) -> Result<Vec<PoseRecord>, CliError> {
        let corpus = load_poses(&self.config.paths.corpus)?;
        Ok(corpus.into_iter().filter(|r| r.split == Split::Test).take(self.config.tasks.count).collect())
    }

    fn save_poses(&mut self, name: &str, records: &[PoseRecord]) -> Result<(), CliError> {
        let path = self.out(name);
        save_poses(records, &path)?;
        self.record(path);
        if self.config.dump_obj {
            let dir = self.out(&format!("{}_obj", name.trim_end_matches(".pdps")));
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            for r in records {
                let path = dir.join(format!("{:05}.obj", r.id));
                write_obj(&r.pose, &self.tree, &path)?;
                self.written.push(path);
            }
            log::info!("wrote {} joint dumps under {}", records.len(), dir.display());
        }
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        let manifest = json!({
            "command": self.command,
            "config_hash": self.hash,
            "seed": self.config.seed,
            "config": self.config,
            "outputs": self.written,
        });
        let path = self.out(&format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_text(&path, &text)?;
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| CliError::Runtime(Error::Io { path: path.to_path_buf(), source: e }))
}

/// FK joints as OBJ vertices with one line element per bone.
pub fn write_obj(pose: &Pose, tree: &KinematicTree, path: &Path) -> Result<(), CliError> {
    let joints = forward_kinematics(pose, &Shape::default(), tree)?;
    let mut text = String::new();
    for p in &joints {
        text.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
    }
    for j in 0..joints.len() {
        if let Some(parent) = tree.parent_of(j) {
            text.push_str(&format!("l {} {}\n", parent + 1, j + 1));
        }
    }
    write_text(path, &text)
}

pub fn execute(command: &str, config: &RunConfig) -> Result<(), CliError> {
    let hash = config.hash();
    log::info!("command {command}, seed {}, config hash {hash}", config.seed);
    log::info!("resolved config: {}", serde_json::to_string(config).expect("config serializes"));
    let out = &config.paths.output;
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    let mut run = Run { command, config, hash, tree: KinematicTree::smpl(), written: Vec::new() };
    match command {
        "gen-data" => gen_data(&mut run)?,
        "train" => train_cmd(&mut run)?,
        "sample" => sample_cmd(&mut run)?,
        "fit" => fit_cmd(&mut run)?,
        "complete" => complete_cmd(&mut run)?,
        "denoise" => denoise_cmd(&mut run)?,
        "eval" => eval_cmd(&mut run)?,
        other => return Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
    run.finish()
}

fn gen_data(run: &mut Run) -> Result<(), CliError> {
    let records = synth_corpus(&run.config.data, &run.tree)?;
    run.save_poses("corpus.pdps", &records)
}

fn train_cmd(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let records = load_poses(&c.paths.corpus)?;
    let examples = training_examples(&records, &run.tree)?;
    let schedule = run.schedule()?;
    let mut model = PoseModel::new(c.model, &run.tree, c.seed)?;
    let every = (c.training.steps / 20).max(1);
    let report = train(&mut model, &examples, &schedule, &c.training, c.seed, |step, loss| {
        if step % every == 0 || step + 1 == c.training.steps {
            log::info!("step {step} loss {loss:.4}");
        }
    })?;
    let path = c.paths.checkpoint.clone();
    save_checkpoint(&model, &path)?;
    run.record(path);
    let mut csv = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    let path = run.out("train_loss.csv");
    write_text(&path, &csv)?;
    run.record(path);
    Ok(())
}

fn sampling_context(model: &PoseModel, caption: Option<&str>, scale: f64) -> Result<SamplingContext, CliError> {
    Ok(match caption {
        Some(text) => {
            let ctx = encode_condition(model, &Condition { text: Some(TextInput::new(text)), image: None })?;
            SamplingContext::guided(ctx, null_context(model), scale)
        }
        None => SamplingContext::unconditional(model),
    })
}

fn sample_cmd(run: &mut Run) -> Result<(), CliError> {
    let c = &run.config.sampling;
    let model = run.model()?;
    let schedule = run.schedule()?;
    let sc = sampling_context(&model, c.caption.as_deref(), c.guidance_scale)?;
    let mut stream = RngStream::new(run.config.seed).derive(STREAM_SAMPLE);
    let poses = sample_batch(&model, &schedule, &sc, c.steps, None, c.count, &mut stream, &run.tree)?;
    let records: Vec<PoseRecord> = poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| PoseRecord { id: i as u64, split: Split::Test, caption: c.caption.clone(), pose })
        .collect();
    run.save_poses("samples.pdps", &records)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn row(scenario: &str, metric: &str, value: f64) -> ScenarioRow {
    ScenarioRow { scenario: scenario.into(), metric: metric.into(), value }
}

fn fit_cmd(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let model = run.model()?;
    let schedule = run.schedule()?;
    let gt = run.held_out()?;
    let root = RngStream::new(c.seed).derive(STREAM_FIT);
    let shape = Shape::default();
    let (mut out, mut init_err, mut fit_err, mut init_rms, mut fit_rms) = (Vec::new(), vec![], vec![], vec![], vec![]);
    for r in &gt {
        let init = perturb_pose(&r.pose, c.tasks.init_noise, &mut root.derive(r.id))?;
        let obs =
            Observation2D::render(&r.pose, &shape, &run.tree, CameraIntrinsics::default(), OBSERVATION_TRANSLATION)?;
        let pose = match c.tasks.fit_method {
            FitMethod::Refine => {
                let sc = if c.tasks.image_context {
                    let cond = Condition { text: None, image: Some(obs.image_features()) };
                    SamplingContext::plain(encode_condition(&model, &cond)?)
                } else {
                    SamplingContext::unconditional(&model)
                };
                refine_pose(&model, &init, &obs, &shape, &sc, &c.refine, &schedule, &run.tree)?
            }
            FitMethod::Smplify => {
                let sc = SamplingContext::unconditional(&model);
                smplify_fit(&model, &obs, &init, &shape, &sc, &c.fit, &schedule, &run.tree)?.pose
            }
        };
        let joints = |p: &Pose| forward_kinematics(p, &shape, &run.tree);
        let truth = joints(&r.pose)?;
        init_err.push(pa_mpjpe(&joints(&init)?, &truth)?);
        fit_err.push(pa_mpjpe(&joints(&pose)?, &truth)?);
        init_rms.push(obs.reprojection_rms(&init, &shape, &run.tree)?);
        fit_rms.push(obs.reprojection_rms(&pose, &shape, &run.tree)?);
        out.push(PoseRecord { id: r.id, split: r.split, caption: r.caption.clone(), pose });
    }
    let method = match c.tasks.fit_method {
        FitMethod::Refine => "refine",
        FitMethod::Smplify => "smplify",
    };
    let rows = vec![
        row(method, "pa_mpjpe_init_mm", mean(&init_err)),
        row(method, "pa_mpjpe_fit_mm", mean(&fit_err)),
        row(method, "reprojection_rms_init_px", mean(&init_rms)),
        row(method, "reprojection_rms_fit_px", mean(&fit_rms)),
    ];
    let path = run.out("fit.csv");
    write_scenario_csv(&rows, &path)?;
    run.record(path);
    run.save_poses("fit.pdps", &out)
}

fn complete_cmd(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let scenario: OcclusionScenario = c.tasks.scenario.parse()?;
    let model = run.model()?;
    let schedule = run.schedule()?;
    let corpus = load_poses(&c.paths.corpus)?;
    let gt: Vec<&PoseRecord> = corpus.iter().filter(|r| r.split == Split::Test).take(c.tasks.count).collect();
    let shape = Shape::default();
    let observations =
        gt.iter().map(|r| make_scenario(scenario, &r.pose, &shape, &run.tree)).collect::<posediff::Result<Vec<_>>>()?;
    let sc = SamplingContext::unconditional(&model);
    let mut stream = RngStream::new(c.seed).derive(STREAM_COMPLETE);
    let inits = c.complete.invert_init.then(|| {
        gt.iter().map(|r| perturb_pose(&r.pose, c.tasks.init_noise, &mut stream)).collect::<posediff::Result<Vec<_>>>()
    });
    let inits = inits.transpose()?;
    let poses =
        complete_poses(&model, &observations, inits.as_deref(), &sc, &c.complete, &schedule, &mut stream, &run.tree)?;
    let observed: Vec<f64> = observations
        .iter()
        .zip(&poses)
        .map(|(o, p)| o.observed_error(p, &shape, &run.tree))
        .collect::<posediff::Result<_>>()?;
    let train: Vec<Pose> = corpus.iter().filter(|r| r.split == Split::Train).map(|r| r.pose.clone()).collect();
    let name = scenario.name();
    let mut rows = vec![row(name, "observed_error_m", mean(&observed)), row(name, "d_nn", d_nn(&poses, &train)?)];
    if poses.len() >= 2 {
        rows.push(row(name, "apd_cm", apd(&poses, &run.tree)?));
    }
    let path = run.out(&format!("complete_{name}.csv"));
    write_scenario_csv(&rows, &path)?;
    run.record(path);
    let records: Vec<PoseRecord> =
        gt.iter().zip(poses).map(|(r, pose)| PoseRecord { id: r.id, split: r.split, caption: None, pose }).collect();
    run.save_poses(&format!("complete_{name}.pdps"), &records)
}

fn denoise_cmd(run: &mut Run) -> Result<(), CliError> {
    let c = run.config;
    let model = run.model()?;
    let schedule = run.schedule()?;
    let gt = run.held_out()?;
    let root = RngStream::new(c.seed).derive(STREAM_DENOISE);
    let noisy = gt
        .iter()
        .map(|r| perturb_pose(&r.pose, c.tasks.denoise_noise, &mut root.derive(r.id)))
        .collect::<posediff::Result<Vec<_>>>()?;
    let sc = SamplingContext::unconditional(&model);
    let clean = denoise_poses(&model, &noisy, &sc, &schedule, &run.tree)?;
    let shape = Shape::default();
    let (mut dq_in, mut dq_out, mut j_in, mut j_out) = (vec![], vec![], vec![], vec![]);
    for ((r, n), d) in gt.iter().zip(&noisy).zip(&clean) {
        dq_in.push(delta_q(n, &r.pose, &run.tree)?);
        dq_out.push(delta_q(d, &r.pose, &run.tree)?);
        j_in.push(j2j(n, &r.pose, &shape, &run.tree)?);
        j_out.push(j2j(d, &r.pose, &shape, &run.tree)?);
    }
    let rows = vec![
        row("denoise", "delta_q_noisy", mean(&dq_in)),
        row("denoise", "delta_q_denoised", mean(&dq_out)),
        row("denoise", "j2j_noisy_mm", mean(&j_in)),
        row("denoise", "j2j_denoised_mm", mean(&j_out)),
    ];
    let path = run.out("denoise.csv");
    write_scenario_csv(&rows, &path)?;
    run.record(path);
    let records: Vec<PoseRecord> = gt
        .iter()
        .zip(clean)
        .map(|(r, pose)| PoseRecord { id: r.id, split: r.split, caption: r.caption.clone(), pose })
        .collect();
    run.save_poses("denoise.pdps", &records)
}

fn eval_cmd(run: &mut Run) -> Result<(), CliError> {
    let e = &run.config.eval;
    let load = |p: &Option<PathBuf>, flag: &str| -> Result<(String, Vec<Pose>), CliError> {
        let p = p.as_ref().ok_or_else(|| CliError::Usage(format!("eval needs --{flag} <pose file>")))?;
        let poses = load_poses(p)?.into_iter().map(|r| r.pose).collect();
        Ok((p.display().to_string(), poses))
    };
    let (name_a, a) = load(&e.a, "a")?;
    let (value, name_b) = match e.metric.as_str() {
        "apd" => (apd(&a, &run.tree)?, String::new()),
        "fid" | "dnn" => {
            let (name_b, b) = load(&e.b, "b")?;
            let v = if e.metric == "fid" { fid(&a, &b, &run.tree)? } else { d_nn(&a, &b)? };
            (v, name_b)
        }
        other => return Err(CliError::Config(format!("unknown metric {other:?} (expected fid, apd or dnn)"))),
    };
    println!("{} {value}", e.metric);
    let path = run.out("eval.csv");
    write_metric_csv(&[MetricRow { metric: e.metric.clone(), set_a: name_a, set_b: name_b, value }], &path)?;
    run.record(path);
    Ok(())
}
