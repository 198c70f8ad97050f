use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use hoi_core::affordance::{extract_gt_affordance, postprocess_contacts};
use hoi_core::corpus::{audit_labels, generate_corpus, split_indices, AuditReport, Shape};
use hoi_core::diffusion::{ScheduleConfig, DEFAULT_STEPS_AFFORDANCE, DEFAULT_STEPS_HOI};
use hoi_core::geometry::DEFAULT_CONTACT_OFFSET;
use hoi_core::guidance::{guided_sample_batch, GuidedRequest, RunReport};
use hoi_core::io::{load_apdm, load_hoi, read_dataset, save_apdm, save_hoi, write_dataset};
use hoi_core::metrics::{evaluate as evaluate_metrics, EvalItem, FlattenEncoder, JointStatsEncoder, MotionEncoder};
use hoi_core::models::{SampleOptions, TrainReport};
use hoi_core::motion::{object_contact_trajectory, recover_global_joints};
use hoi_core::skeleton::NUM_JOINTS;
use hoi_core::{
    Action, ApdmConfig, ApdmModel, CorpusSpec, GuidanceConfig, GuidedSampleConfig, HoiConfig, HoiModel, HoiSample,
    ObjectKind, TrainConfig,
};

use crate::cli::{
    AnnotateArgs, EncoderKind, EvaluateArgs, ExportArgs, GenDataArgs, Preset, SampleArgs, Switch, TrainArgs,
};

/// Invalid arguments or unreadable inputs; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Sequences sampled together in one reverse-diffusion batch.
const SAMPLE_BATCH: usize = 8;

pub struct Context {
    root: Option<PathBuf>,
}

impl Context {
    pub fn new(root: Option<PathBuf>) -> Self {
        Self { root }
    }

    fn path(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Resolves an input path that must already exist.
    fn input(&self, p: &Path) -> Result<PathBuf> {
        let path = self.path(p);
        if !path.exists() {
            return Err(usage(format!("{} does not exist", path.display())));
        }
        Ok(path)
    }

    fn dataset(&self, p: &Path) -> Result<Vec<HoiSample>> {
        let path = self.input(p)?;
        read_dataset(&path).with_context(|| format!("reading dataset {}", path.display()))
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn gen_data(ctx: &Context, a: &GenDataArgs) -> Result<()> {
    let actions = match &a.actions {
        Some(names) => names
            .iter()
            .map(|n| Action::parse(n).ok_or_else(|| usage(format!("unknown action `{n}`"))))
            .collect::<Result<Vec<_>>>()?,
        None => Action::ALL.to_vec(),
    };
    let objects = match &a.objects {
        Some(names) => names.iter().map(|n| parse_kind(n)).collect::<Result<Vec<_>>>()?,
        None => ObjectKind::ALL.to_vec(),
    };
    let spec = CorpusSpec {
        actions,
        objects,
        samples_per_pair: a.samples_per_pair,
        length: a.length,
        seed: a.seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let start = Instant::now();
    let corpus = generate_corpus(&spec)?;
    let (train, test) = split_indices(corpus.samples.len(), a.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus.samples[i].clone()).collect::<Vec<_>>();
    let out = ctx.path(&a.out);
    write_dataset(&pick(&train), &out.join("train"))?;
    write_dataset(&pick(&test), &out.join("test"))?;
    write_json(&corpus.skipped, Some(&out.join("skipped.json")))?;
    eprintln!(
        "generated {} sequences ({} train, {} test, {} skipped) in {:.1?}",
        corpus.samples.len(),
        train.len(),
        test.len(),
        corpus.skipped.len(),
        start.elapsed()
    );
    Ok(())
}

fn parse_kind(name: &str) -> Result<ObjectKind> {
    ObjectKind::parse(name).ok_or_else(|| usage(format!("unknown object `{name}`")))
}

/// Overlays `patch` onto `base` object by object.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// `base` with the named section of the config file applied on top.
fn section<T: Serialize + DeserializeOwned>(base: &T, file: Option<&Value>, name: &str) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    if let Some(patch) = file.and_then(|f| f.get(name)) {
        merge(&mut value, patch);
    }
    serde_json::from_value(value).map_err(|e| usage(format!("config section `{name}`: {e}")))
}

struct TrainSetup<M> {
    model: M,
    schedule: ScheduleConfig,
    train: TrainConfig,
}

fn train_setup<M: Serialize + DeserializeOwned>(
    ctx: &Context,
    a: &TrainArgs,
    model: M,
    steps: usize,
    train: TrainConfig,
) -> Result<TrainSetup<M>> {
    let file = match &a.config {
        Some(p) => {
            let path = ctx.input(p)?;
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str::<Value>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let model = section(&model, file.as_ref(), "model")?;
    let mut schedule = section(&ScheduleConfig::linear(steps), file.as_ref(), "schedule")?;
    let mut train = section(&train, file.as_ref(), "train")?;
    if let Some(t) = a.timesteps {
        schedule.steps = t;
    }
    if let Some(v) = a.steps {
        train.steps = v;
    }
    if let Some(v) = a.pretrain_steps {
        train.pretrain_steps = v;
    }
    if let Some(v) = a.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = a.lr {
        train.adam.lr = v;
    }
    if let Some(v) = a.seed {
        train.seed = v;
    }
    train.validate().map_err(|e| usage(e.to_string()))?;
    Ok(TrainSetup { model, schedule, train })
}

#[derive(Serialize)]
struct TrainSummary<'a, M> {
    kind: &'a str,
    sequences: usize,
    parameters: usize,
    model: &'a M,
    schedule: ScheduleConfig,
    train: &'a TrainConfig,
    eval_before: f64,
    eval_after: f64,
    relative_drop: f64,
}

fn progress(start: Instant, total: usize) -> impl FnMut(&hoi_core::models::StepLog) {
    move |s| {
        if s.step % 100 == 0 || s.step + 1 == total {
            log::info!(
                "step {}/{} [{}] loss {:.5} grad {:.3} ({:.1?})",
                s.step + 1,
                total,
                s.phase,
                s.loss,
                s.grad_norm,
                start.elapsed()
            );
        }
    }
}

fn finish_training<M: Serialize>(
    out: &Path,
    kind: &str,
    sequences: usize,
    parameters: usize,
    setup: &TrainSetup<M>,
    report: &TrainReport,
) -> Result<()> {
    fs::write(with_suffix(out, ".loss.csv"), report.to_csv())?;
    let summary = TrainSummary {
        kind,
        sequences,
        parameters,
        model: &setup.model,
        schedule: setup.schedule,
        train: &setup.train,
        eval_before: report.eval_before,
        eval_after: report.eval_after,
        relative_drop: report.relative_drop(),
    };
    write_json(&summary, Some(&with_suffix(out, ".report.json")))?;
    eprintln!(
        "{kind}: held-out loss {:.5} -> {:.5} ({:.1}% drop)",
        report.eval_before,
        report.eval_after,
        100.0 * report.relative_drop()
    );
    Ok(())
}

fn prepare_out(out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn train_hoi(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let preset = match a.preset {
        Preset::Toy => HoiConfig::toy(),
        Preset::Full => HoiConfig::default(),
    };
    let setup = train_setup(ctx, a, preset, DEFAULT_STEPS_HOI, TrainConfig::hoi())?;
    setup.model.validate().map_err(|e| usage(e.to_string()))?;
    let samples = ctx.dataset(&a.data)?;
    let examples: Vec<_> = samples.iter().map(HoiSample::hoi_example).collect();
    let (h, o) = HoiModel::fit_normalizers(&examples)?;
    let schedule = setup.schedule.build().map_err(|e| usage(e.to_string()))?;
    let mut model = HoiModel::new(setup.model.clone(), schedule, h, o, setup.train.seed)?;
    let start = Instant::now();
    let report = model.train(&examples, &setup.train, progress(start, setup.train.steps))?;
    eprintln!("trained {} steps in {:.1?}", setup.train.steps, start.elapsed());
    let out = ctx.path(&a.out);
    prepare_out(&out)?;
    save_hoi(&model, &out)?;
    finish_training(&out, "hoi", examples.len(), model.params.num_scalars(), &setup, &report)
}

pub fn train_apdm(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let preset = match a.preset {
        Preset::Toy => ApdmConfig::toy(),
        Preset::Full => ApdmConfig::default(),
    };
    let setup = train_setup(ctx, a, preset, DEFAULT_STEPS_AFFORDANCE, TrainConfig::apdm())?;
    setup.model.validate().map_err(|e| usage(e.to_string()))?;
    let samples = ctx.dataset(&a.data)?;
    let examples: Vec<_> = samples.iter().map(HoiSample::affordance_example).collect();
    let norm = ApdmModel::fit_normalizer(&examples)?;
    let schedule = setup.schedule.build().map_err(|e| usage(e.to_string()))?;
    let mut model = ApdmModel::new(setup.model.clone(), schedule, norm, setup.train.seed)?;
    let start = Instant::now();
    let report = model.train(&examples, &setup.train, progress(start, setup.train.steps))?;
    eprintln!("trained {} steps in {:.1?}", setup.train.steps, start.elapsed());
    let out = ctx.path(&a.out);
    prepare_out(&out)?;
    save_apdm(&model, &out)?;
    finish_training(&out, "apdm", examples.len(), model.params.num_scalars(), &setup, &report)
}

/// Where each requested sample takes its object and prompt from.
struct Source {
    request: GuidedRequest,
    length: Option<usize>,
    action: Option<Action>,
    kind: Option<ObjectKind>,
}

fn sources(ctx: &Context, a: &SampleArgs, with_apdm: bool) -> Result<Vec<Source>> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let seed = |k: usize| a.seed.wrapping_add(k as u64);
    if let Some(kind) = &a.object {
        let kind = parse_kind(kind)?;
        let prompt = a.prompt.clone().ok_or_else(|| usage("--object needs --prompt"))?;
        if !with_apdm {
            return Err(usage("--object needs --apdm, there is no reference affordance"));
        }
        return (0..a.count)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(a.shape_seed.wrapping_add(k as u64));
                let cloud = Shape::random(kind, &mut rng).cloud(&mut rng)?;
                Ok(Source {
                    request: GuidedRequest {
                        prompt: prompt.clone(),
                        cloud,
                        seed: seed(k),
                        record: None,
                    },
                    length: None,
                    action: None,
                    kind: Some(kind),
                })
            })
            .collect();
    }
    let from = a.from.as_ref().ok_or_else(|| usage("either --from or --object is required"))?;
    let data = ctx.dataset(from)?;
    if a.index + a.count > data.len() {
        return Err(usage(format!(
            "samples {}..{} requested but the dataset holds {}",
            a.index,
            a.index + a.count,
            data.len()
        )));
    }
    data[a.index..a.index + a.count]
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let record = if with_apdm {
                None
            } else {
                Some(postprocess_contacts(&s.affordance, &s.cloud, DEFAULT_CONTACT_OFFSET)?)
            };
            Ok(Source {
                request: GuidedRequest {
                    prompt: a.prompt.clone().unwrap_or_else(|| s.prompt.clone()),
                    cloud: s.cloud.clone(),
                    seed: seed(k),
                    record,
                },
                length: Some(s.len()),
                action: if a.prompt.is_none() { s.action } else { None },
                kind: s.object_kind,
            })
        })
        .collect()
}

pub fn sample(ctx: &Context, a: &SampleArgs) -> Result<()> {
    let hoi_path = ctx.input(&a.hoi)?;
    let hoi = load_hoi(&hoi_path).with_context(|| format!("loading {}", hoi_path.display()))?;
    let apdm = match &a.apdm {
        Some(p) => {
            let path = ctx.input(p)?;
            Some(load_apdm(&path).with_context(|| format!("loading {}", path.display()))?)
        }
        None => None,
    };
    let sources = sources(ctx, a, apdm.is_some())?;
    let length = a.length.or(sources[0].length).unwrap_or(196);
    if length < 2 {
        return Err(usage("--length must be at least 2"));
    }
    let cfg = GuidedSampleConfig {
        guidance: GuidanceConfig {
            tau1: a.tau1,
            tau2: a.tau2,
            alpha: a.alpha,
            beta: a.beta,
            ..GuidanceConfig::default()
        },
        enabled: a.guidance == Switch::On,
        sample: SampleOptions {
            cfg_scale: a.cfg_scale,
            ..SampleOptions::default()
        },
        affordance_cfg_scale: a.cfg_scale,
        contact_offset: DEFAULT_CONTACT_OFFSET,
        length,
    };
    cfg.guidance.validate().map_err(|e| usage(e.to_string()))?;

    let start = Instant::now();
    let mut samples = Vec::with_capacity(sources.len());
    let mut runs: Vec<RunReport> = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(SAMPLE_BATCH) {
        let requests: Vec<GuidedRequest> = chunk.iter().map(|s| s.request.clone()).collect();
        let outputs = guided_sample_batch(&hoi, apdm.as_ref(), &requests, &cfg)?;
        for (src, out) in chunk.iter().zip(outputs) {
            let k = samples.len();
            samples.push(HoiSample {
                id: format!("sample-{k:05}"),
                prompt: src.request.prompt.clone(),
                human: out.human,
                object: out.object,
                cloud: src.request.cloud.clone(),
                affordance: out.record,
                action: src.action,
                object_kind: src.kind,
            });
            runs.push(out.report);
        }
        log::info!("sampled {}/{} ({:.1?})", samples.len(), sources.len(), start.elapsed());
    }
    let out = ctx.path(&a.out);
    write_dataset(&samples, &out)?;
    write_json(&runs, Some(&out.join("report.json")))?;
    eprintln!("sampled {} sequences in {:.1?}", samples.len(), start.elapsed());
    Ok(())
}

#[derive(Serialize)]
struct Annotation {
    id: String,
    contact_joints: Vec<usize>,
    points: [[f64; 3]; 2],
    state: hoi_core::ObjectState,
}

#[derive(Serialize)]
struct AnnotateOutput {
    audit: AuditReport,
    records: Vec<Annotation>,
}

pub fn annotate(ctx: &Context, a: &AnnotateArgs) -> Result<()> {
    let data = ctx.dataset(&a.data)?;
    let records = data
        .iter()
        .map(|s| {
            let r = extract_gt_affordance(&s.human, &s.object, &s.cloud)?;
            let p = r.points();
            Ok(Annotation {
                id: s.id.clone(),
                contact_joints: r.active(),
                points: [[p[0].x, p[0].y, p[0].z], [p[1].x, p[1].y, p[1].z]],
                state: r.state,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let audit = audit_labels(&data)?;
    eprintln!("label agreement {}/{}", audit.agreeing, audit.checked);
    write_json(&AnnotateOutput { audit, records }, a.out.as_ref().map(|p| ctx.path(p)).as_deref())
}

fn items(data: &[HoiSample]) -> Vec<EvalItem<'_>> {
    data.iter()
        .map(|s| EvalItem {
            human: &s.human,
            object: &s.object,
            gt: &s.affordance,
        })
        .collect()
}

pub fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Result<()> {
    let real = ctx.dataset(&a.real)?;
    let generated = ctx.dataset(&a.generated)?;
    let encoder: Box<dyn MotionEncoder> = match a.encoder {
        EncoderKind::JointStats => Box::new(JointStatsEncoder),
        EncoderKind::Flatten => {
            let lens = real.iter().chain(&generated).map(HoiSample::len);
            if lens.clone().min() != lens.max() {
                return Err(usage("the flatten encoder needs sequences of equal length"));
            }
            Box::new(FlattenEncoder::default())
        }
    };
    let report = evaluate_metrics(&items(&real), &items(&generated), encoder.as_ref(), a.pairs, a.seed)?;
    if let Some(p) = &a.csv {
        let path = ctx.path(p);
        prepare_out(&path)?;
        let text = format!("{}\n{}\n", hoi_core::EvalReport::csv_header(), report.csv_row());
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    write_json(&report, a.out.as_ref().map(|p| ctx.path(p)).as_deref())
}

pub fn export(ctx: &Context, a: &ExportArgs) -> Result<()> {
    let data = ctx.dataset(&a.data)?;
    let Some(s) = data.get(a.index) else {
        return Err(usage(format!("index {} out of range, the dataset holds {}", a.index, data.len())));
    };
    let joints = recover_global_joints(&s.human);
    let contacts = object_contact_trajectory(&s.object, s.affordance.points());
    let mut text = String::from("frame");
    for j in 0..NUM_JOINTS {
        write!(text, ",j{j}_x,j{j}_y,j{j}_z")?;
    }
    text.push_str(",obj_rx,obj_ry,obj_rz,obj_tx,obj_ty,obj_tz,c0_x,c0_y,c0_z,c1_x,c1_y,c1_z\n");
    for (l, frame) in joints.frames.iter().enumerate() {
        write!(text, "{l}")?;
        for p in frame.iter() {
            write!(text, ",{},{},{}", p.x, p.y, p.z)?;
        }
        for v in s.object.pose(l).to_array() {
            write!(text, ",{v}")?;
        }
        for c in &contacts[l] {
            write!(text, ",{},{},{}", c.x, c.y, c.z)?;
        }
        text.push('\n');
    }
    if joints.frames.is_empty() {
        bail!("sample {} has no frames", s.id);
    }
    let out = ctx.path(&a.out);
    prepare_out(&out)?;
    fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
