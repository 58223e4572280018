//! Strict `key = value` configuration with `[section]` headers.
//!
//! `task` and `methods` are required; every other key falls back to the
//! task's default (see [`help_text`]). Unknown keys, repeated keys and
//! malformed values are errors naming the key and line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use transmat::models::{ConverterSpec, ModelSpec};
use transmat::pipeline::{ExperimentConfig, Method, Mode, PretrainTarget, StageConfig, Task};

use crate::error::{read, CliError, CliResult};

/// An experiment plus the file locations that come with it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(task: Task) -> Self {
        RunConfig { experiment: ExperimentConfig::new(task), data: None, out: None }
    }
}

const STAGES: [&str; 4] = ["base", "pretrain", "correspondence", "finetune"];

/// Every recognized key: section, name and a short description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("", "task", "rotated-images | toy-sequences | lane-change (required)"),
    ("", "methods", "comma list of finetune, coral, imp, ours, ours-T1, ours-T2, mode{0,1,2}-T{1,2} (required)"),
    ("", "b_values", "ascending limits on the target training set"),
    ("", "seeds", "comma list of seeds"),
    ("", "n_corr", "correspondence partners per target sample"),
    ("", "mode", "fine-tuning mode of `ours`: 0, 1 or 2"),
    ("", "pretrain_target", "T1 (identity) or T2 (domain knowledge)"),
    ("", "lambda_corr", "weight of the correspondence loss while fine-tuning"),
    ("", "squared_loss", "squared instead of plain L2 correspondence distance"),
    ("", "ridge", "CORAL covariance regularizer"),
    ("", "test_fraction", "share of each domain held out for testing"),
    ("", "converter_learning_rate", "converter learning rate while fine-tuning"),
    ("", "samples_per_point", "converted samples recorded per grid point"),
    ("", "model", "base model descriptor, or `default`"),
    ("", "converter", "matrix converter descriptor, or `default`"),
    ("", "direct_converter", "direct converter descriptor, or `default`"),
    ("stage", "epochs", "training epochs"),
    ("stage", "learning_rate", "Adam step size"),
    ("stage", "batch_size", "samples per update"),
    ("stage", "patience", "epochs without improvement before stopping; 0 disables"),
    ("stage", "validation_fraction", "share held out for early stopping"),
    ("stage", "clip_norm", "global gradient-norm clip, or `none`"),
    ("images", "side", "glyph image side length"),
    ("images", "count_a", "domain A images"),
    ("images", "count_b", "domain B images"),
    ("sequences", "count_a", "domain A sequences"),
    ("sequences", "count_b", "domain B sequences"),
    ("sequences", "frame_rate", "Hz"),
    ("sequences", "length_s", "sequence length in seconds"),
    ("sequences", "p_lane_change", "probability that a sequence contains a lane change"),
    ("sequences", "transition_s", "duration of the lateral move"),
    ("sequences", "sigma_noise", "noise on m in domain B"),
    ("sequences", "sigma_noise_velocity", "noise on v in domain B"),
    ("sequences", "features", "1 (m) or 2 (m, v)"),
    ("sequences", "offset_min", "lowest lane-following offset"),
    ("sequences", "offset_max", "highest lane-following offset"),
    ("sequences", "min_exec_s", "earliest boundary crossing"),
    ("sequences", "min_tail_s", "latest boundary crossing, before the end"),
    ("sequences", "horizon_s", "labeled time before a crossing"),
    ("sequences", "ignore_s", "zero-weight gap before the labeled window"),
    ("sequences", "post_ignore_s", "zero-weight time after a crossing"),
    ("sequences", "alpha", "exponential emphasis of frames near the crossing"),
    ("sequences", "merge_directions", "balance left and right as one class"),
    ("paths", "data", "directory with input data; synthesized when unset"),
    ("paths", "out", "output directory"),
];

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn stage_mut<'a>(c: &'a mut ExperimentConfig, section: &str) -> Option<&'a mut StageConfig> {
    Some(match section {
        "base" => &mut c.base,
        "pretrain" => &mut c.pretrain,
        "correspondence" => &mut c.correspondence,
        "finetune" => &mut c.finetune,
        _ => return None,
    })
}

fn mode_name(m: Mode) -> String {
    m.name().to_string()
}

/// Current value of `key` in `section`, in the syntax accepted by [`set`].
pub fn get(cfg: &RunConfig, section: &str, key: &str) -> Option<String> {
    let c = &cfg.experiment;
    let g = &c.sequences.generator;
    let l = &c.sequences.labels;
    if STAGES.contains(&section) {
        let s = match section {
            "base" => &c.base,
            "pretrain" => &c.pretrain,
            "correspondence" => &c.correspondence,
            _ => &c.finetune,
        };
        return Some(match key {
            "epochs" => s.epochs.to_string(),
            "learning_rate" => s.learning_rate.to_string(),
            "batch_size" => s.batch_size.to_string(),
            "patience" => s.patience.to_string(),
            "validation_fraction" => s.validation_fraction.to_string(),
            "clip_norm" => s.clip_norm.map_or("none".into(), |v| v.to_string()),
            _ => return None,
        });
    }
    Some(match (section, key) {
        ("", "task") => c.task.name().into(),
        ("", "methods") => c.methods.iter().map(Method::name).collect::<Vec<_>>().join(", "),
        ("", "b_values") => list(&c.b_values),
        ("", "seeds") => list(&c.seeds),
        ("", "n_corr") => c.n_corr.to_string(),
        ("", "mode") => mode_name(c.mode),
        ("", "pretrain_target") => c.pretrain_target.name().into(),
        ("", "lambda_corr") => c.lambda_corr.to_string(),
        ("", "squared_loss") => c.squared_loss.to_string(),
        ("", "ridge") => c.ridge.to_string(),
        ("", "test_fraction") => c.test_fraction.to_string(),
        ("", "converter_learning_rate") => c.converter_learning_rate.to_string(),
        ("", "samples_per_point") => c.samples_per_point.to_string(),
        ("", "model") => c.model.as_ref().map_or("default".into(), ToString::to_string),
        ("", "converter") => c.converter.as_ref().map_or("default".into(), ToString::to_string),
        ("", "direct_converter") => c.direct_converter.as_ref().map_or("default".into(), ToString::to_string),
        ("images", "side") => c.images.side.to_string(),
        ("images", "count_a") => c.images.count_a.to_string(),
        ("images", "count_b") => c.images.count_b.to_string(),
        ("sequences", "count_a") => c.sequences.count_a.to_string(),
        ("sequences", "count_b") => c.sequences.count_b.to_string(),
        ("sequences", "frame_rate") => g.frame_rate.to_string(),
        ("sequences", "length_s") => g.length_s.to_string(),
        ("sequences", "p_lane_change") => g.p_lane_change.to_string(),
        ("sequences", "transition_s") => g.transition_s.to_string(),
        ("sequences", "sigma_noise") => g.sigma_noise.to_string(),
        ("sequences", "sigma_noise_velocity") => g.sigma_noise_velocity.to_string(),
        ("sequences", "features") => g.features.to_string(),
        ("sequences", "offset_min") => g.offset_range.0.to_string(),
        ("sequences", "offset_max") => g.offset_range.1.to_string(),
        ("sequences", "min_exec_s") => g.min_exec_s.to_string(),
        ("sequences", "min_tail_s") => g.min_tail_s.to_string(),
        ("sequences", "horizon_s") => l.horizon_s.to_string(),
        ("sequences", "ignore_s") => l.ignore_s.to_string(),
        ("sequences", "post_ignore_s") => l.post_ignore_s.to_string(),
        ("sequences", "alpha") => l.alpha.to_string(),
        ("sequences", "merge_directions") => l.merge_directions.to_string(),
        ("paths", "data") => cfg.data.as_ref().map_or(String::new(), |p| p.display().to_string()),
        ("paths", "out") => cfg.out.as_ref().map_or(String::new(), |p| p.display().to_string()),
        _ => return None,
    })
}

fn num<T: std::str::FromStr>(v: &str, what: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("expected {what}, got `{v}`"))
}

fn float(v: &str) -> Result<f64, String> {
    let x: f64 = num(v, "a number")?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("expected a finite number, got `{v}`"))
    }
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn items(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn descriptor<T>(v: &str, parse: impl Fn(&str) -> transmat::Result<T>) -> Result<Option<T>, String> {
    if v == "default" {
        Ok(None)
    } else {
        parse(v).map(Some).map_err(|e| e.to_string())
    }
}

/// Sets `key` in `section`. `Ok(false)` means the key is unknown.
pub fn set(cfg: &mut RunConfig, section: &str, key: &str, v: &str) -> Result<bool, String> {
    if let Some(s) = stage_mut(&mut cfg.experiment, section) {
        match key {
            "epochs" => s.epochs = num(v, "an integer")?,
            "learning_rate" => s.learning_rate = float(v)?,
            "batch_size" => s.batch_size = num(v, "an integer")?,
            "patience" => s.patience = num(v, "an integer")?,
            "validation_fraction" => s.validation_fraction = float(v)?,
            "clip_norm" => s.clip_norm = if v == "none" { None } else { Some(float(v)?) },
            _ => return Ok(false),
        }
        return Ok(true);
    }
    let c = &mut cfg.experiment;
    let g = &mut c.sequences.generator;
    let l = &mut c.sequences.labels;
    match (section, key) {
        ("", "task") => {
            let t = Task::parse(v).ok_or_else(|| format!("unknown task `{v}`"))?;
            if t != c.task {
                return Err("task must be set before other keys".into());
            }
        }
        ("", "methods") => {
            c.methods = items(v).map(|m| Method::parse(m).ok_or_else(|| format!("unknown method `{m}`"))).collect::<Result<_, _>>()?
        }
        ("", "b_values") => c.b_values = items(v).map(|b| num(b, "an integer")).collect::<Result<_, _>>()?,
        ("", "seeds") => c.seeds = items(v).map(|s| num(s, "an integer")).collect::<Result<_, _>>()?,
        ("", "n_corr") => c.n_corr = num(v, "an integer")?,
        ("", "mode") => {
            c.mode = match v {
                "0" => Mode::Mode0,
                "1" => Mode::Mode1,
                "2" => Mode::Mode2,
                _ => return Err(format!("expected 0, 1 or 2, got `{v}`")),
            }
        }
        ("", "pretrain_target") => {
            c.pretrain_target = PretrainTarget::parse(v).ok_or_else(|| format!("expected T1 or T2, got `{v}`"))?
        }
        ("", "lambda_corr") => c.lambda_corr = float(v)?,
        ("", "squared_loss") => c.squared_loss = boolean(v)?,
        ("", "ridge") => c.ridge = float(v)?,
        ("", "test_fraction") => c.test_fraction = float(v)?,
        ("", "converter_learning_rate") => c.converter_learning_rate = float(v)?,
        ("", "samples_per_point") => c.samples_per_point = num(v, "an integer")?,
        ("", "model") => c.model = descriptor(v, ModelSpec::parse)?,
        ("", "converter") => c.converter = descriptor(v, ConverterSpec::parse)?,
        ("", "direct_converter") => c.direct_converter = descriptor(v, ConverterSpec::parse)?,
        ("images", "side") => c.images.side = num(v, "an integer")?,
        ("images", "count_a") => c.images.count_a = num(v, "an integer")?,
        ("images", "count_b") => c.images.count_b = num(v, "an integer")?,
        ("sequences", "count_a") => c.sequences.count_a = num(v, "an integer")?,
        ("sequences", "count_b") => c.sequences.count_b = num(v, "an integer")?,
        ("sequences", "frame_rate") => g.frame_rate = float(v)?,
        ("sequences", "length_s") => g.length_s = float(v)?,
        ("sequences", "p_lane_change") => g.p_lane_change = float(v)?,
        ("sequences", "transition_s") => g.transition_s = float(v)?,
        ("sequences", "sigma_noise") => g.sigma_noise = float(v)?,
        ("sequences", "sigma_noise_velocity") => g.sigma_noise_velocity = float(v)?,
        ("sequences", "features") => g.features = num(v, "an integer")?,
        ("sequences", "offset_min") => g.offset_range.0 = float(v)?,
        ("sequences", "offset_max") => g.offset_range.1 = float(v)?,
        ("sequences", "min_exec_s") => g.min_exec_s = float(v)?,
        ("sequences", "min_tail_s") => g.min_tail_s = float(v)?,
        ("sequences", "horizon_s") => l.horizon_s = float(v)?,
        ("sequences", "ignore_s") => l.ignore_s = float(v)?,
        ("sequences", "post_ignore_s") => l.post_ignore_s = float(v)?,
        ("sequences", "alpha") => l.alpha = float(v)?,
        ("sequences", "merge_directions") => l.merge_directions = boolean(v)?,
        ("paths", "data") => cfg.data = Some(PathBuf::from(v)),
        ("paths", "out") => cfg.out = Some(PathBuf::from(v)),
        _ => return Ok(false),
    }
    Ok(true)
}

/// Every `(section, key)` pair, with stage keys expanded per stage.
pub fn all_keys() -> Vec<(&'static str, &'static str)> {
    let mut out = Vec::new();
    for &(section, key, _) in KEYS {
        if section == "stage" {
            out.extend(STAGES.iter().map(|s| (*s, key)));
        } else {
            out.push((section, key));
        }
    }
    out
}

struct Entry {
    line: usize,
    section: String,
    key: String,
    value: String,
}

fn lex(text: &str) -> CliResult<Vec<Entry>> {
    let mut section = String::new();
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        if let Some(name) = t.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| CliError::Config {
                line,
                key: t.into(),
                message: "unterminated section header".into(),
            })?;
            let name = name.trim();
            let known = STAGES.contains(&name) || ["images", "sequences", "paths"].contains(&name);
            if !known {
                return Err(CliError::Config { line, key: format!("[{name}]"), message: "unknown section".into() });
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = t.split_once('=').ok_or_else(|| CliError::Config {
            line,
            key: t.into(),
            message: "expected `key = value`".into(),
        })?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if let Some(prev) = out.iter().find(|e| e.section == section && e.key == key) {
            return Err(CliError::Config { line, key, message: format!("already set on line {}", prev.line) });
        }
        out.push(Entry { line, section: section.clone(), key, value });
    }
    Ok(out)
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

/// Parses configuration text. Task defaults apply to every key not given.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let entries = lex(text)?;
    let find = |k: &str| entries.iter().find(|e| e.section.is_empty() && e.key == k);
    let task_entry = find("task").ok_or_else(|| CliError::MissingKey("`task` is required".into()))?;
    if find("methods").is_none() {
        return Err(CliError::MissingKey("`methods` is required".into()));
    }
    let task = Task::parse(&task_entry.value).ok_or_else(|| CliError::Config {
        line: task_entry.line,
        key: "task".into(),
        message: format!("unknown task `{}`", task_entry.value),
    })?;
    let mut cfg = RunConfig::new(task);
    // features decide several lane-change defaults, so the task's defaults
    // are fixed before any other key is applied
    for e in &entries {
        let key = qualified(&e.section, &e.key);
        match set(&mut cfg, &e.section, &e.key, &e.value) {
            Ok(true) => {}
            Ok(false) => return Err(CliError::Config { line: e.line, key, message: "unknown key".into() }),
            Err(message) => return Err(CliError::Config { line: e.line, key, message }),
        }
    }
    cfg.experiment.validate()?;
    cfg.experiment.sequences.generator.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> CliResult<RunConfig> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Format(format!("{}: not UTF-8", path.display())))?;
    parse_config(&text)
}

/// Renders a complete configuration that [`parse_config`] reads back unchanged.
pub fn render(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let mut current = "";
    for (section, key) in all_keys() {
        let value = get(cfg, section, key).unwrap_or_default();
        if section == "paths" && value.is_empty() {
            continue;
        }
        if section != current {
            let _ = writeln!(s, "\n[{section}]");
            current = section;
        }
        let _ = writeln!(s, "{key} = {value}");
    }
    s.trim_start().to_string()
}

/// Key reference with per-task defaults, shown by `--help`.
pub fn help_text() -> String {
    let tasks = [Task::RotatedImages, Task::ToySequences, Task::LaneChange];
    let defaults: Vec<RunConfig> = tasks.iter().map(|&t| RunConfig::new(t)).collect();
    let mut s = String::from(
        "CONFIGURATION (`key = value` lines; `[section]` headers; `#` comments)\n\
         Defaults are listed per task when they differ (images / toy / lane-change).\n",
    );
    let mut current = "-";
    for &(section, key, doc) in KEYS {
        if section != current {
            let title = match section {
                "" => "top level".to_string(),
                "stage" => format!("[{}]", STAGES.join("], [")),
                other => format!("[{other}]"),
            };
            let _ = writeln!(s, "\n  {title}");
            current = section;
        }
        let lookup = if section == "stage" { STAGES.to_vec() } else { vec![section] };
        let mut shown = Vec::new();
        for sec in lookup {
            let vals: Vec<String> = defaults.iter().map(|d| get(d, sec, key).unwrap_or_default()).collect();
            let v = if vals.iter().all(|v| v == &vals[0]) { vals[0].clone() } else { vals.join(" / ") };
            let v = if v.is_empty() { "unset".to_string() } else { v };
            if section == "stage" {
                shown.push(format!("{sec}: {v}"));
            } else {
                shown.push(v);
            }
        }
        let required = key == "task" || key == "methods";
        let default = if required { String::new() } else { format!(" [default: {}]", shown.join("; ")) };
        let _ = writeln!(s, "    {key:<24} {doc}{default}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("task = toy-sequences\nmethods = finetune, ours-T2\n").unwrap();
        let mut expect = RunConfig::new(Task::ToySequences);
        expect.experiment.methods = vec![Method::Finetune, Method::parse("ours-T2").unwrap()];
        assert_eq!(cfg, expect);
        assert_eq!(cfg.experiment.n_corr, 5);
    }

    #[test]
    fn misspelled_key_names_key_and_line() {
        let err = parse_config("task = toy-sequences\nmethods = finetune\n\n[finetune]\nepochs = 3\nlearnig_rate = 0.1\n")
            .unwrap_err();
        match err {
            CliError::Config { line, key, .. } => {
                assert_eq!(line, 6);
                assert_eq!(key, "finetune.learnig_rate");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn type_mismatch_and_missing_keys() {
        let err = parse_config("task = toy-sequences\nmethods = finetune\nn_corr = five\n").unwrap_err();
        assert!(matches!(err, CliError::Config { line: 3, ref key, .. } if key == "n_corr"), "{err}");
        assert!(matches!(parse_config("methods = finetune\n"), Err(CliError::MissingKey(_))));
        assert!(matches!(parse_config("task = toy-sequences\n"), Err(CliError::MissingKey(_))));
        assert!(parse_config("task = toy-sequences\nmethods = finetune\nseeds = 1\nseeds = 2\n").is_err());
        assert!(parse_config("task = toy-sequences\nmethods = finetune\n[nowhere]\n").is_err());
    }

    #[test]
    fn rendered_configs_read_back() {
        for t in [Task::RotatedImages, Task::ToySequences, Task::LaneChange] {
            let mut cfg = RunConfig::new(t);
            cfg.experiment.methods = vec![Method::Finetune, Method::Coral, Method::Imp, Method::parse("mode2-T1").unwrap()];
            cfg.experiment.finetune.clip_norm = Some(2.5);
            cfg.out = Some("results".into());
            assert_eq!(parse_config(&render(&cfg)).unwrap(), cfg);
        }
    }

    #[test]
    fn every_key_is_documented_and_readable() {
        let cfg = RunConfig::new(Task::ToySequences);
        for (section, key) in all_keys() {
            assert!(get(&cfg, section, key).is_some(), "{section}.{key}");
        }
        let help = help_text();
        for &(_, key, _) in KEYS {
            assert!(help.contains(key), "{key}");
        }
    }
}
