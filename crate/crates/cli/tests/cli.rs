use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use transmat::pipeline::run_experiment;
use transmat_cli::config::parse_config;
use transmat_cli::report::{converted_samples_csv, results_csv};
use transmat_cli::runner::run;

const SMALL_IMAGES: &str = "\
task = rotated-images
methods = finetune, ours-T2, coral
b_values = 10, 20
seeds = 3

[images]
count_a = 60
count_b = 60

[base]
epochs = 2
[pretrain]
epochs = 1
[correspondence]
epochs = 1
[finetune]
epochs = 1
";

const SMALL_TOY: &str = "\
task = toy-sequences
methods = finetune, ours-T2
b_values = 8
seeds = 5

[sequences]
count_a = 20
count_b = 20
length_s = 10

[base]
epochs = 1
[pretrain]
epochs = 1
[correspondence]
epochs = 1
[finetune]
epochs = 1
";

fn transmat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transmat")).args(args).output().expect("spawn transmat")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.conf");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn transfer(config: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["transfer", "--config", config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    transmat(&args)
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

#[test]
fn repeated_runs_write_identical_files() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), SMALL_IMAGES);
    let (one, two) = (tmp.path().join("one"), tmp.path().join("two"));
    assert_ok(&transfer(&conf, &one, &[]));
    assert_ok(&transfer(&conf, &two, &[]));
    for f in ["results.csv", "report.json", "converted_samples.csv"] {
        assert_eq!(std::fs::read(one.join(f)).unwrap(), std::fs::read(two.join(f)).unwrap(), "{f}");
    }
    let csv = String::from_utf8(std::fs::read(one.join("results.csv")).unwrap()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("b,method,frequency,delay,miss,score,accuracy,seed"));
    // three reference rows, then 2 limits x 3 methods
    assert_eq!(lines.count(), 3 + 6);
}

#[test]
fn parallel_grid_matches_sequential_run() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), SMALL_IMAGES);
    let (serial, parallel) = (tmp.path().join("serial"), tmp.path().join("parallel"));
    assert_ok(&transfer(&conf, &serial, &["--jobs", "1"]));
    assert_ok(&transfer(&conf, &parallel, &["--jobs", "4"]));
    for f in ["results.csv", "report.json", "converted_samples.csv"] {
        assert_eq!(std::fs::read(serial.join(f)).unwrap(), std::fs::read(parallel.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn runner_agrees_with_library_run() {
    // two seeds, so reference rows and grid points interleave
    let text = SMALL_TOY.replace("seeds = 5", "seeds = 4, 9").replace("count_a = 20\ncount_b = 20", "count_a = 30\ncount_b = 40");
    let cfg = parse_config(&text).unwrap().experiment;
    assert_eq!(cfg.seeds, [4, 9]);
    let direct = run_experiment(&cfg, None, None).unwrap();
    let pooled = run(&cfg, None, None, 3).unwrap();
    assert_eq!(results_csv(&direct).unwrap(), results_csv(&pooled).unwrap());
    // rows hold NaN partner values, so compare their serialized form
    assert_eq!(converted_samples_csv(&direct).unwrap(), converted_samples_csv(&pooled).unwrap());
}

#[test]
fn failed_grid_points_give_nonzero_exit() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), &SMALL_IMAGES.replace("b_values = 10, 20", "b_values = 10, 5000"));
    let o = transfer(&conf, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().filter(|l| l.starts_with("failed: seed=3 b=5000")).count(), 3, "{err}");
    // the points that could run are still reported
    let csv = std::fs::read_to_string(tmp.path().join("out/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 + 3);
}

#[test]
fn config_errors_name_line_and_key() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), &SMALL_IMAGES.replace("count_b = 60", "count_bb = 60"));
    let o = transfer(&conf, &tmp.path().join("out"), &[]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 8") && err.contains("images.count_bb"), "{err}");
}

#[test]
fn generated_data_and_saved_base_feed_a_transfer() {
    let tmp = TempDir::new().unwrap();
    let conf = write_config(tmp.path(), SMALL_TOY);
    let data = tmp.path().join("data");
    let d = data.to_str().unwrap();
    assert_ok(&transmat(&["gen-toy", "--config", &conf, "--out", d]));
    assert!(data.join("a.seq").exists() && data.join("b.seq").exists());

    let base_dir = tmp.path().join("base");
    assert_ok(&transmat(&["train-base", "--config", &conf, "--data", d, "--out", base_dir.to_str().unwrap()]));
    let base = base_dir.join("base.tmck");
    let b = base.to_str().unwrap();

    let o = transmat(&["eval", "--config", &conf, "--data", d, "--model", b]);
    assert_ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("A test: frequency") && text.contains("B test: frequency"), "{text}");

    // files written from the generator equal the generator's own output
    let from_files = tmp.path().join("from_files");
    let synthetic = tmp.path().join("synthetic");
    assert_ok(&transfer(&conf, &from_files, &["--data", d, "--base", b]));
    assert_ok(&transfer(&conf, &synthetic, &["--base", b]));
    assert_eq!(
        std::fs::read(from_files.join("results.csv")).unwrap(),
        std::fs::read(synthetic.join("results.csv")).unwrap()
    );

    let o = transmat(&["report", from_files.to_str().unwrap()]);
    assert_ok(&o);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.lines().next().unwrap().split_whitespace().eq(["b", "method", "frequency", "delay", "miss", "score", "accuracy", "seed"]));
    assert!(table.contains("A on B"));
}

#[test]
fn help_lists_configuration_keys() {
    let o = transmat(&["--help"]);
    assert_ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["learning_rate", "lambda_corr", "sigma_noise", "merge_directions"] {
        assert!(text.contains(key), "{key}");
    }
}
